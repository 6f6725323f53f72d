//! Runs the whole pipeline on a tiny synthetic corpus: train the token
//! codebook, the choreography GPT and the diffusion refiner, then dance to a
//! held-out track.
//!
//! ```text
//! cargo run --release --example toy_pipeline
//! ```

use lodgepp::motion::Skeleton;
use lodgepp::pipeline::{
    cmd_evaluate, cmd_generate, cmd_train_gpt, cmd_train_pddm, cmd_train_vq, synth_data, GenerateOptions,
    PipelineConfig, SynthOptions,
};

fn main() -> lodgepp::Result<()> {
    let root = std::env::temp_dir().join("lodgepp-toy");
    let (train, held, out) = (root.join("train"), root.join("held"), root.join("generated"));
    let skeleton = Skeleton::default();
    let corpus = |count, seed, duration_s| SynthOptions {
        count,
        seed,
        duration_s,
        ..Default::default()
    };
    synth_data(&train, &corpus(16, 1, 8.0), &skeleton)?;
    let manifest = synth_data(&held, &corpus(2, 99, 9.0), &skeleton)?;

    let mut cfg = PipelineConfig {
        vq_steps: 600,
        gpt_steps: 200,
        pddm_steps: 150,
        hard_key_motions: true,
        ..Default::default()
    };
    for (stage, path) in [("vq", root.join("vq.ckpt")), ("gpt", root.join("gpt.ckpt")), ("pddm", root.join("pddm.ckpt"))] {
        let summary = match stage {
            "vq" => cmd_train_vq(&train, &cfg, &path)?,
            "gpt" => cmd_train_gpt(&train, &cfg, &path)?,
            _ => cmd_train_pddm(&train, &cfg, &path)?,
        };
        println!("{stage:<4} loss {:.4} → {:.4}", summary.start_loss, summary.end_loss);
        match stage {
            "vq" => cfg.vq_checkpoint = Some(path),
            "gpt" => cfg.gpt_checkpoint = Some(path),
            _ => cfg.pddm_checkpoint = Some(path),
        }
    }

    for (i, entry) in manifest.pairs.iter().enumerate() {
        let opts = GenerateOptions {
            genre: entry.genre.to_string(),
            ..Default::default()
        };
        let report = cmd_generate(&manifest.audio_path(&held, i), &cfg, &opts, &out.join(format!("{}.mseq", entry.name)))?;
        println!("{}: {} frames, {} key motions", entry.name, report.frames, report.key_motions);
        print!("{}", report.timing_table());
    }
    let eval = cmd_evaluate(&out, &held, Some(&held), &cfg)?;
    println!("{}", eval.to_table());
    Ok(())
}
