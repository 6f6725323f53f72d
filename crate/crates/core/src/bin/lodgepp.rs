use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lodgepp::pipeline::{self, GenerateOptions, PipelineConfig, SynthOptions};
use lodgepp::{Error, Result};

#[derive(Parser)]
#[command(name = "lodgepp", version, about = "Music-to-long-dance generation")]
struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Config override, repeatable: --set key=value.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed; wins over the config file and LODGE_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Segment sampling threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Vq,
    Gpt,
    Pddm,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic paired corpus of click tracks and beat-aligned dances.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 90.0)]
        bpm_min: f64,
        #[arg(long, default_value_t = 130.0)]
        bpm_max: f64,
        #[arg(long, default_value_t = 8.0)]
        duration: f64,
        #[arg(long, default_value_t = 4)]
        genres: usize,
    },
    /// Extract music features from a .wav or every pair of a corpus.
    Features {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on a corpus and write its checkpoint.
    Train {
        #[arg(value_enum)]
        stage: Stage,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a dance for a music file.
    Generate {
        music: PathBuf,
        #[arg(long, default_value = "0")]
        genre: String,
        #[arg(long)]
        out: PathBuf,
        /// Reference motion that stands in for every trained model.
        #[arg(long)]
        oracle: Option<PathBuf>,
        #[arg(long)]
        bvh: Option<PathBuf>,
    },
    /// Compute the metric report for generated against reference motions.
    Evaluate {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Directory with <stem>.mfeat or <stem>.wav per generated file, for BAS.
        #[arg(long)]
        music: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a .mseq motion to BVH.
    ExportBvh { input: PathBuf, out: PathBuf },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_env()?;
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::SynthData {
            out,
            count,
            bpm_min,
            bpm_max,
            duration,
            genres,
        } => {
            let opts = SynthOptions {
                count,
                bpm_range: (bpm_min, bpm_max),
                duration_s: duration,
                genre_count: genres,
                seed: cfg.seed,
            };
            let manifest = pipeline::synth_data(&out, &opts, &cfg.load_skeleton()?)?;
            println!("wrote {} pairs to {}", manifest.pairs.len(), out.display());
        }
        Command::Features { input, out } => {
            let written = pipeline::cmd_features(&input, &out)?;
            println!("wrote {} feature files to {}", written.len(), out.display());
        }
        Command::Train { stage, corpus, out } => {
            let summary = match stage {
                Stage::Vq => pipeline::cmd_train_vq(&corpus, &cfg, &out)?,
                Stage::Gpt => pipeline::cmd_train_gpt(&corpus, &cfg, &out)?,
                Stage::Pddm => pipeline::cmd_train_pddm(&corpus, &cfg, &out)?,
            };
            println!(
                "loss {:.5} -> {:.5}; checkpoint {}",
                summary.start_loss,
                summary.end_loss,
                summary.checkpoint.display()
            );
        }
        Command::Generate {
            music,
            genre,
            out,
            oracle,
            bvh,
        } => {
            let opts = GenerateOptions { genre, oracle, bvh };
            let report = pipeline::cmd_generate(&music, &cfg, &opts, &out)?;
            println!("{} frames, {} key motions -> {}", report.frames, report.key_motions, out.display());
            print!("{}", report.timing_table());
        }
        Command::Evaluate {
            generated,
            reference,
            music,
            out,
        } => {
            let report = pipeline::cmd_evaluate(&generated, &reference, music.as_deref(), &cfg)?;
            let json = report.to_json()?;
            if let Some(path) = out {
                std::fs::write(&path, &json).map_err(|e| Error::io(&path, e))?;
            }
            println!("{json}");
            print!("{}", report.to_table());
        }
        Command::ExportBvh { input, out } => pipeline::cmd_export_bvh(&input, &out, &cfg)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
