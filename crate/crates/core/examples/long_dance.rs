//! Generates a long dance in parallel segments with an oracle denoiser and
//! checks that worker count does not change the result.
//!
//! ```text
//! cargo run --release --example long_dance [out.bvh]
//! ```

use std::time::Instant;

use lodgepp::choreo::{extract_primitives, GenreId};
use lodgepp::metrics::foot_skating_ratio;
use lodgepp::body::penetration_ratio;
use lodgepp::motion::bvh::write_bvh;
use lodgepp::motion::Skeleton;
use lodgepp::music::extract_music_features;
use lodgepp::pddm::{generate_long, DiffusionSchedule, Guidance, LongOptions, OracleDenoiser};
use lodgepp::pipeline::{synth_pair, SynthOptions};

fn main() -> lodgepp::Result<()> {
    let skeleton = Skeleton::default();
    let n = 128;
    let opts = SynthOptions {
        count: 1,
        duration_s: 35.0,
        seed: 4,
        ..Default::default()
    };
    let pair = synth_pair(&opts, 0, &skeleton)?;
    let len = pair.motion.len() / n * n;
    let music = extract_music_features(&pair.audio)?.slice(0, len);
    let reference = pair.motion.slice(0, len);
    let prims = extract_primitives(&reference, &skeleton, &music.beats(), n)?;
    println!("{len} frames, {} segments, {} key motions", len / n, prims.key_motions.len());

    let schedule = DiffusionSchedule::default();
    let oracle = OracleDenoiser::new(reference.data.clone());
    let mut outputs = Vec::new();
    for workers in [1, 4] {
        let options = LongOptions {
            segment_length: n,
            worker_count: workers,
            seed: 4,
            guidance: Some(Guidance::new(skeleton.clone(), schedule.steps)),
            hard_key_motions: false,
        };
        let start = Instant::now();
        let dance = generate_long(&music, GenreId(pair.genre), &prims, &schedule, &oracle, &options)?;
        println!("{workers} worker(s): {:.2} s", start.elapsed().as_secs_f64());
        outputs.push(dance);
    }
    println!("identical across worker counts: {}", outputs[0].data == outputs[1].data);
    let dance = &outputs[0];
    println!(
        "foot skating {:.2}%, penetration {:.2}%",
        foot_skating_ratio(dance, &skeleton)?,
        penetration_ratio(dance, &skeleton)
    );
    if let Some(path) = std::env::args().nth(1) {
        write_bvh(path.as_ref(), dance, &skeleton)?;
        println!("wrote {path}");
    }
    Ok(())
}
