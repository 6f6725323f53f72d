//! Writes a small paired music/dance corpus with a manifest and reads it back.
//!
//! ```text
//! cargo run --example synthetic_corpus [out_dir]
//! ```

use std::path::PathBuf;

use lodgepp::motion::io::read_motion;
use lodgepp::motion::Skeleton;
use lodgepp::music::read_wav;
use lodgepp::pipeline::{synth_data, SynthOptions};

fn main() -> lodgepp::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("lodgepp-synthetic"));
    let opts = SynthOptions {
        count: 4,
        duration_s: 6.0,
        seed: 7,
        ..Default::default()
    };
    let manifest = synth_data(&dir, &opts, &Skeleton::default())?;
    println!("wrote {} pairs to {}", manifest.pairs.len(), dir.display());
    for (i, entry) in manifest.pairs.iter().enumerate() {
        let audio = read_wav(&manifest.audio_path(&dir, i))?;
        let motion = read_motion(&manifest.motion_path(&dir, i))?;
        println!(
            "{:<10} genre {} {:>5.1} bpm  {:.1} s audio  {} frames  {} beats",
            entry.name,
            entry.genre,
            entry.bpm,
            audio.duration(),
            motion.len(),
            entry.beats.len()
        );
    }
    Ok(())
}
