//! Detects dance beats, extracts key and boundary motions and lays them on a
//! primitive canvas.
//!
//! ```text
//! cargo run --example dance_primitives
//! ```

use lodgepp::choreo::{build_primitive_canvas, detect_dance_beats, extract_primitives};
use lodgepp::metrics::{beat_align_score, BAS_SIGMA};
use lodgepp::motion::Skeleton;
use lodgepp::music::extract_music_features;
use lodgepp::pipeline::{synth_pair, SynthOptions};

fn main() -> lodgepp::Result<()> {
    let skeleton = Skeleton::default();
    let n = 128;
    let opts = SynthOptions {
        count: 2,
        duration_s: 9.0,
        seed: 21,
        ..Default::default()
    };
    let pair = synth_pair(&opts, 1, &skeleton)?;
    let len = pair.motion.len() / n * n;
    let motion = pair.motion.slice(0, len);
    let music = extract_music_features(&pair.audio)?.slice(0, len);
    let grid = music.beats();

    let dance_beats = detect_dance_beats(&motion, &skeleton)?;
    let music_beats: Vec<usize> = grid.beat_frames.iter().copied().filter(|&b| b < len).collect();
    println!("dance beats: {dance_beats:?}");
    println!("music beats: {music_beats:?}");
    println!("beat alignment: {:.3}", beat_align_score(&dance_beats, &music_beats, BAS_SIGMA)?);

    let prims = extract_primitives(&motion, &skeleton, &grid, n)?;
    let targets: Vec<usize> = prims.key_motions.iter().map(|k| k.target_frame).collect();
    println!("{} key motions re-timed to frames {targets:?}", prims.key_motions.len());
    println!("{} boundary motions", prims.boundary_motions.len());

    let (_, mask) = build_primitive_canvas(&prims, len, n)?;
    let covered = mask.iter().filter(|&&m| m).count();
    println!("canvas: {covered}/{len} rows fixed by primitives");
    println!("serialised primitives: {} bytes of JSON", prims.to_json()?.len());
    Ok(())
}
