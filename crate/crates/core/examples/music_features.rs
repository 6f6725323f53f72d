//! Extracts the 35-dimensional music feature stream from a synthetic click
//! track and compares the tracked beats with the known tempo.
//!
//! ```text
//! cargo run --example music_features
//! ```

use lodgepp::motion::Skeleton;
use lodgepp::music::{extract_music_features, CHROMA_COLS, MFCC_COLS, MUSIC_FPS, ONSET_COL};
use lodgepp::pipeline::{synth_pair, SynthOptions};

fn main() -> lodgepp::Result<()> {
    let opts = SynthOptions {
        count: 1,
        duration_s: 10.0,
        seed: 3,
        ..Default::default()
    };
    let pair = synth_pair(&opts, 0, &Skeleton::default())?;
    println!("clip: {:.1} s at {} Hz, {:.1} bpm", pair.audio.duration(), pair.audio.sample_rate, pair.bpm);

    let features = extract_music_features(&pair.audio)?;
    println!("features: {} frames × {} dims at {MUSIC_FPS} fps", features.len(), features.data.ncols());

    let tracked = features.beats().beat_frames;
    let intervals: Vec<usize> = tracked.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = intervals.iter().sum::<usize>() as f64 / intervals.len().max(1) as f64;
    println!("tracked {} beats, mean interval {mean:.1} frames ({:.1} bpm)", tracked.len(), 60.0 * MUSIC_FPS / mean);
    println!("constructed beats: {:?}", &pair.beats[..pair.beats.len().min(8)]);
    println!("tracked beats:     {:?}", &tracked[..tracked.len().min(8)]);

    // The loudest chroma bin names the chord the synthesiser played.
    let chroma = features.data.slice(ndarray::s![.., CHROMA_COLS]);
    let totals: Vec<f64> = chroma.columns().into_iter().map(|c| c.sum()).collect();
    let pitch = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];
    let top = totals.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0);
    println!("dominant pitch class: {}", pitch[top]);
    println!(
        "onset peak {:.2}, first MFCC range {:.1}..{:.1}",
        features.data.column(ONSET_COL).fold(0.0f64, |m, &v| m.max(v)),
        features.data.column(MFCC_COLS.start).fold(f64::INFINITY, |m, &v| m.min(v)),
        features.data.column(MFCC_COLS.start).fold(f64::NEG_INFINITY, |m, &v| m.max(v)),
    );
    Ok(())
}
