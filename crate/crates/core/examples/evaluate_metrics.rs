//! Scores two synthetic corpora against each other with FID, diversity,
//! beat alignment, foot skating and penetration.
//!
//! ```text
//! cargo run --release --example evaluate_metrics
//! ```

use lodgepp::metrics::{evaluate, fid, FeatureVector, GEOMETRIC_NAMES};
use lodgepp::motion::{MotionSequence, Skeleton};
use lodgepp::pipeline::{synth_pair, SynthOptions};

fn corpus(seed: u64, count: usize, skeleton: &Skeleton) -> lodgepp::Result<(Vec<MotionSequence>, Vec<Vec<usize>>)> {
    let opts = SynthOptions {
        count,
        seed,
        ..Default::default()
    };
    let pairs = (0..count).map(|i| synth_pair(&opts, i, skeleton)).collect::<lodgepp::Result<Vec<_>>>()?;
    Ok(pairs.into_iter().map(|p| (p.motion, p.beats)).unzip())
}

fn main() -> lodgepp::Result<()> {
    let skeleton = Skeleton::default();
    let (reference, _) = corpus(1, 12, &skeleton)?;
    let (generated, beats) = corpus(2, 12, &skeleton)?;

    let report = evaluate(&generated, &reference, &skeleton, Some(&beats))?;
    println!("{}", report.to_table());
    println!("{}", report.to_json()?);

    // A frozen dance is far from the reference in kinematic space.
    let frozen: Vec<_> = (0..12).map(|_| MotionSequence::rest_pose(240)).collect();
    let feats = |seqs: &[MotionSequence]| -> lodgepp::Result<Vec<_>> {
        seqs.iter().map(|s| FeatureVector::extract(s, &skeleton).map(|f| f.kinematic)).collect()
    };
    println!("FID_k frozen vs reference: {:.1}", fid(&feats(&frozen)?, &feats(&reference)?)?);

    let g = FeatureVector::extract(&reference[0], &skeleton)?.geometric;
    let active: Vec<&str> = GEOMETRIC_NAMES.iter().zip(g.iter()).filter(|(_, &v)| v > 0.2).map(|(n, _)| *n).collect();
    println!("geometric relations active >20% of clip 0: {active:?}");
    Ok(())
}
