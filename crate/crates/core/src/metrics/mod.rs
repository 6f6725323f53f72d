//! Evaluation suite: Fréchet distances on kinematic and geometric features,
//! diversity, beat alignment, foot skating and hand penetration.

mod features;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body::penetration_ratio;
use crate::choreo::detect_dance_beats;
use crate::error::{Error, Result};
use crate::motion::skeleton::FOOT_POINTS;
use crate::motion::{sequence_positions, MotionSequence, Skeleton};

pub use features::{
    frame_descriptors, geometric_features, kinematic_features, GEOMETRIC_DIMS, GEOMETRIC_NAMES, KINEMATIC_DIMS,
};

/// Diagonal shrinkage added to every covariance estimate.
pub const COVARIANCE_SHRINKAGE: f64 = 1e-6;
/// Beat alignment kernel width in frames.
pub const BAS_SIGMA: f64 = 3.0;
/// Height below which a foot point counts as grounded (m).
pub const SKATE_HEIGHT: f64 = 0.05;
/// Horizontal displacement per frame above which a grounded foot skates (m).
pub const SKATE_DISTANCE: f64 = 0.025;

fn to_matrix(set: &[Array1<f64>]) -> Result<DMatrix<f64>> {
    let dim = set.first().map_or(0, |v| v.len());
    if set.iter().any(|v| v.len() != dim) {
        return Err(Error::shape("feature vectors differ in length"));
    }
    Ok(DMatrix::from_fn(set.len(), dim, |i, j| set[i][j]))
}

fn mean_and_cov(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows() as f64;
    let mean = x.row_mean().transpose();
    let mut centred = x.clone();
    for mut row in centred.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centred.transpose() * &centred / (n - 1.0);
    for i in 0..cov.nrows() {
        cov[(i, i)] += COVARIANCE_SHRINKAGE;
    }
    (mean, cov)
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussians fitted to two feature sets.
///
/// The cross term uses the eigenvalues of `Σa^½ Σb Σa^½`, clamped at zero,
/// so the result is symmetric up to rounding and never negative.
pub fn fid(set_a: &[Array1<f64>], set_b: &[Array1<f64>]) -> Result<f64> {
    for set in [set_a, set_b] {
        if set.len() < 2 {
            return Err(Error::TooFewSamples { need: 2, got: set.len() });
        }
    }
    let (a, b) = (to_matrix(set_a)?, to_matrix(set_b)?);
    if a.ncols() != b.ncols() {
        return Err(Error::shape("feature sets differ in dimension"));
    }
    let (mu_a, cov_a) = mean_and_cov(&a);
    let (mu_b, cov_b) = mean_and_cov(&b);
    if !cov_a.iter().chain(cov_b.iter()).all(|v| v.is_finite()) {
        return Err(Error::DegenerateCovariance);
    }
    let root_a = psd_sqrt(&cov_a);
    let mut cross = &root_a * &cov_b * &root_a;
    cross = (&cross + cross.transpose()) * 0.5;
    let eig = SymmetricEigen::new(cross);
    if !eig.eigenvalues.iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateCovariance);
    }
    let trace_root: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let value = (mu_a - mu_b).norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * trace_root;
    Ok(value.max(0.0))
}

/// Mean pairwise Euclidean distance over all unordered pairs.
pub fn diversity(set: &[Array1<f64>]) -> Result<f64> {
    let n = set.len();
    if n < 2 {
        return Err(Error::TooFewSamples { need: 2, got: n });
    }
    let x = to_matrix(set)?;
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| (i + 1..n).map(|j| (x.row(i) - x.row(j)).norm()).sum::<f64>())
        .sum();
    Ok(total / (n * (n - 1) / 2) as f64)
}

/// Mean Gaussian-kernel proximity of each music beat to its nearest dance
/// beat. No dance beats scores 0.
pub fn beat_align_score(dance_beats: &[usize], music_beats: &[usize], sigma: f64) -> Result<f64> {
    if music_beats.is_empty() {
        return Err(Error::NoMusicBeats);
    }
    if dance_beats.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = music_beats
        .iter()
        .map(|&m| {
            let d2 = dance_beats.iter().map(|&d| (d as f64 - m as f64).powi(2)).fold(f64::INFINITY, f64::min);
            (-d2 / (2.0 * sigma * sigma)).exp()
        })
        .sum();
    Ok(total / music_beats.len() as f64)
}

/// Per-frame skating flags. Frame 0 has no predecessor and takes frame 1's flag.
pub fn skating_frames(seq: &MotionSequence, skeleton: &Skeleton) -> Result<Vec<bool>> {
    if seq.len() < 2 {
        return Err(Error::SequenceTooShort { need: 2, got: seq.len() });
    }
    let pos = sequence_positions(seq, skeleton)?;
    let mut flags: Vec<bool> = (1..seq.len())
        .map(|i| {
            FOOT_POINTS.iter().any(|&j| {
                let (p, q) = (pos.joint(i - 1, j), pos.joint(i, j));
                let moved = ((q[0] - p[0]).powi(2) + (q[2] - p[2]).powi(2)).sqrt();
                q[1] < SKATE_HEIGHT && moved > SKATE_DISTANCE
            })
        })
        .collect();
    flags.insert(0, flags[0]);
    Ok(flags)
}

/// Percentage of frames in which a grounded foot point slides.
pub fn foot_skating_ratio(seq: &MotionSequence, skeleton: &Skeleton) -> Result<f64> {
    let flags = skating_frames(seq, skeleton)?;
    Ok(100.0 * flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64)
}

/// Kinematic and geometric features of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub kinematic: Array1<f64>,
    pub geometric: Array1<f64>,
}

impl FeatureVector {
    pub fn extract(seq: &MotionSequence, skeleton: &Skeleton) -> Result<Self> {
        Ok(Self {
            kinematic: kinematic_features(seq, skeleton)?,
            geometric: geometric_features(seq, skeleton)?,
        })
    }
}

/// Features for a corpus, one sequence per task.
pub fn corpus_features(seqs: &[MotionSequence], skeleton: &Skeleton) -> Result<Vec<FeatureVector>> {
    seqs.par_iter().map(|s| FeatureVector::extract(s, skeleton)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fid_k: f64,
    pub fid_g: f64,
    pub div_k: f64,
    pub div_g: f64,
    /// `None` when no music beats were supplied.
    pub bas: Option<f64>,
    pub fsr_percent: f64,
    pub pr_percent: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_table(&self) -> String {
        let bas = self.bas.map_or_else(|| "n/a".to_string(), |b| format!("{b:.4}"));
        let rows = [
            ("FID_k", format!("{:.4}", self.fid_k)),
            ("FID_g", format!("{:.4}", self.fid_g)),
            ("Div_k", format!("{:.4}", self.div_k)),
            ("Div_g", format!("{:.4}", self.div_g)),
            ("BAS", bas),
            ("FSR (%)", format!("{:.4}", self.fsr_percent)),
            ("PR (%)", format!("{:.4}", self.pr_percent)),
        ];
        let mut out = format!("{:<10}{:>14}\n", "metric", "value");
        for (name, value) in rows {
            out.push_str(&format!("{name:<10}{value:>14}\n"));
        }
        out
    }
}

/// Full metric report for `generated` against `reference`.
///
/// `music_beats`, when given, pairs one beat list with each generated
/// sequence; BAS is their mean. FSR and PR are pooled over all generated
/// frames.
pub fn evaluate(
    generated: &[MotionSequence],
    reference: &[MotionSequence],
    skeleton: &Skeleton,
    music_beats: Option<&[Vec<usize>]>,
) -> Result<EvalReport> {
    for set in [generated, reference] {
        if set.len() < 2 {
            return Err(Error::TooFewSamples { need: 2, got: set.len() });
        }
    }
    let gen = corpus_features(generated, skeleton)?;
    let refs = corpus_features(reference, skeleton)?;
    let kin = |s: &[FeatureVector]| s.iter().map(|f| f.kinematic.clone()).collect::<Vec<_>>();
    let geo = |s: &[FeatureVector]| s.iter().map(|f| f.geometric.clone()).collect::<Vec<_>>();
    let bas = match music_beats {
        None => None,
        Some(beats) => {
            if beats.len() != generated.len() {
                return Err(Error::shape("one beat list per generated sequence"));
            }
            let scores: Vec<f64> = generated
                .par_iter()
                .zip(beats)
                .map(|(s, m)| beat_align_score(&detect_dance_beats(s, skeleton)?, m, BAS_SIGMA))
                .collect::<Result<_>>()?;
            Some(scores.iter().sum::<f64>() / scores.len() as f64)
        }
    };
    let frames: usize = generated.iter().map(MotionSequence::len).sum();
    let pooled = |per: Vec<(f64, usize)>| per.iter().map(|(p, n)| p * *n as f64).sum::<f64>() / frames as f64;
    let fsr = generated
        .par_iter()
        .map(|s| foot_skating_ratio(s, skeleton).map(|p| (p, s.len())))
        .collect::<Result<Vec<_>>>()?;
    let pr = generated
        .par_iter()
        .map(|s| (penetration_ratio(s, skeleton), s.len()))
        .collect::<Vec<_>>();
    Ok(EvalReport {
        fid_k: fid(&kin(&gen), &kin(&refs))?,
        fid_g: fid(&geo(&gen), &geo(&refs))?,
        div_k: diversity(&kin(&gen))?,
        div_g: diversity(&geo(&gen))?,
        bas,
        fsr_percent: pooled(fsr),
        pr_percent: pooled(pr),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_set(rng: &mut ChaCha8Rng, n: usize, dim: usize, shift: f64) -> Vec<Array1<f64>> {
        (0..n)
            .map(|_| Array1::from_iter((0..dim).map(|_| shift + rng.sample::<f64, _>(StandardNormal))))
            .collect()
    }

    #[test]
    fn fid_of_a_set_with_itself_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random_set(&mut rng, 50, 8, 0.0);
        assert!(fid(&x, &x).unwrap() < 1e-6);
    }

    #[test]
    fn fid_of_unit_gaussians_one_apart() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_set(&mut rng, 100_000, 1, 0.0);
        let b = random_set(&mut rng, 100_000, 1, 1.0);
        let f = fid(&a, &b).unwrap();
        assert!((f - 1.0).abs() < 0.05, "{f}");
    }

    #[test]
    fn fid_matches_closed_form_in_one_dimension() {
        // For scalars the distance is (μa−μb)² + (σa−σb)².
        let a: Vec<_> = [1.0, 2.0, 4.0, 7.0].iter().map(|&v| array![v]).collect();
        let b: Vec<_> = [0.0, 3.0, 3.5].iter().map(|&v| array![v]).collect();
        let stats = |x: &[f64]| {
            let m = x.iter().sum::<f64>() / x.len() as f64;
            let v = x.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64 + COVARIANCE_SHRINKAGE;
            (m, v.sqrt())
        };
        let (ma, sa) = stats(&[1.0, 2.0, 4.0, 7.0]);
        let (mb, sb) = stats(&[0.0, 3.0, 3.5]);
        let oracle = (ma - mb).powi(2) + (sa - sb).powi(2);
        assert!((fid(&a, &b).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn fid_rejects_tiny_sets() {
        let x = vec![array![1.0]];
        assert!(matches!(fid(&x, &x), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn rank_deficient_sets_are_handled_by_shrinkage() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_set(&mut rng, 5, 72, 0.0);
        let b = random_set(&mut rng, 5, 72, 0.5);
        let f = fid(&a, &b).unwrap();
        assert!(f.is_finite() && f > 0.0);
    }

    #[test]
    fn diversity_basics() {
        assert_eq!(diversity(&[array![1.0, 2.0], array![1.0, 2.0]]).unwrap(), 0.0);
        assert!((diversity(&[array![0.0, 0.0], array![3.0, 4.0]]).unwrap() - 5.0).abs() < 1e-12);
        assert!(diversity(&[array![0.0]]).is_err());
    }

    #[test]
    fn diversity_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_set(&mut rng, 100, 6, 0.0);
        let mut sum = 0.0;
        let mut count = 0;
        for i in 0..x.len() {
            for j in 0..x.len() {
                if i < j {
                    sum += (&x[i] - &x[j]).mapv(|v| v * v).sum().sqrt();
                    count += 1;
                }
            }
        }
        assert!((diversity(&x).unwrap() - sum / count as f64).abs() < 1e-10);
    }

    #[test]
    fn beat_alignment_examples() {
        let beats = [10, 40, 70, 100];
        assert_eq!(beat_align_score(&beats, &beats, 3.0).unwrap(), 1.0);
        let shifted: Vec<usize> = beats.iter().map(|b| b + 3).collect();
        assert!((beat_align_score(&shifted, &beats, 3.0).unwrap() - (-0.5f64).exp()).abs() < 1e-9);
        assert_eq!(beat_align_score(&[], &beats, 3.0).unwrap(), 0.0);
        assert!(matches!(beat_align_score(&beats, &[], 3.0), Err(Error::NoMusicBeats)));
    }

    fn sliding(len: usize, height: f64, step: f64) -> MotionSequence {
        let mut seq = MotionSequence::rest_pose(len);
        for i in 0..len {
            seq.data[[i, 4]] = step * i as f64;
            seq.data[[i, 5]] += height;
        }
        seq
    }

    #[test]
    fn foot_skating_examples() {
        let skel = Skeleton::default();
        assert_eq!(foot_skating_ratio(&MotionSequence::rest_pose(20), &skel).unwrap(), 0.0);
        assert_eq!(foot_skating_ratio(&sliding(20, 0.0, 0.05), &skel).unwrap(), 100.0);
        assert_eq!(foot_skating_ratio(&sliding(20, 0.3, 0.05), &skel).unwrap(), 0.0);
        assert_eq!(foot_skating_ratio(&sliding(20, 0.0, 0.01), &skel).unwrap(), 0.0);
        assert!(foot_skating_ratio(&MotionSequence::rest_pose(1), &skel).is_err());
    }

    #[test]
    fn evaluating_a_corpus_against_itself() {
        let skel = Skeleton::default();
        let corpus: Vec<_> = (0..4).map(|k| sliding(30, 0.02 * k as f64, 0.01 * k as f64)).collect();
        let report = evaluate(&corpus, &corpus, &skel, None).unwrap();
        assert!(report.fid_k < 1e-6 && report.fid_g < 1e-6);
        assert_eq!(report.bas, None);
        let json: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        for key in ["fid_k", "fid_g", "div_k", "div_g", "bas", "fsr_percent", "pr_percent"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(report, evaluate(&corpus, &corpus, &skel, None).unwrap());
        assert!(report.to_table().contains("FID_k"));
    }

    proptest! {
        #[test]
        fn fid_is_symmetric_and_translation_covariant(seed in 0u64..500, shift in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_set(&mut rng, 12, 3, 0.0);
            let b = random_set(&mut rng, 9, 3, 0.7);
            let ab = fid(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - fid(&b, &a).unwrap()).abs() < 1e-9);
            let move_all = |s: &[Array1<f64>]| s.iter().map(|v| v + shift).collect::<Vec<_>>();
            prop_assert!((ab - fid(&move_all(&a), &move_all(&b)).unwrap()).abs() < 1e-8);
        }

        #[test]
        fn beat_alignment_is_bounded_and_monotone(offsets in proptest::collection::vec(0usize..20, 1..8), extra in 1usize..5) {
            let music: Vec<usize> = (0..offsets.len()).map(|i| 100 + 60 * i).collect();
            let near: Vec<usize> = music.iter().zip(&offsets).map(|(m, o)| m + o).collect();
            let far: Vec<usize> = music.iter().zip(&offsets).map(|(m, o)| m + o + extra).collect();
            let (a, b) = (beat_align_score(&near, &music, 3.0).unwrap(), beat_align_score(&far, &music, 3.0).unwrap());
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(b <= a);
        }

        #[test]
        fn diversity_is_permutation_and_shift_invariant(seed in 0u64..500, shift in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_set(&mut rng, 7, 4, 0.0);
            let mut y: Vec<_> = x.iter().map(|v| v + shift).collect();
            y.reverse();
            prop_assert!((diversity(&x).unwrap() - diversity(&y).unwrap()).abs() < 1e-9);
        }
    }
}
