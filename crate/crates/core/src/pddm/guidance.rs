//! Test-time guidance on the predicted clean segment: foot-contact
//! consistency and hand penetration, both as descent steps.

use nalgebra::Vector3;
use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;

use crate::body::{arm_dof_mask, penetration_grad};
use crate::motion::skeleton::{joints::*, FOOT_POINTS};
use crate::motion::{rotation_cols, Pose, Skeleton, CONTACT_COLS, DEFAULT_FPS, FRAME_DIMS};

pub const DEFAULT_A_CON: f64 = 0.01;
pub const DEFAULT_A_PENE: f64 = 0.1;
const FD_STEP: f64 = 1e-3;

/// Guidance scales and the last step (counting down) at which they apply.
#[derive(Debug, Clone, PartialEq)]
pub struct Guidance {
    pub a_con: f64,
    pub a_pene: f64,
    pub start_step: usize,
    pub skeleton: Skeleton,
}

impl Guidance {
    /// Default scales, active for the second half of a `steps`-step chain.
    pub fn new(skeleton: Skeleton, steps: usize) -> Self {
        Self {
            a_con: DEFAULT_A_CON,
            a_pene: DEFAULT_A_PENE,
            start_step: steps / 2,
            skeleton,
        }
    }
}

/// Rotation channels of hips, knees, ankles and feet.
pub fn leg_dof_mask() -> Vec<bool> {
    let mut mask = vec![false; FRAME_DIMS];
    for j in [LEFT_HIP, RIGHT_HIP, LEFT_KNEE, RIGHT_KNEE, LEFT_ANKLE, RIGHT_ANKLE, LEFT_FOOT, RIGHT_FOOT] {
        for c in rotation_cols(j) {
            mask[c] = true;
        }
    }
    mask
}

type Feet = [Vector3<f64>; 4];

/// Foot points of one frame; `None` if a rotation cannot be decoded.
fn feet(frame: ArrayView1<'_, f64>, skeleton: &Skeleton) -> Option<Feet> {
    let pose = Pose::from_frame(frame, skeleton).ok()?;
    Some(FOOT_POINTS.map(|j| pose.positions[j]))
}

/// Contact-weighted squared foot velocity (m/s) of frame `i` relative to its predecessor.
fn term(contacts: ArrayView1<'_, f64>, prev: &Feet, cur: &Feet) -> f64 {
    term_over(contacts, prev, cur, [true; 4])
}

fn term_over(contacts: ArrayView1<'_, f64>, prev: &Feet, cur: &Feet, feet: [bool; 4]) -> f64 {
    (0..4)
        .filter(|&k| feet[k])
        .map(|k| contacts[CONTACT_COLS.start + k] * ((cur[k] - prev[k]) * DEFAULT_FPS).norm_squared())
        .sum()
}

/// Feet whose term can have a non-zero derivative: labelled as in contact
/// and actually moving. A foot at rest sits at the minimum of its quadratic
/// term, where the derivative is exactly zero.
fn live(contacts: ArrayView1<'_, f64>, prev: &Feet, cur: &Feet) -> [bool; 4] {
    std::array::from_fn(|k| contacts[CONTACT_COLS.start + k] != 0.0 && cur[k] != prev[k])
}

/// Mean over frames `1..n` and the four foot points of `c·‖v‖²`, where `c` is
/// the frame's own contact label and `v` the foot point velocity.
pub fn contact_loss(d: &Array2<f64>, skeleton: &Skeleton) -> f64 {
    let n = d.nrows();
    if n < 2 {
        return 0.0;
    }
    let positions: Vec<Option<Feet>> = d.outer_iter().map(|f| feet(f, skeleton)).collect();
    let mut total = 0.0;
    for i in 1..n {
        if let (Some(p), Some(c)) = (&positions[i - 1], &positions[i]) {
            total += term(d.row(i), p, c);
        }
    }
    total / (4 * (n - 1)) as f64
}

/// Central-difference gradient of [`contact_loss`] over the leg rotation
/// channels and the active (non-zero) contact labels. A channel of frame `i`
/// only touches the velocity terms of frames `i` and `i + 1`, so each
/// difference is evaluated on those two terms alone.
pub fn contact_grad(d: &Array2<f64>, skeleton: &Skeleton) -> Array2<f64> {
    let n = d.nrows();
    let mut grad = Array2::zeros(d.raw_dim());
    if n < 2 {
        return grad;
    }
    let positions: Vec<Option<Feet>> = d.outer_iter().map(|f| feet(f, skeleton)).collect();
    let norm = (4 * (n - 1)) as f64;
    let leg: Vec<usize> = leg_dof_mask().iter().enumerate().filter(|(_, m)| **m).map(|(c, _)| c).collect();
    let rows: Vec<Array1<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut g = Array1::zeros(FRAME_DIMS);
            let Some(here) = positions[i] else { return g };
            let before = if i > 0 { positions[i - 1].map(|p| (p, live(d.row(i), &p, &here))) } else { None };
            let after = if i + 1 < n { positions[i + 1].map(|q| (q, live(d.row(i + 1), &here, &q))) } else { None };
            let any = |x: &Option<(Feet, [bool; 4])>| x.is_some_and(|(_, m)| m.iter().any(|&b| b));
            if !any(&before) && !any(&after) {
                return g;
            }
            let local = |frame: ArrayView1<'_, f64>, moved: &Feet| -> f64 {
                let mut s = 0.0;
                if let Some((p, m)) = &before {
                    s += term_over(frame, p, moved, *m);
                }
                if let Some((q, m)) = &after {
                    s += term_over(d.row(i + 1), moved, q, *m);
                }
                s
            };
            let mut probe = d.row(i).to_owned();
            for &c in &leg {
                let orig = probe[c];
                probe[c] = orig + FD_STEP;
                let plus = feet(probe.view(), skeleton).map(|f| local(probe.view(), &f));
                probe[c] = orig - FD_STEP;
                let minus = feet(probe.view(), skeleton).map(|f| local(probe.view(), &f));
                probe[c] = orig;
                if let (Some(a), Some(b)) = (plus, minus) {
                    g[c] = (a - b) / (2.0 * FD_STEP * norm);
                }
            }
            if i > 0 {
                if let Some(p) = &positions[i - 1] {
                    for k in 0..4 {
                        let c = CONTACT_COLS.start + k;
                        if probe[c] != 0.0 {
                            // The term is linear in the label, so the central difference is exact.
                            g[c] = ((here[k] - p[k]) * DEFAULT_FPS).norm_squared() / norm;
                        }
                    }
                }
            }
            g
        })
        .collect();
    for (i, r) in rows.into_iter().enumerate() {
        grad.row_mut(i).assign(&r);
    }
    grad
}

/// One guidance step on `d0_hat`: descend the contact loss (scale `a_con`)
/// and every frame's penetration score (scale `a_pene`), both gradients taken
/// at the input. Zero scales return the input unchanged.
pub fn apply_guidance(d0_hat: &Array2<f64>, a_con: f64, a_pene: f64, skeleton: &Skeleton) -> Array2<f64> {
    let mut out = d0_hat.clone();
    if a_con > 0.0 {
        out.scaled_add(-a_con, &contact_grad(d0_hat, skeleton));
    }
    if a_pene > 0.0 {
        let mask = arm_dof_mask();
        let grads: Vec<Array1<f64>> = (0..d0_hat.nrows())
            .into_par_iter()
            .map(|i| penetration_grad(d0_hat.row(i), skeleton, &mask))
            .collect();
        for (mut row, g) in out.outer_iter_mut().zip(grads) {
            row.scaled_add(-a_pene, &g);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::rotation::{axis_angle, rot6d_from_matrix};
    use crate::motion::MotionSequence;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wobbling_legs(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = MotionSequence::rest_pose(n).data;
        for i in 0..n {
            for j in [LEFT_HIP, RIGHT_KNEE, LEFT_ANKLE] {
                let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.3);
                let r = axis_angle(axis, 0.2 * (i as f64 * 0.7).sin() + rng.gen_range(-0.05..0.05));
                for (c, v) in rotation_cols(j).zip(rot6d_from_matrix(&r).unwrap()) {
                    d[[i, c]] = v;
                }
            }
            for c in CONTACT_COLS {
                d[[i, c]] = rng.gen_range(0.2..1.0);
            }
        }
        d
    }

    #[test]
    fn static_planted_feet_have_no_gradient() {
        let skel = Skeleton::default();
        let d = MotionSequence::rest_pose(6).data;
        assert_eq!(contact_loss(&d, &skel), 0.0);
        assert!(contact_grad(&d, &skel).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_contacts_have_no_gradient() {
        let skel = Skeleton::default();
        let mut d = wobbling_legs(6, 1);
        for c in CONTACT_COLS {
            d.column_mut(c).fill(0.0);
        }
        assert_eq!(contact_loss(&d, &skel), 0.0);
        assert!(contact_grad(&d, &skel).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn local_gradient_matches_whole_loss_differences() {
        let skel = Skeleton::default();
        let d = wobbling_legs(7, 2);
        let g = contact_grad(&d, &skel);
        let mask = leg_dof_mask();
        for i in 0..d.nrows() {
            for c in 0..FRAME_DIMS {
                let active = mask[c] || CONTACT_COLS.contains(&c) && i > 0;
                if !active {
                    assert_eq!(g[[i, c]], 0.0);
                    continue;
                }
                let mut p = d.clone();
                p[[i, c]] += FD_STEP;
                let plus = contact_loss(&p, &skel);
                p[[i, c]] -= 2.0 * FD_STEP;
                let minus = contact_loss(&p, &skel);
                let oracle = (plus - minus) / (2.0 * FD_STEP);
                assert!((g[[i, c]] - oracle).abs() < 1e-6 * (1.0 + oracle.abs()), "{i} {c}: {} vs {oracle}", g[[i, c]]);
            }
        }
    }

    #[test]
    fn zero_scales_are_the_identity() {
        let skel = Skeleton::default();
        let d = wobbling_legs(5, 3);
        assert_eq!(apply_guidance(&d, 0.0, 0.0, &skel), d);
    }

    #[test]
    fn clean_pose_is_a_fixed_point() {
        let skel = Skeleton::default();
        let d = MotionSequence::rest_pose(5).data;
        assert_eq!(apply_guidance(&d, 0.01, 0.1, &skel), d);
    }

    #[test]
    fn contact_guidance_reduces_the_loss() {
        let skel = Skeleton::default();
        let d = wobbling_legs(12, 4);
        let before = contact_loss(&d, &skel);
        let after = contact_loss(&apply_guidance(&d, 1e-4, 0.0, &skel), &skel);
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn penetration_guidance_descends_monotonically() {
        let skel = Skeleton::default();
        let mut frame = MotionSequence::rest_pose(1).data;
        for (j, a) in [(LEFT_SHOULDER, -1.2), (LEFT_ELBOW, -2.6)] {
            for (c, v) in rotation_cols(j).zip(rot6d_from_matrix(&axis_angle(Vector3::y(), a)).unwrap()) {
                frame[[0, c]] = v;
            }
        }
        let score = |d: &Array2<f64>| crate::body::penetration_score(d.row(0), &skel);
        let mut last = score(&frame);
        assert!(last > 0.0);
        for _ in 0..20 {
            frame = apply_guidance(&frame, 0.0, 0.1, &skel);
            let s = score(&frame);
            assert!(s < last || s == 0.0 && last == 0.0, "{s} !< {last}");
            last = s;
        }
    }
}
