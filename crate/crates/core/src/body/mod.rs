//! Analytic capsule body: signed distances, hand penetration scores and
//! their finite-difference gradients.

use nalgebra::Vector3;
use ndarray::{Array1, ArrayView1};

use crate::motion::skeleton::joints::*;
use crate::motion::{rotation_cols, MotionSequence, Pose, Skeleton, FRAME_DIMS};

/// Sigmoid sharpness, per meter of penetration depth.
pub const DEFAULT_SHARPNESS: f64 = 50.0;
/// Sample points per hand.
pub const HAND_POINTS: usize = 16;
/// Fingertip distance beyond the wrist.
pub const HAND_LENGTH: f64 = 0.18;
/// Extension of the head capsule past the head joint.
const HEAD_EXTENSION: f64 = 0.08;
pub const FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule {
    pub p0: Vector3<f64>,
    pub p1: Vector3<f64>,
    pub radius: f64,
}

impl Capsule {
    pub fn distance_to_axis(&self, q: &Vector3<f64>) -> f64 {
        let axis = self.p1 - self.p0;
        let len2 = axis.norm_squared();
        let t = if len2 > 0.0 {
            ((q - self.p0).dot(&axis) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (q - (self.p0 + axis * t)).norm()
    }

    /// Positive inside, negative outside.
    pub fn signed_distance(&self, q: &Vector3<f64>) -> f64 {
        self.radius - self.distance_to_axis(q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Which part of the body a capsule belongs to, used for self-exclusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Core,
    Arm(Side),
    Leg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapsuleBody {
    pub capsules: Vec<Capsule>,
    pub parts: Vec<Part>,
}

impl CapsuleBody {
    /// Fourteen capsules: pelvis, lower and upper torso, head, and per side
    /// upper arm, forearm, thigh, shin and foot.
    pub fn from_pose(pose: &Pose, skeleton: &Skeleton) -> Self {
        let p = &pose.positions;
        let r = &skeleton.bone_radii;
        let mut capsules = Vec::with_capacity(14);
        let mut parts = Vec::with_capacity(14);
        let mut add = |a: Vector3<f64>, b: Vector3<f64>, radius: f64, part: Part| {
            capsules.push(Capsule { p0: a, p1: b, radius });
            parts.push(part);
        };
        add(p[LEFT_HIP], p[RIGHT_HIP], r[PELVIS], Part::Core);
        add(p[PELVIS], p[SPINE2], r[SPINE2], Part::Core);
        add(p[SPINE2], p[NECK], r[SPINE3], Part::Core);
        let up = p[HEAD] - p[NECK];
        let head_top = p[HEAD] + up.try_normalize(1e-12).unwrap_or_else(Vector3::y) * HEAD_EXTENSION;
        add(p[NECK], head_top, r[HEAD], Part::Core);
        for (side, sh, el, wr, hip, knee, ankle, foot) in [
            (Side::Left, LEFT_SHOULDER, LEFT_ELBOW, LEFT_WRIST, LEFT_HIP, LEFT_KNEE, LEFT_ANKLE, LEFT_FOOT),
            (Side::Right, RIGHT_SHOULDER, RIGHT_ELBOW, RIGHT_WRIST, RIGHT_HIP, RIGHT_KNEE, RIGHT_ANKLE, RIGHT_FOOT),
        ] {
            add(p[sh], p[el], r[el], Part::Arm(side));
            add(p[el], p[wr], r[wr], Part::Arm(side));
            add(p[hip], p[knee], r[knee], Part::Leg);
            add(p[knee], p[ankle], r[ankle], Part::Leg);
            add(p[ankle], p[foot], r[foot], Part::Leg);
        }
        Self { capsules, parts }
    }

    /// Maximum over capsules of `radius − distance`, skipping the arm on `exclude`.
    pub fn signed_distance_excluding(&self, q: &Vector3<f64>, exclude: Option<Side>) -> f64 {
        self.capsules
            .iter()
            .zip(&self.parts)
            .filter(|(_, part)| exclude.is_none_or(|s| **part != Part::Arm(s)))
            .map(|(c, _)| c.signed_distance(q))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn signed_distance(q: &Vector3<f64>, body: &CapsuleBody) -> f64 {
    body.signed_distance_excluding(q, None)
}

/// Points from the forearm midpoint to the fingertip, evenly spaced.
pub fn hand_points(pose: &Pose, skeleton: &Skeleton, side: Side) -> Vec<Vector3<f64>> {
    let (el, wr) = match side {
        Side::Left => (LEFT_ELBOW, LEFT_WRIST),
        Side::Right => (RIGHT_ELBOW, RIGHT_WRIST),
    };
    let dir = skeleton.rest_offsets[wr].try_normalize(1e-12).unwrap_or_else(Vector3::x);
    let wrist = pose.positions[wr];
    let tip = wrist + pose.rotations[wr] * dir * HAND_LENGTH;
    let start = 0.5 * (pose.positions[el] + wrist);
    (0..HAND_POINTS)
        .map(|i| start + (tip - start) * (i as f64 / (HAND_POINTS - 1) as f64))
        .collect()
}

/// Signed distances of every hand sample (left hand first) against the body
/// minus the sampled arm.
pub fn hand_depths(frame: ArrayView1<'_, f64>, skeleton: &Skeleton) -> Option<Vec<f64>> {
    let pose = Pose::from_frame(frame, skeleton).ok()?;
    let body = CapsuleBody::from_pose(&pose, skeleton);
    let mut out = Vec::with_capacity(2 * HAND_POINTS);
    for side in [Side::Left, Side::Right] {
        for q in hand_points(&pose, skeleton, side) {
            out.push(body.signed_distance_excluding(&q, Some(side)));
        }
    }
    Some(out)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Mean over all hand samples of `σ(s·sd)` for samples inside the body, zero
/// for the rest. Frames that fail to decode score zero.
pub fn penetration_score_with(frame: ArrayView1<'_, f64>, skeleton: &Skeleton, sharpness: f64) -> f64 {
    let Some(depths) = hand_depths(frame, skeleton) else { return 0.0 };
    depths
        .iter()
        .filter(|&&d| d > 0.0)
        .map(|&d| sigmoid(sharpness * d))
        .sum::<f64>()
        / depths.len() as f64
}

pub fn penetration_score(frame: ArrayView1<'_, f64>, skeleton: &Skeleton) -> f64 {
    penetration_score_with(frame, skeleton, DEFAULT_SHARPNESS)
}

/// Rotation channels of shoulders, elbows and wrists.
pub fn arm_dof_mask() -> Vec<bool> {
    let mut mask = vec![false; FRAME_DIMS];
    for j in [LEFT_SHOULDER, RIGHT_SHOULDER, LEFT_ELBOW, RIGHT_ELBOW, LEFT_WRIST, RIGHT_WRIST] {
        for c in rotation_cols(j) {
            mask[c] = true;
        }
    }
    mask
}

/// Central-difference gradient of [`penetration_score`] over the masked
/// channels; exactly zero when no hand sample is inside the body.
pub fn penetration_grad(frame: ArrayView1<'_, f64>, skeleton: &Skeleton, dof_mask: &[bool]) -> Array1<f64> {
    let mut grad = Array1::zeros(frame.len());
    match hand_depths(frame, skeleton) {
        Some(d) if d.iter().any(|&v| v > 0.0) => {}
        _ => return grad,
    }
    let mut probe = frame.to_owned();
    for (c, _) in dof_mask.iter().enumerate().filter(|(_, m)| **m) {
        let orig = probe[c];
        probe[c] = orig + FD_STEP;
        let plus = penetration_score(probe.view(), skeleton);
        probe[c] = orig - FD_STEP;
        let minus = penetration_score(probe.view(), skeleton);
        probe[c] = orig;
        grad[c] = (plus - minus) / (2.0 * FD_STEP);
    }
    grad
}

/// Percentage of hand samples inside the body over all frames.
pub fn penetration_ratio(seq: &MotionSequence, skeleton: &Skeleton) -> f64 {
    let mut inside = 0usize;
    let mut total = 0usize;
    for frame in seq.data.outer_iter() {
        if let Some(d) = hand_depths(frame, skeleton) {
            inside += d.iter().filter(|&&v| v > 0.0).count();
            total += d.len();
        } else {
            total += 2 * HAND_POINTS;
        }
    }
    if total == 0 {
        0.0
    } else {
        100.0 * inside as f64 / total as f64
    }
}
