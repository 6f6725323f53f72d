//! Fixed feature lists for distribution metrics.
//!
//! Kinematic (72): per joint the mean and standard deviation of speed (m/s),
//! then per joint the mean acceleration magnitude (m/s²), then six root
//! statistics: mean and std of pelvis height, mean and std of horizontal
//! pelvis speed, and the pelvis's x and z extents.
//!
//! Geometric (32): the per-frame frequency of each descriptor in
//! [`GEOMETRIC_NAMES`]. "Body frame" directions come from the root rotation
//! projected onto the ground plane: +x to the body's left, +z forward.

use nalgebra::Vector3;
use ndarray::Array1;

use crate::error::{Error, Result};
use crate::motion::skeleton::joints::*;
use crate::motion::skeleton::FOOT_POINTS;
use crate::motion::{MotionSequence, Pose, Skeleton, JOINT_COUNT};

pub const KINEMATIC_DIMS: usize = 3 * JOINT_COUNT + 6;
pub const GEOMETRIC_DIMS: usize = 32;

pub const GEOMETRIC_NAMES: [&str; GEOMETRIC_DIMS] = [
    "left hand above head",
    "right hand above head",
    "left hand above shoulder",
    "right hand above shoulder",
    "left hand in front (> 0.2 m)",
    "right hand in front (> 0.2 m)",
    "left hand behind (> 0.1 m)",
    "right hand behind (> 0.1 m)",
    "left elbow bent > 90°",
    "right elbow bent > 90°",
    "left knee bent > 90°",
    "right knee bent > 90°",
    "left hand across midline",
    "right hand across midline",
    "left foot raised (> 0.15 m)",
    "right foot raised (> 0.15 m)",
    "left foot forward (> 0.25 m)",
    "right foot forward (> 0.25 m)",
    "left foot behind (> 0.25 m)",
    "right foot behind (> 0.25 m)",
    "left foot out wide (> 0.35 m)",
    "right foot out wide (> 0.35 m)",
    "feet crossed",
    "hands together (< 0.2 m)",
    "hands wide apart (> 1.2 m)",
    "torso lean > 20°",
    "torso lean forward > 20°",
    "torso lean backward > 20°",
    "head tilted > 30° from torso",
    "crouching (pelvis < 0.75 m)",
    "airborne (all foot points > 0.05 m)",
    "both hands below pelvis",
];

fn check(seq: &MotionSequence, skeleton: &Skeleton, need: usize) -> Result<()> {
    if skeleton.joint_count() != JOINT_COUNT {
        return Err(Error::shape(format!("features need a {JOINT_COUNT}-joint skeleton")));
    }
    if seq.len() < need {
        return Err(Error::SequenceTooShort { need, got: seq.len() });
    }
    Ok(())
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (0.0, 0.0);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn poses(seq: &MotionSequence, skeleton: &Skeleton) -> Result<Vec<Pose>> {
    seq.data.outer_iter().map(|f| Pose::from_frame(f, skeleton)).collect()
}

pub fn kinematic_features(seq: &MotionSequence, skeleton: &Skeleton) -> Result<Array1<f64>> {
    check(seq, skeleton, 3)?;
    let poses = poses(seq, skeleton)?;
    let fps = seq.fps;
    let len = poses.len();
    let mut out = Array1::zeros(KINEMATIC_DIMS);
    for j in 0..JOINT_COUNT {
        let p = |i: usize| poses[i].positions[j];
        let speed: Vec<f64> = (1..len).map(|i| (p(i) - p(i - 1)).norm() * fps).collect();
        let acc: Vec<f64> = (1..len - 1)
            .map(|i| (p(i + 1) - 2.0 * p(i) + p(i - 1)).norm() * fps * fps)
            .collect();
        let (m, s) = mean_std(&speed);
        out[j] = m;
        out[JOINT_COUNT + j] = s;
        out[2 * JOINT_COUNT + j] = mean_std(&acc).0;
    }
    let root: Vec<Vector3<f64>> = poses.iter().map(|p| p.positions[PELVIS]).collect();
    let heights: Vec<f64> = root.iter().map(|r| r.y).collect();
    let ground: Vec<f64> = (1..len)
        .map(|i| {
            let d = root[i] - root[i - 1];
            (d.x * d.x + d.z * d.z).sqrt() * fps
        })
        .collect();
    let extent = |k: usize| {
        let (lo, hi) = root.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[k]), hi.max(r[k])));
        hi - lo
    };
    let (hm, hs) = mean_std(&heights);
    let (gm, gs) = mean_std(&ground);
    let base = 3 * JOINT_COUNT;
    for (k, v) in [hm, hs, gm, gs, extent(0), extent(2)].into_iter().enumerate() {
        out[base + k] = v;
    }
    Ok(out)
}

/// Interior angle at `b` in degrees.
fn angle_at(a: Vector3<f64>, b: Vector3<f64>, c: Vector3<f64>) -> f64 {
    let (u, v) = (a - b, c - b);
    let cos = u.dot(&v) / (u.norm() * v.norm()).max(1e-12);
    cos.clamp(-1.0, 1.0).acos().to_degrees()
}

fn angle_between(u: Vector3<f64>, v: Vector3<f64>) -> f64 {
    let cos = u.dot(&v) / (u.norm() * v.norm()).max(1e-12);
    cos.clamp(-1.0, 1.0).acos().to_degrees()
}

/// The 32 descriptors of one posed frame.
pub fn frame_descriptors(pose: &Pose) -> [bool; GEOMETRIC_DIMS] {
    let p = &pose.positions;
    let root = p[PELVIS];
    let flat = |v: Vector3<f64>| Vector3::new(v.x, 0.0, v.z).try_normalize(1e-9);
    let forward = flat(pose.rotations[PELVIS] * Vector3::z()).unwrap_or_else(Vector3::z);
    let left = Vector3::y().cross(&forward);
    let body = |q: Vector3<f64>| {
        let d = q - root;
        (d.dot(&left), d.y, d.dot(&forward))
    };
    let (lw, rw) = (body(p[LEFT_WRIST]), body(p[RIGHT_WRIST]));
    let (la, ra) = (body(p[LEFT_ANKLE]), body(p[RIGHT_ANKLE]));
    let spine = p[NECK] - root;
    let lean = angle_between(spine, Vector3::y());
    let sin20 = 20f64.to_radians().sin();
    let spine_forward = spine.dot(&forward) / spine.norm().max(1e-12);
    let wrist_gap = (p[LEFT_WRIST] - p[RIGHT_WRIST]).norm();
    [
        p[LEFT_WRIST].y > p[HEAD].y,
        p[RIGHT_WRIST].y > p[HEAD].y,
        p[LEFT_WRIST].y > p[LEFT_SHOULDER].y,
        p[RIGHT_WRIST].y > p[RIGHT_SHOULDER].y,
        lw.2 > 0.2,
        rw.2 > 0.2,
        lw.2 < -0.1,
        rw.2 < -0.1,
        angle_at(p[LEFT_SHOULDER], p[LEFT_ELBOW], p[LEFT_WRIST]) < 90.0,
        angle_at(p[RIGHT_SHOULDER], p[RIGHT_ELBOW], p[RIGHT_WRIST]) < 90.0,
        angle_at(p[LEFT_HIP], p[LEFT_KNEE], p[LEFT_ANKLE]) < 90.0,
        angle_at(p[RIGHT_HIP], p[RIGHT_KNEE], p[RIGHT_ANKLE]) < 90.0,
        lw.0 < 0.0,
        rw.0 > 0.0,
        p[LEFT_FOOT].y > 0.15,
        p[RIGHT_FOOT].y > 0.15,
        la.2 > 0.25,
        ra.2 > 0.25,
        la.2 < -0.25,
        ra.2 < -0.25,
        la.0 > 0.35,
        ra.0 < -0.35,
        la.0 < ra.0,
        wrist_gap < 0.2,
        wrist_gap > 1.2,
        lean > 20.0,
        spine_forward > sin20,
        spine_forward < -sin20,
        angle_between(p[HEAD] - p[NECK], spine) > 30.0,
        root.y < 0.75,
        FOOT_POINTS.iter().all(|&j| p[j].y > 0.05),
        p[LEFT_WRIST].y < root.y && p[RIGHT_WRIST].y < root.y,
    ]
}

pub fn geometric_features(seq: &MotionSequence, skeleton: &Skeleton) -> Result<Array1<f64>> {
    check(seq, skeleton, 1)?;
    let mut out = Array1::zeros(GEOMETRIC_DIMS);
    for pose in poses(seq, skeleton)? {
        for (k, on) in frame_descriptors(&pose).into_iter().enumerate() {
            if on {
                out[k] += 1.0;
            }
        }
    }
    Ok(out / seq.len() as f64)
}
