use nalgebra::{Matrix3, Vector3};
use ndarray::{s, Array2, Array3, ArrayView1};

use super::rotation::{matrix_from_rot6d, IDENTITY_6D};
use super::skeleton::{Skeleton, FOOT_POINTS};
use super::{
    rotation_cols, CoarseMotion, JointPositions, MotionSequence, COARSE_DIMS, COARSE_JOINTS,
    CONTACT_COLS, DEFAULT_FPS, FRAME_DIMS, JOINT_COUNT, ROOT_TRANSLATION_COLS,
};
use crate::error::{Error, Result};

/// Foot points below this height (meters) may be in contact.
pub const CONTACT_HEIGHT: f64 = 0.05;
/// Foot points faster than this (m/s) are never labelled as contact.
pub const CONTACT_SPEED: f64 = 0.15;

/// World rotations and positions of every joint for one frame.
#[derive(Debug, Clone)]
pub struct Pose {
    pub rotations: Vec<Matrix3<f64>>,
    pub positions: Vec<Vector3<f64>>,
}

impl Pose {
    pub fn from_frame(frame: ArrayView1<'_, f64>, skeleton: &Skeleton) -> Result<Self> {
        debug_assert_eq!(frame.len(), FRAME_DIMS);
        let n = skeleton.joint_count();
        let mut rotations = Vec::with_capacity(n);
        let mut positions = Vec::with_capacity(n);
        let t = ROOT_TRANSLATION_COLS.start;
        for j in 0..n {
            let cols = rotation_cols(j);
            let block = [
                frame[cols.start],
                frame[cols.start + 1],
                frame[cols.start + 2],
                frame[cols.start + 3],
                frame[cols.start + 4],
                frame[cols.start + 5],
            ];
            let local = matrix_from_rot6d(&block)?;
            match skeleton.parents[j] {
                None => {
                    rotations.push(local);
                    positions.push(Vector3::new(frame[t], frame[t + 1], frame[t + 2]));
                }
                Some(p) => {
                    positions.push(positions[p] + rotations[p] * skeleton.rest_offsets[j]);
                    rotations.push(rotations[p] * local);
                }
            }
        }
        Ok(Self {
            rotations,
            positions,
        })
    }
}

/// World positions (`22×3`) of one frame.
pub fn forward_kinematics(frame: ArrayView1<'_, f64>, skeleton: &Skeleton) -> Result<Array2<f64>> {
    let pose = Pose::from_frame(frame, skeleton)?;
    let mut out = Array2::zeros((pose.positions.len(), 3));
    for (j, p) in pose.positions.iter().enumerate() {
        out[[j, 0]] = p.x;
        out[[j, 1]] = p.y;
        out[[j, 2]] = p.z;
    }
    Ok(out)
}

pub fn sequence_positions(seq: &MotionSequence, skeleton: &Skeleton) -> Result<JointPositions> {
    let n = skeleton.joint_count();
    let mut data = Array3::zeros((seq.len(), n, 3));
    for (i, frame) in seq.data.outer_iter().enumerate() {
        let pose = Pose::from_frame(frame, skeleton)?;
        for (j, p) in pose.positions.iter().enumerate() {
            data[[i, j, 0]] = p.x;
            data[[i, j, 1]] = p.y;
            data[[i, j, 2]] = p.z;
        }
    }
    Ok(JointPositions { data })
}

/// Per-frame mean joint speed (m/s). Frame `i ≥ 1` uses the difference to
/// frame `i-1`; frame 0 copies frame 1.
pub fn joint_speed(seq: &MotionSequence, skeleton: &Skeleton) -> Result<Vec<f64>> {
    if seq.len() < 2 {
        return Err(Error::SequenceTooShort {
            need: 2,
            got: seq.len(),
        });
    }
    let pos = sequence_positions(seq, skeleton)?;
    Ok(speed_from_positions(&pos, seq.fps))
}

pub(crate) fn speed_from_positions(pos: &JointPositions, fps: f64) -> Vec<f64> {
    let (len, joints, _) = pos.data.dim();
    let mut speed = vec![0.0; len];
    for i in 1..len {
        let mut total = 0.0;
        for j in 0..joints {
            total += (pos.joint(i, j) - pos.joint(i - 1, j)).norm();
        }
        speed[i] = total / joints as f64 * fps;
    }
    if len >= 2 {
        speed[0] = speed[1];
    }
    speed
}

/// Binary foot contact labels (`L×4`): height below [`CONTACT_HEIGHT`] and
/// speed below [`CONTACT_SPEED`].
pub fn detect_foot_contacts(positions: &JointPositions, fps: f64) -> Array2<f64> {
    let len = positions.len();
    let mut labels = Array2::zeros((len, 4));
    for (k, &joint) in FOOT_POINTS.iter().enumerate() {
        let mut speeds = vec![0.0; len];
        for i in 1..len {
            speeds[i] = (positions.joint(i, joint) - positions.joint(i - 1, joint)).norm() * fps;
        }
        if len >= 2 {
            speeds[0] = speeds[1];
        }
        for i in 0..len {
            let height = positions.data[[i, joint, 1]];
            if height < CONTACT_HEIGHT && speeds[i] < CONTACT_SPEED {
                labels[[i, k]] = 1.0;
            }
        }
    }
    labels
}

pub fn extract_coarse(seq: &MotionSequence) -> CoarseMotion {
    let mut data = Array2::zeros((seq.len(), COARSE_DIMS));
    for (b, &joint) in COARSE_JOINTS.iter().enumerate() {
        data.slice_mut(s![.., 6 * b..6 * b + 6])
            .assign(&seq.data.slice(s![.., rotation_cols(joint)]));
    }
    CoarseMotion { data }
}

/// Embeds a coarse sequence into the full layout: coarse joints in their
/// slots, every other joint at identity, zero root translation, and contact
/// labels recomputed from the lifted pose.
pub fn lift_coarse_to_full(coarse: &CoarseMotion, skeleton: &Skeleton) -> Result<MotionSequence> {
    let len = coarse.len();
    let mut data = Array2::zeros((len, FRAME_DIMS));
    for mut row in data.outer_iter_mut() {
        for j in 0..JOINT_COUNT {
            for (c, v) in rotation_cols(j).zip(IDENTITY_6D) {
                row[c] = v;
            }
        }
    }
    for (b, &joint) in COARSE_JOINTS.iter().enumerate() {
        data.slice_mut(s![.., rotation_cols(joint)])
            .assign(&coarse.data.slice(s![.., 6 * b..6 * b + 6]));
    }
    let mut seq = MotionSequence::new(DEFAULT_FPS, data)?;
    let pos = sequence_positions(&seq, skeleton)?;
    let contacts = detect_foot_contacts(&pos, seq.fps);
    seq.data.slice_mut(s![.., CONTACT_COLS]).assign(&contacts);
    Ok(seq)
}
