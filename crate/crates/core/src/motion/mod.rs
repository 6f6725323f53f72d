//! Motion representation: the 139-column frame layout, rotation algebra,
//! skeleton, forward kinematics and coarse/full conversions.

pub mod bvh;
pub mod io;
mod kinematics;
pub mod rotation;
pub mod skeleton;

use std::ops::Range;

use ndarray::{s, Array2, Array3, ArrayView1};

use crate::error::{Error, Result};

pub use kinematics::{
    Pose,
    detect_foot_contacts, extract_coarse, forward_kinematics, joint_speed, lift_coarse_to_full,
    sequence_positions, CONTACT_HEIGHT, CONTACT_SPEED,
};
pub use rotation::{matrix_from_rot6d, rot6d_from_matrix, IDENTITY_6D};
pub use skeleton::{Skeleton, JOINT_COUNT};

pub const DEFAULT_FPS: f64 = 30.0;

/// Width of one full-body frame.
pub const FRAME_DIMS: usize = 139;
/// Width of one coarse frame (7 joints × 6D).
pub const COARSE_DIMS: usize = 42;

/// Foot contact labels: left toe, left heel, right toe, right heel.
pub const CONTACT_COLS: Range<usize> = 0..4;
pub const ROOT_TRANSLATION_COLS: Range<usize> = 4..7;

/// Joints carried by the coarse representation, in column order:
/// root, left/right shoulder, left/right elbow, left/right hip.
pub const COARSE_JOINTS: [usize; 7] = [
    skeleton::joints::PELVIS,
    skeleton::joints::LEFT_SHOULDER,
    skeleton::joints::RIGHT_SHOULDER,
    skeleton::joints::LEFT_ELBOW,
    skeleton::joints::RIGHT_ELBOW,
    skeleton::joints::LEFT_HIP,
    skeleton::joints::RIGHT_HIP,
];

/// Columns of the 6D rotation of `joint`. Joint 0 holds the global root
/// rotation, the others their rotation relative to the parent.
pub const fn rotation_cols(joint: usize) -> Range<usize> {
    7 + 6 * joint..13 + 6 * joint
}

/// A full-body dance sequence of `L` frames.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub fps: f64,
    pub data: Array2<f64>,
}

impl MotionSequence {
    /// Wraps `data` after checking its width and finiteness.
    pub fn new(fps: f64, data: Array2<f64>) -> Result<Self> {
        if data.ncols() != FRAME_DIMS {
            return Err(Error::shape(format!(
                "motion frames must have {FRAME_DIMS} columns, got {}",
                data.ncols()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::data("motion contains non-finite values"));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::data(format!("invalid fps {fps}")));
        }
        Ok(Self { fps, data })
    }

    /// `frames` copies of the identity pose standing on the ground.
    pub fn rest_pose(frames: usize) -> Self {
        let mut data = Array2::zeros((frames, FRAME_DIMS));
        for mut row in data.outer_iter_mut() {
            for j in 0..JOINT_COUNT {
                for (c, v) in rotation_cols(j).zip(IDENTITY_6D) {
                    row[c] = v;
                }
            }
            row[ROOT_TRANSLATION_COLS.start + 1] = skeleton::STANDING_ROOT_HEIGHT;
            for c in CONTACT_COLS {
                row[c] = 1.0;
            }
        }
        Self {
            fps: DEFAULT_FPS,
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn frame(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    /// Frames `[start, end)` as a new sequence.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            fps: self.fps,
            data: self.data.slice(s![start..end, ..]).to_owned(),
        }
    }

    /// Full invariant check. `ground_truth` additionally requires binary contact labels.
    pub fn validate(&self, ground_truth: bool) -> Result<()> {
        if !self.data.iter().all(|v| v.is_finite()) {
            return Err(Error::data("motion contains non-finite values"));
        }
        for (i, row) in self.data.outer_iter().enumerate() {
            for c in CONTACT_COLS {
                let v = row[c];
                let ok = if ground_truth {
                    v == 0.0 || v == 1.0
                } else {
                    (0.0..=1.0).contains(&v)
                };
                if !ok {
                    return Err(Error::data(format!("frame {i}: contact label {v} out of range")));
                }
            }
            for j in 0..JOINT_COUNT {
                let block: Vec<f64> = row.slice(s![rotation_cols(j)]).to_vec();
                matrix_from_rot6d(&block).map_err(|_| {
                    Error::data(format!("frame {i}: joint {j} rotation is not reconstructible"))
                })?;
            }
        }
        Ok(())
    }
}

/// Main-joint rotation sequence, `N×42`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseMotion {
    pub data: Array2<f64>,
}

impl CoarseMotion {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.ncols() != COARSE_DIMS {
            return Err(Error::shape(format!(
                "coarse frames must have {COARSE_DIMS} columns, got {}",
                data.ncols()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::data("coarse motion contains non-finite values"));
        }
        Ok(Self { data })
    }

    /// `frames` copies of the identity pattern.
    pub fn identity(frames: usize) -> Self {
        let mut data = Array2::zeros((frames, COARSE_DIMS));
        for mut row in data.outer_iter_mut() {
            for b in 0..COARSE_JOINTS.len() {
                for (k, v) in IDENTITY_6D.iter().enumerate() {
                    row[6 * b + k] = *v;
                }
            }
        }
        Self { data }
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }
}

/// World-space joint positions, `L×22×3`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPositions {
    pub data: Array3<f64>,
}

impl JointPositions {
    pub fn len(&self) -> usize {
        self.data.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.data.dim().0 == 0
    }

    pub fn joint(&self, frame: usize, joint: usize) -> nalgebra::Vector3<f64> {
        nalgebra::Vector3::new(
            self.data[[frame, joint, 0]],
            self.data[[frame, joint, 1]],
            self.data[[frame, joint, 2]],
        )
    }
}
