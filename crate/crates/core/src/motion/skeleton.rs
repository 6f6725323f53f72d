//! The 22-joint SMPL-style kinematic tree.

use std::fmt::Write as _;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub const JOINT_COUNT: usize = 22;

/// Pelvis height above the ground when the default skeleton stands in its rest pose.
pub const STANDING_ROOT_HEIGHT: f64 = 0.94;

pub mod joints {
    pub const PELVIS: usize = 0;
    pub const LEFT_HIP: usize = 1;
    pub const RIGHT_HIP: usize = 2;
    pub const SPINE1: usize = 3;
    pub const LEFT_KNEE: usize = 4;
    pub const RIGHT_KNEE: usize = 5;
    pub const SPINE2: usize = 6;
    pub const LEFT_ANKLE: usize = 7;
    pub const RIGHT_ANKLE: usize = 8;
    pub const SPINE3: usize = 9;
    pub const LEFT_FOOT: usize = 10;
    pub const RIGHT_FOOT: usize = 11;
    pub const NECK: usize = 12;
    pub const LEFT_COLLAR: usize = 13;
    pub const RIGHT_COLLAR: usize = 14;
    pub const HEAD: usize = 15;
    pub const LEFT_SHOULDER: usize = 16;
    pub const RIGHT_SHOULDER: usize = 17;
    pub const LEFT_ELBOW: usize = 18;
    pub const RIGHT_ELBOW: usize = 19;
    pub const LEFT_WRIST: usize = 20;
    pub const RIGHT_WRIST: usize = 21;
}

/// Foot points in contact-label order: left toe, left heel, right toe, right heel.
pub const FOOT_POINTS: [usize; 4] = [
    joints::LEFT_FOOT,
    joints::LEFT_ANKLE,
    joints::RIGHT_FOOT,
    joints::RIGHT_ANKLE,
];

// (name, parent, rest offset, radius of the bone ending at this joint)
// Y is up, +X is the body's left, +Z is forward.
const DEFAULT_TABLE: [(&str, Option<usize>, [f64; 3], f64); JOINT_COUNT] = [
    ("pelvis", None, [0.0, 0.0, 0.0], 0.08),
    ("left_hip", Some(0), [0.09, -0.08, 0.0], 0.07),
    ("right_hip", Some(0), [-0.09, -0.08, 0.0], 0.07),
    ("spine1", Some(0), [0.0, 0.10, -0.01], 0.12),
    ("left_knee", Some(1), [0.0, -0.40, 0.0], 0.07),
    ("right_knee", Some(2), [0.0, -0.40, 0.0], 0.07),
    ("spine2", Some(3), [0.0, 0.13, 0.0], 0.12),
    ("left_ankle", Some(4), [0.0, -0.42, -0.01], 0.05),
    ("right_ankle", Some(5), [0.0, -0.42, -0.01], 0.05),
    ("spine3", Some(6), [0.0, 0.06, 0.01], 0.13),
    ("left_foot", Some(7), [0.0, -0.03, 0.12], 0.04),
    ("right_foot", Some(8), [0.0, -0.03, 0.12], 0.04),
    ("neck", Some(9), [0.0, 0.21, -0.01], 0.05),
    ("left_collar", Some(9), [0.08, 0.12, 0.0], 0.05),
    ("right_collar", Some(9), [-0.08, 0.12, 0.0], 0.05),
    ("head", Some(12), [0.0, 0.09, 0.03], 0.10),
    ("left_shoulder", Some(13), [0.12, 0.03, 0.0], 0.05),
    ("right_shoulder", Some(14), [-0.12, 0.03, 0.0], 0.05),
    ("left_elbow", Some(16), [0.26, 0.0, 0.0], 0.045),
    ("right_elbow", Some(17), [-0.26, 0.0, 0.0], 0.045),
    ("left_wrist", Some(18), [0.25, 0.0, 0.0], 0.04),
    ("right_wrist", Some(19), [-0.25, 0.0, 0.0], 0.04),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub parents: Vec<Option<usize>>,
    pub rest_offsets: Vec<Vector3<f64>>,
    pub names: Vec<String>,
    /// Radius of the bone that ends at each joint, in meters.
    pub bone_radii: Vec<f64>,
}

impl Default for Skeleton {
    fn default() -> Self {
        Self {
            parents: DEFAULT_TABLE.iter().map(|j| j.1).collect(),
            rest_offsets: DEFAULT_TABLE
                .iter()
                .map(|j| Vector3::new(j.2[0], j.2[1], j.2[2]))
                .collect(),
            names: DEFAULT_TABLE.iter().map(|j| j.0.to_string()).collect(),
            bone_radii: DEFAULT_TABLE.iter().map(|j| j.3).collect(),
        }
    }
}

impl Skeleton {
    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Checks the tree and geometry invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.parents.len();
        if n != JOINT_COUNT {
            return Err(Error::Config(format!("skeleton must have {JOINT_COUNT} joints, got {n}")));
        }
        if self.rest_offsets.len() != n || self.names.len() != n || self.bone_radii.len() != n {
            return Err(Error::Config("skeleton tables have inconsistent lengths".into()));
        }
        if self.parents[0].is_some() {
            return Err(Error::Config("joint 0 must be the root".into()));
        }
        for (j, p) in self.parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < j => {}
                _ => {
                    return Err(Error::Config(format!(
                        "joint {} must have a parent listed before it",
                        self.names[j]
                    )))
                }
            }
        }
        if !self.rest_offsets.iter().all(|o| o.iter().all(|v| v.is_finite())) {
            return Err(Error::Config("rest offsets must be finite".into()));
        }
        if !self.bone_radii.iter().all(|r| r.is_finite() && *r > 0.0) {
            return Err(Error::Config("bone radii must be positive".into()));
        }
        Ok(())
    }

    /// Parses the flat `key = value` skeleton format written by [`Skeleton::to_config_string`].
    ///
    /// Recognised keys:
    /// - `joint.<name>.parent = <name>|none`
    /// - `joint.<name>.offset = <x> <y> <z>`
    /// - `bone_radii.<name> = <meters>`
    ///
    /// Joints are ordered by first appearance. Missing radii fall back to the default table.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        let mut parents: Vec<Option<String>> = Vec::new();
        let mut offsets: Vec<Option<Vector3<f64>>> = Vec::new();
        let mut radii: Vec<(String, f64)> = Vec::new();
        let slot = |name: &str, names: &mut Vec<String>, parents: &mut Vec<Option<String>>, offsets: &mut Vec<Option<Vector3<f64>>>| {
            if let Some(i) = names.iter().position(|n| n == name) {
                i
            } else {
                names.push(name.to_string());
                parents.push(None);
                offsets.push(None);
                names.len() - 1
            }
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(rest) = key.strip_prefix("joint.") {
                let (name, field) = rest
                    .rsplit_once('.')
                    .ok_or_else(|| Error::Config(format!("line {}: bad key {key}", lineno + 1)))?;
                let i = slot(name, &mut names, &mut parents, &mut offsets);
                match field {
                    "parent" => parents[i] = Some(value.to_string()),
                    "offset" => {
                        let v: Vec<f64> = value
                            .split_whitespace()
                            .map(|t| t.parse::<f64>())
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
                        if v.len() != 3 {
                            return Err(Error::Config(format!("line {}: offset needs 3 values", lineno + 1)));
                        }
                        offsets[i] = Some(Vector3::new(v[0], v[1], v[2]));
                    }
                    other => {
                        return Err(Error::Config(format!("line {}: unknown joint field {other}", lineno + 1)))
                    }
                }
            } else if let Some(name) = key.strip_prefix("bone_radii.") {
                let r = value
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
                radii.push((name.to_string(), r));
            } else {
                return Err(Error::Config(format!("line {}: unknown key {key}", lineno + 1)));
            }
        }
        let default = Skeleton::default();
        let mut skel = Skeleton {
            parents: Vec::with_capacity(names.len()),
            rest_offsets: Vec::with_capacity(names.len()),
            names: names.clone(),
            bone_radii: Vec::with_capacity(names.len()),
        };
        for (i, name) in names.iter().enumerate() {
            let parent = match parents[i].as_deref() {
                None | Some("none") => None,
                Some(p) => Some(
                    names
                        .iter()
                        .position(|n| n == p)
                        .ok_or_else(|| Error::Config(format!("unknown parent {p} for {name}")))?,
                ),
            };
            skel.parents.push(parent);
            skel.rest_offsets.push(
                offsets[i].ok_or_else(|| Error::Config(format!("joint {name} has no offset")))?,
            );
            let radius = radii
                .iter()
                .rev()
                .find(|(n, _)| n == name)
                .map(|(_, r)| *r)
                .or_else(|| default.joint_index(name).map(|j| default.bone_radii[j]))
                .ok_or_else(|| Error::Config(format!("joint {name} has no bone radius")))?;
            skel.bone_radii.push(radius);
        }
        skel.validate()?;
        Ok(skel)
    }

    pub fn to_config_string(&self) -> String {
        let mut out = String::from("# skeleton: joint tree, rest offsets (meters), bone radii (meters)\n");
        for j in 0..self.joint_count() {
            let name = &self.names[j];
            let parent = self.parents[j].map_or("none", |p| self.names[p].as_str());
            let o = self.rest_offsets[j];
            let _ = writeln!(out, "joint.{name}.parent = {parent}");
            let _ = writeln!(out, "joint.{name}.offset = {} {} {}", o.x, o.y, o.z);
            let _ = writeln!(out, "bone_radii.{name} = {}", self.bone_radii[j]);
        }
        out
    }

    /// Joints on the path from the root to `joint`, root first.
    pub fn chain(&self, joint: usize) -> Vec<usize> {
        let mut path = vec![joint];
        let mut j = joint;
        while let Some(p) = self.parents[j] {
            path.push(p);
            j = p;
        }
        path.reverse();
        path
    }

    pub fn children(&self, joint: usize) -> Vec<usize> {
        (0..self.joint_count())
            .filter(|&c| self.parents[c] == Some(joint))
            .collect()
    }
}
