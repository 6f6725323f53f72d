//! BVH export for external viewers. Lengths are written in centimeters and
//! every joint carries `Zrotation Yrotation Xrotation` channels.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::rotation::{euler_zyx_degrees, matrix_from_rot6d};
use super::{rotation_cols, MotionSequence, Skeleton, ROOT_TRANSLATION_COLS};
use crate::error::{Error, Result};

const CM_PER_M: f64 = 100.0;

/// Renders `seq` as BVH text.
pub fn to_bvh(seq: &MotionSequence, skeleton: &Skeleton) -> Result<String> {
    skeleton.validate()?;
    let mut out = String::from("HIERARCHY\n");
    write_joint(&mut out, skeleton, 0, 0);
    let _ = writeln!(out, "MOTION\nFrames: {}", seq.len());
    let _ = writeln!(out, "Frame Time: {:.6}", 1.0 / seq.fps);
    let order = depth_first(skeleton);
    for frame in seq.data.outer_iter() {
        let mut fields: Vec<String> = Vec::with_capacity(3 + 3 * order.len());
        for c in ROOT_TRANSLATION_COLS {
            fields.push(format!("{:.4}", frame[c] * CM_PER_M));
        }
        for &j in &order {
            let block: Vec<f64> = rotation_cols(j).map(|c| frame[c]).collect();
            let [z, y, x] = euler_zyx_degrees(&matrix_from_rot6d(&block)?);
            fields.extend([z, y, x].iter().map(|v| format!("{v:.4}")));
        }
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    Ok(out)
}

pub fn write_bvh(path: &Path, seq: &MotionSequence, skeleton: &Skeleton) -> Result<()> {
    fs::write(path, to_bvh(seq, skeleton)?).map_err(|e| Error::io(path, e))
}

/// Joint order of the hierarchy section, which is also the channel order.
fn depth_first(skeleton: &Skeleton) -> Vec<usize> {
    let mut order = Vec::with_capacity(skeleton.joint_count());
    let mut stack = vec![0];
    while let Some(j) = stack.pop() {
        order.push(j);
        let mut kids = skeleton.children(j);
        kids.reverse();
        stack.extend(kids);
    }
    order
}

fn write_joint(out: &mut String, skeleton: &Skeleton, joint: usize, depth: usize) {
    let pad = "  ".repeat(depth);
    let o = skeleton.rest_offsets[joint] * CM_PER_M;
    let name = &skeleton.names[joint];
    if depth == 0 {
        let _ = writeln!(out, "ROOT {name}");
    } else {
        let _ = writeln!(out, "{pad}JOINT {name}");
    }
    let _ = writeln!(out, "{pad}{{");
    let _ = writeln!(out, "{pad}  OFFSET {:.4} {:.4} {:.4}", o.x, o.y, o.z);
    if depth == 0 {
        let _ = writeln!(
            out,
            "{pad}  CHANNELS 6 Xposition Yposition Zposition Zrotation Yrotation Xrotation"
        );
    } else {
        let _ = writeln!(out, "{pad}  CHANNELS 3 Zrotation Yrotation Xrotation");
    }
    let kids = skeleton.children(joint);
    if kids.is_empty() {
        let _ = writeln!(out, "{pad}  End Site\n{pad}  {{\n{pad}    OFFSET 0.0000 0.0000 0.0000\n{pad}  }}");
    }
    for k in kids {
        write_joint(out, skeleton, k, depth + 1);
    }
    let _ = writeln!(out, "{pad}}}");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rest_pose_export_structure() {
        let skel = Skeleton::default();
        let text = to_bvh(&MotionSequence::rest_pose(3), &skel).unwrap();
        assert!(text.starts_with("HIERARCHY\nROOT pelvis"));
        assert_eq!(text.matches("JOINT ").count(), 21);
        assert!(text.contains("Frames: 3"));
        let motion: Vec<&str> = text.lines().skip_while(|l| !l.starts_with("Frame Time")).skip(1).collect();
        assert_eq!(motion.len(), 3);
        let values: Vec<f64> = motion[0].split(' ').map(|v| v.parse().unwrap()).collect();
        assert_eq!(values.len(), 3 + 22 * 3);
        assert!((values[1] - 94.0).abs() < 1e-9);
        assert!(values[3..].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn braces_balance() {
        let text = to_bvh(&MotionSequence::rest_pose(1), &Skeleton::default()).unwrap();
        assert_eq!(text.matches('{').count(), text.matches('}').count());
    }
}
