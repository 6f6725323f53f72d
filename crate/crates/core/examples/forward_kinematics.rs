//! Poses a skeleton with 6D rotations, runs forward kinematics and exports BVH.
//!
//! ```text
//! cargo run --example forward_kinematics
//! ```

use nalgebra::Vector3;

use lodgepp::motion::bvh::to_bvh;
use lodgepp::motion::rotation::{axis_angle, euler_zyx_degrees};
use lodgepp::motion::skeleton::joints::{LEFT_ELBOW, LEFT_SHOULDER, LEFT_WRIST, PELVIS};
use lodgepp::motion::{forward_kinematics, matrix_from_rot6d, rot6d_from_matrix, rotation_cols, MotionSequence, Skeleton};

fn main() -> lodgepp::Result<()> {
    let skeleton = Skeleton::default();
    let mut seq = MotionSequence::rest_pose(30);

    // Raise the left arm over 30 frames and bend the elbow halfway.
    for i in 0..seq.len() {
        let s = i as f64 / 29.0;
        let shoulder = rot6d_from_matrix(&axis_angle(Vector3::z(), 1.4 * s))?;
        let elbow = rot6d_from_matrix(&axis_angle(Vector3::y(), -0.8 * s))?;
        for (j, r6) in [(LEFT_SHOULDER, shoulder), (LEFT_ELBOW, elbow)] {
            for (c, v) in rotation_cols(j).zip(r6) {
                seq.data[[i, c]] = v;
            }
        }
    }

    for i in [0, 15, 29] {
        let positions = forward_kinematics(seq.frame(i), &skeleton)?;
        let wrist = positions.row(LEFT_WRIST);
        println!("frame {i:>2}: left wrist at ({:+.3}, {:+.3}, {:+.3})", wrist[0], wrist[1], wrist[2]);
    }

    // The 6D code keeps two matrix columns; Gram–Schmidt rebuilds the third.
    let cols = rotation_cols(LEFT_SHOULDER);
    let r6: Vec<f64> = seq.frame(29).iter().skip(cols.start).take(6).copied().collect();
    let r = matrix_from_rot6d(&r6)?;
    println!("shoulder at frame 29, ZYX degrees: {:?}", euler_zyx_degrees(&r).map(|d| d.round()));
    println!("pelvis height: {:.2} m", forward_kinematics(seq.frame(0), &skeleton)?[[PELVIS, 1]]);

    let bvh = to_bvh(&seq, &skeleton)?;
    println!("BVH export: {} lines, header starts with {:?}", bvh.lines().count(), bvh.lines().next().unwrap_or(""));
    Ok(())
}
