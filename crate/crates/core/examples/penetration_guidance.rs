//! Pushes a hand out of the torso with the capsule-body penetration gradient.
//!
//! ```text
//! cargo run --example penetration_guidance
//! ```

use nalgebra::Vector3;

use lodgepp::body::{hand_depths, penetration_ratio, penetration_score, CapsuleBody};
use lodgepp::motion::rotation::axis_angle;
use lodgepp::motion::skeleton::joints::{LEFT_ELBOW, LEFT_SHOULDER};
use lodgepp::motion::{rot6d_from_matrix, rotation_cols, MotionSequence, Pose, Skeleton};
use lodgepp::pddm::{apply_guidance, DEFAULT_A_PENE};

fn main() -> lodgepp::Result<()> {
    let skeleton = Skeleton::default();
    let mut seq = MotionSequence::rest_pose(16);
    // Swing the upper arm forward and fold the forearm back through the chest.
    for i in 0..seq.len() {
        for (j, angle) in [(LEFT_SHOULDER, -1.2), (LEFT_ELBOW, -2.6)] {
            let r6 = rot6d_from_matrix(&axis_angle(Vector3::y(), angle))?;
            for (c, v) in rotation_cols(j).zip(r6) {
                seq.data[[i, c]] = v;
            }
        }
    }

    let body = CapsuleBody::from_pose(&Pose::from_frame(seq.frame(0), &skeleton)?, &skeleton);
    let chest = Vector3::new(0.0, 1.3, 0.0);
    println!("penetration depth at the chest (positive inside): {:.3} m", lodgepp::body::signed_distance(&chest, &body));

    let report = |label: &str, seq: &MotionSequence| -> lodgepp::Result<()> {
        let depth = hand_depths(seq.frame(0), &skeleton).map(|d| d.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)));
        println!(
            "{label:<7} PR {:>6.2}%  score {:.4}  deepest hand sample {:+.3} m",
            penetration_ratio(seq, &skeleton),
            penetration_score(seq.frame(0), &skeleton),
            depth.unwrap_or(f64::NAN),
        );
        Ok(())
    };
    report("before", &seq)?;
    let mut data = seq.data.clone();
    for round in 1..=20 {
        data = apply_guidance(&data, 0.0, DEFAULT_A_PENE, &skeleton);
        if round % 10 == 0 {
            report(&format!("step {round}"), &MotionSequence::new(seq.fps, data.clone())?)?;
        }
    }
    Ok(())
}
