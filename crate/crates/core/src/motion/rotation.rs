//! Continuous 6D rotation encoding: the first two columns of a rotation
//! matrix, decoded by Gram-Schmidt.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Cross-product norm below which the two encoded vectors count as parallel.
pub const DEGENERACY_TOLERANCE: f64 = 1e-8;

/// Orthonormality error above which a matrix is rejected as a rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// The 6D code of the identity rotation.
pub const IDENTITY_6D: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

pub fn matrix_from_rot6d(r6: &[f64]) -> Result<Matrix3<f64>> {
    debug_assert_eq!(r6.len(), 6);
    let a1 = Vector3::new(r6[0], r6[1], r6[2]);
    let a2 = Vector3::new(r6[3], r6[4], r6[5]);
    if !a1.iter().chain(a2.iter()).all(|v| v.is_finite())
        || a1.cross(&a2).norm() < DEGENERACY_TOLERANCE
    {
        return Err(Error::DegenerateRotation);
    }
    let b1 = a1.normalize();
    let b2 = (a2 - b1 * b1.dot(&a2)).normalize();
    let b3 = b1.cross(&b2);
    Ok(Matrix3::from_columns(&[b1, b2, b3]))
}

pub fn rot6d_from_matrix(r: &Matrix3<f64>) -> Result<[f64; 6]> {
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if !err.is_finite() || err > ROTATION_TOLERANCE || (r.determinant() - 1.0).abs() > ROTATION_TOLERANCE {
        return Err(Error::NotARotation(err));
    }
    Ok([
        r[(0, 0)],
        r[(1, 0)],
        r[(2, 0)],
        r[(0, 1)],
        r[(1, 1)],
        r[(2, 1)],
    ])
}

/// Re-encodes `r6` through its Gram-Schmidt frame.
pub fn normalize_rot6d(r6: &[f64]) -> Result<[f64; 6]> {
    rot6d_from_matrix(&matrix_from_rot6d(r6)?)
}

/// Rotation of `angle` radians about `axis` (need not be unit length).
pub fn axis_angle(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).into_inner()
}

/// Z-Y-X intrinsic Euler angles in degrees, as written to BVH channels `Zrotation Yrotation Xrotation`.
pub fn euler_zyx_degrees(r: &Matrix3<f64>) -> [f64; 3] {
    // R = Rz(a) Ry(b) Rx(c)
    let sy = (-r[(2, 0)]).clamp(-1.0, 1.0);
    let b = sy.asin();
    let (a, c) = if sy.abs() < 1.0 - 1e-9 {
        (r[(1, 0)].atan2(r[(0, 0)]), r[(2, 1)].atan2(r[(2, 2)]))
    } else {
        ((-r[(0, 1)]).atan2(r[(1, 1)]), 0.0)
    };
    [a.to_degrees(), b.to_degrees(), c.to_degrees()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn assert_mat_close(a: &Matrix3<f64>, b: &Matrix3<f64>, tol: f64) {
        assert!((a - b).abs().max() < tol, "{a} vs {b}");
    }

    #[test]
    fn identity_code_decodes_to_identity() {
        let r = matrix_from_rot6d(&IDENTITY_6D).unwrap();
        assert_mat_close(&r, &Matrix3::identity(), 1e-15);
        assert_eq!(rot6d_from_matrix(&Matrix3::identity()).unwrap(), IDENTITY_6D);
    }

    #[test]
    fn quarter_turn_about_z() {
        // Columns (0,1,0) and (-1,0,0) are already orthonormal; their cross is +z.
        let r = matrix_from_rot6d(&[0.0, 1.0, 0.0, -1.0, 0.0, 0.0]).unwrap();
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_mat_close(&r, &expected, 1e-15);
        assert_mat_close(&r, &axis_angle(Vector3::z(), PI / 2.0), 1e-15);
    }

    #[test]
    fn half_turn_about_y() {
        let r = axis_angle(Vector3::y(), PI);
        let code = rot6d_from_matrix(&r).unwrap();
        let expected = [-1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        for (a, b) in code.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn parallel_vectors_are_rejected() {
        assert!(matches!(
            matrix_from_rot6d(&[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]),
            Err(Error::DegenerateRotation)
        ));
        assert!(matches!(
            matrix_from_rot6d(&[0.0; 6]),
            Err(Error::DegenerateRotation)
        ));
    }

    #[test]
    fn scaled_matrix_is_not_a_rotation() {
        let r = Matrix3::identity() * 1.01;
        assert!(matches!(rot6d_from_matrix(&r), Err(Error::NotARotation(_))));
        let reflection = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(rot6d_from_matrix(&reflection).is_err());
    }

    #[test]
    fn euler_round_trip() {
        let r = axis_angle(Vector3::new(0.3, -0.5, 0.8), 1.1);
        let [a, b, c] = euler_zyx_degrees(&r);
        let rebuilt = axis_angle(Vector3::z(), a.to_radians())
            * axis_angle(Vector3::y(), b.to_radians())
            * axis_angle(Vector3::x(), c.to_radians());
        assert_mat_close(&r, &rebuilt, 1e-12);
    }

    proptest! {
        #[test]
        fn decoded_matrices_are_proper_rotations(v in proptest::array::uniform6(-5.0f64..5.0)) {
            prop_assume!(Vector3::new(v[0], v[1], v[2]).cross(&Vector3::new(v[3], v[4], v[5])).norm() > 1e-3);
            let r = matrix_from_rot6d(&v).unwrap();
            prop_assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn normalisation_is_idempotent(v in proptest::array::uniform6(-5.0f64..5.0)) {
            prop_assume!(Vector3::new(v[0], v[1], v[2]).cross(&Vector3::new(v[3], v[4], v[5])).norm() > 1e-3);
            let once = normalize_rot6d(&v).unwrap();
            let twice = normalize_rot6d(&once).unwrap();
            for (a, b) in once.iter().zip(twice) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
