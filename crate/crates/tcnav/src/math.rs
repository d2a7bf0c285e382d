//! Small SO(3) and linear-algebra helpers shared across the crate.

use nalgebra::{Matrix3, Vector3};

/// Skew-symmetric (cross-product) matrix of `v`, so `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues formula: rotation matrix for the rotation vector `phi`.
pub fn so3_exp(phi: &Vector3<f64>) -> Matrix3<f64> {
    let angle = phi.norm();
    if angle < 1e-12 {
        // Second-order series keeps the result orthonormal to machine precision.
        let k = skew(phi);
        return Matrix3::identity() + k + k * k * 0.5;
    }
    let axis = phi / angle;
    let k = skew(&axis);
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

/// Rotation vector of an orthonormal matrix; inverse of [`so3_exp`].
pub fn so3_log(rot: &Matrix3<f64>) -> Vector3<f64> {
    let cos_angle = ((rot.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = cos_angle.acos();
    let v = Vector3::new(
        rot[(2, 1)] - rot[(1, 2)],
        rot[(0, 2)] - rot[(2, 0)],
        rot[(1, 0)] - rot[(0, 1)],
    );
    if angle < 1e-9 {
        return v * 0.5;
    }
    if (std::f64::consts::PI - angle).abs() < 1e-6 {
        // Near pi the vee-map degenerates; recover the axis from R + I.
        let m = rot + Matrix3::identity();
        let col = (0..3)
            .map(|i| m.column(i).norm())
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
            .unwrap();
        let axis = m.column(col).normalize();
        // Fix the sign using the off-diagonal residue.
        let sign = if v.dot(&axis) < 0.0 { -1.0 } else { 1.0 };
        return axis * angle * sign;
    }
    v * (angle / (2.0 * angle.sin()))
}

/// Re-orthonormalize a nearly orthonormal rotation matrix (one Gram-Schmidt pass).
pub fn orthonormalize(rot: &Matrix3<f64>) -> Matrix3<f64> {
    let c0 = rot.column(0).normalize();
    let mut c1 = rot.column(1).into_owned();
    c1 -= c0 * c0.dot(&c1);
    let c1 = c1.normalize();
    let c2 = c0.cross(&c1);
    Matrix3::from_columns(&[c0, c1, c2])
}

/// Frobenius distance of `rot' * rot` from the identity.
pub fn orthonormality_error(rot: &Matrix3<f64>) -> f64 {
    (rot.transpose() * rot - Matrix3::identity()).norm()
}

/// Geodesic angle (rad) between two rotation matrices.
pub fn rotation_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    so3_log(&orthonormalize(&(a * b.transpose()))).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_log_round_trip() {
        let cases = [
            Vector3::new(0.1, -0.2, 0.3),
            Vector3::new(1e-14, 0.0, 0.0),
            Vector3::new(3.0, 0.4, -0.2),
            Vector3::zeros(),
        ];
        for phi in cases {
            let rot = so3_exp(&phi);
            assert!(orthonormality_error(&rot) < 1e-12);
            let back = so3_log(&rot);
            assert!((back - phi).norm() < 1e-9, "{phi:?} -> {back:?}");
        }
    }

    #[test]
    fn skew_matches_cross_product() {
        let v = Vector3::new(1.0, 2.0, 3.0);
        let w = Vector3::new(-0.5, 0.25, 4.0);
        assert!((skew(&v) * w - v.cross(&w)).norm() < 1e-15);
    }

    #[test]
    fn orthonormalize_repairs_drift() {
        let mut rot = so3_exp(&Vector3::new(0.3, 0.2, -0.4));
        rot[(0, 1)] += 1e-6;
        let fixed = orthonormalize(&rot);
        assert!(orthonormality_error(&fixed) < 1e-14);
        assert!((fixed - rot).norm() < 1e-5);
    }
}
