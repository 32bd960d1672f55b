//! Exponential and logarithm maps on SO(3) and SE(3).
//!
//! Twists are ordered `(ω, ρ)`: rotation part first, then translation part.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3, Vector6};

use super::Pose;

/// Below this angle the series expansions are used.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Skew-symmetric matrix such that `hat(a) * b == a.cross(&b)`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn so3_exp(omega: &Vector3<f64>) -> Rotation3<f64> {
    let theta = omega.norm();
    if theta < SMALL_ANGLE {
        let w = hat(omega);
        let m = Matrix3::identity() + w + 0.5 * w * w;
        // Re-orthonormalize the truncated series.
        return Rotation3::from_matrix_eps(&m, 1e-15, 8, Rotation3::identity());
    }
    Rotation3::from_scaled_axis(*omega)
}

/// Rotation vector of `r`, with angle in `[0, π]`.
pub fn so3_log(r: &Rotation3<f64>) -> Vector3<f64> {
    let q = UnitQuaternion::from_rotation_matrix(r);
    let (w, v) = if q.w < 0.0 {
        (-q.w, -q.imag())
    } else {
        (q.w, q.imag())
    };
    let s = v.norm();
    if s < SMALL_ANGLE {
        // atan2(s, w) / s -> 1 / w
        return v * (2.0 / w);
    }
    let angle = 2.0 * s.atan2(w);
    v * (angle / s)
}

/// Right Jacobian of SO(3).
pub fn so3_right_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let w = hat(omega);
    if theta < 1e-5 {
        return Matrix3::identity() - 0.5 * w + w * w / 6.0;
    }
    let t2 = theta * theta;
    Matrix3::identity() - (1.0 - theta.cos()) / t2 * w + (theta - theta.sin()) / (t2 * theta) * w * w
}

/// Inverse of the right Jacobian of SO(3).
pub fn so3_right_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let w = hat(omega);
    if theta < 1e-5 {
        return Matrix3::identity() + 0.5 * w + w * w / 12.0;
    }
    let t2 = theta * theta;
    let coeff = 1.0 / t2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() + 0.5 * w + coeff * w * w
}

/// Left Jacobian `V` that maps the translational twist to the pose translation.
fn se3_v(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let w = hat(omega);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + 0.5 * w + w * w / 6.0;
    }
    let t2 = theta * theta;
    Matrix3::identity() + (1.0 - theta.cos()) / t2 * w + (theta - theta.sin()) / (t2 * theta) * w * w
}

fn se3_v_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let w = hat(omega);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() - 0.5 * w + w * w / 12.0;
    }
    let half = 0.5 * theta;
    let coeff = (1.0 - half * half.cos() / half.sin()) / (theta * theta);
    Matrix3::identity() - 0.5 * w + coeff * w * w
}

pub fn se3_exp(twist: &Vector6<f64>) -> Pose {
    let omega = Vector3::new(twist[0], twist[1], twist[2]);
    let rho = Vector3::new(twist[3], twist[4], twist[5]);
    Pose::new(so3_exp(&omega), se3_v(&omega) * rho)
}

pub fn se3_log(pose: &Pose) -> Vector6<f64> {
    let omega = so3_log(&pose.rotation);
    let rho = se3_v_inv(&omega) * pose.translation;
    Vector6::new(omega.x, omega.y, omega.z, rho.x, rho.y, rho.z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn zero_twist_is_identity() {
        let p = se3_exp(&Vector6::zeros());
        assert_relative_eq!(p.rotation.matrix(), &Matrix3::identity(), epsilon = 1e-15);
        assert_eq!(p.translation, Vector3::zeros());
    }

    #[test]
    fn quarter_turn_about_z_maps_x_to_y() {
        let p = se3_exp(&Vector6::new(0.0, 0.0, FRAC_PI_2, 0.0, 0.0, 0.0));
        let y = p.rotation * Vector3::x();
        assert_relative_eq!(y, Vector3::y(), epsilon = 1e-15);
        assert_eq!(p.translation, Vector3::zeros());
    }

    #[test]
    fn exp_log_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let axis = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();
            let angle = rng.random_range(0.0..3.1);
            let omega = axis * angle;
            let xi = Vector6::new(
                omega.x,
                omega.y,
                omega.z,
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            );
            let back = se3_log(&se3_exp(&xi));
            assert!((back - xi).norm() < 1e-9, "{xi} -> {back}");
        }
    }

    #[test]
    fn tiny_angles_round_trip() {
        for &a in &[0.0, 1e-12, 1e-9, 3e-8, 1e-6] {
            let omega = Vector3::new(a, -2.0 * a, 0.5 * a);
            let back = so3_log(&so3_exp(&omega));
            assert!((back - omega).norm() < 1e-12);
        }
    }

    #[test]
    fn right_jacobian_inverse() {
        let omega = Vector3::new(0.3, -1.2, 0.7);
        let prod = so3_right_jacobian(&omega) * so3_right_jacobian_inv(&omega);
        assert_relative_eq!(prod, Matrix3::identity(), epsilon = 1e-12);
    }

    #[test]
    fn right_jacobian_first_order() {
        // Exp(ω + δ) ≈ Exp(ω) Exp(Jr(ω) δ)
        let omega = Vector3::new(0.4, 0.1, -0.9);
        let delta = Vector3::new(1e-6, -2e-6, 5e-7);
        let lhs = so3_exp(&(omega + delta));
        let rhs = so3_exp(&omega) * so3_exp(&(so3_right_jacobian(&omega) * delta));
        assert!(so3_log(&(lhs.inverse() * rhs)).norm() < 1e-11);
    }
}
