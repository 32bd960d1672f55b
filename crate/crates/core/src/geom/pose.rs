use std::ops::Mul;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use super::lie::so3_log;

/// Rigid transform `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Rotation3::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Rotation3::identity(), t)
    }

    /// Yaw-only pose (rotation about +z).
    pub fn from_yaw(yaw: f64, t: Vector3<f64>) -> Self {
        Self::new(Rotation3::from_axis_angle(&Vector3::z_axis(), yaw), t)
    }

    /// Builds a pose from a possibly non-unit quaternion `(x, y, z, w)`; it is normalized.
    pub fn from_quaternion(q: [f64; 4], t: Vector3<f64>) -> Self {
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[3], q[0], q[1], q[2]));
        Self::new(q.to_rotation_matrix(), t)
    }

    /// Unit quaternion `(x, y, z, w)` with non-negative `w`.
    pub fn quaternion(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_rotation_matrix(&self.rotation);
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.i, s * q.j, s * q.k, s * q.w]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        self.rotation.matrix()
    }

    pub fn inverse(&self) -> Self {
        let r_inv = self.rotation.inverse();
        Self::new(r_inv, -(r_inv * self.translation))
    }

    pub fn compose(&self, other: &Pose) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self⁻¹ ∘ other`: `other` expressed in the frame of `self`.
    pub fn between(&self, other: &Pose) -> Self {
        self.inverse().compose(other)
    }

    /// Geodesic rotation angle between two poses, in radians.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        so3_log(&(self.rotation.inverse() * other.rotation)).norm()
    }

    pub fn distance_to(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.matrix().iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}
