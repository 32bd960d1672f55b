//! On-manifold IMU preintegration with first-order bias correction.
//!
//! Each interval between two samples uses the mean of the two bias-corrected
//! readings (midpoint rule). The velocity and position increments rotate the mean
//! specific force by the orientation at the middle of the interval. The deltas are
//! gravity-free and expressed in the body frame of the first sample; gravity enters
//! only in [`PreintegratedImu::predict`] and [`PreintegratedImu::residual`].

use nalgebra::{Rotation3, SMatrix, SVector, Vector3};

use super::{skew, ImuBias, ImuNoise, ImuSample, NavState};
use crate::error::ImuError;
use crate::geom::{so3_exp, so3_log, so3_right_jacobian, Pose};

pub type Matrix9 = SMatrix<f64, 9, 9>;
pub type Vector9 = SVector<f64, 9>;
type Matrix3 = nalgebra::Matrix3<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct PreintegratedImu {
    /// Integrated time, seconds.
    pub dt: f64,
    pub delta_rotation: Rotation3<f64>,
    pub delta_velocity: Vector3<f64>,
    pub delta_position: Vector3<f64>,
    /// Bias the deltas were integrated with.
    pub bias: ImuBias,
    pub d_rot_d_bg: Matrix3,
    pub d_vel_d_ba: Matrix3,
    pub d_vel_d_bg: Matrix3,
    pub d_pos_d_ba: Matrix3,
    pub d_pos_d_bg: Matrix3,
    /// Covariance of `(δφ, δv, δp)`.
    pub covariance: Matrix9,
    pub noise: ImuNoise,
}

impl PreintegratedImu {
    pub fn new(bias: ImuBias, noise: ImuNoise) -> Self {
        Self {
            dt: 0.0,
            delta_rotation: Rotation3::identity(),
            delta_velocity: Vector3::zeros(),
            delta_position: Vector3::zeros(),
            bias,
            d_rot_d_bg: Matrix3::zeros(),
            d_vel_d_ba: Matrix3::zeros(),
            d_vel_d_bg: Matrix3::zeros(),
            d_pos_d_ba: Matrix3::zeros(),
            d_pos_d_bg: Matrix3::zeros(),
            covariance: Matrix9::zeros(),
            noise,
        }
    }

    /// Integrates the interval between two consecutive samples.
    pub fn integrate(&mut self, s0: &ImuSample, s1: &ImuSample) {
        let dt = s1.t - s0.t;
        if dt <= 0.0 {
            return;
        }
        let w = (s0.gyro + s1.gyro) * 0.5 - self.bias.gyro;
        let a = (s0.accel + s1.accel) * 0.5 - self.bias.accel;
        let half_dt = 0.5 * dt;
        let half = so3_exp(&(w * half_dt));
        let full = so3_exp(&(w * dt));
        let r = *self.delta_rotation.matrix();
        let r_mid = r * half.matrix();
        let a_hat = skew(&a);

        // Sensitivity of the mid-interval rotation to the gyro bias.
        let j_mid = half.matrix().transpose() * self.d_rot_d_bg - so3_right_jacobian(&(w * half_dt)) * half_dt;

        // Covariance propagation for (δφ, δv, δp).
        let mut a_mat = Matrix9::identity();
        a_mat.fixed_view_mut::<3, 3>(0, 0).copy_from(&full.matrix().transpose());
        a_mat.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-r_mid * a_hat * dt));
        a_mat.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-0.5 * r_mid * a_hat * dt * dt));
        a_mat.fixed_view_mut::<3, 3>(6, 3).copy_from(&(Matrix3::identity() * dt));
        let mut b_g = SMatrix::<f64, 9, 3>::zeros();
        b_g.fixed_view_mut::<3, 3>(0, 0).copy_from(&(so3_right_jacobian(&(w * dt)) * dt));
        let mut b_a = SMatrix::<f64, 9, 3>::zeros();
        b_a.fixed_view_mut::<3, 3>(3, 0).copy_from(&(r_mid * dt));
        b_a.fixed_view_mut::<3, 3>(6, 0).copy_from(&(0.5 * r_mid * dt * dt));
        let var_g = self.noise.gyro * self.noise.gyro / dt;
        let var_a = self.noise.accel * self.noise.accel / dt;
        let cov = a_mat * self.covariance * a_mat.transpose()
            + b_g * b_g.transpose() * var_g
            + b_a * b_a.transpose() * var_a;
        self.covariance = 0.5 * (cov + cov.transpose());

        // Bias Jacobians, using the pre-update values.
        let dv_dg_step = -r_mid * a_hat * j_mid;
        self.d_pos_d_ba += self.d_vel_d_ba * dt - 0.5 * r_mid * dt * dt;
        self.d_pos_d_bg += self.d_vel_d_bg * dt + 0.5 * dv_dg_step * dt * dt;
        self.d_vel_d_ba -= r_mid * dt;
        self.d_vel_d_bg += dv_dg_step * dt;
        self.d_rot_d_bg = full.matrix().transpose() * self.d_rot_d_bg - so3_right_jacobian(&(w * dt)) * dt;

        // Deltas.
        let acc = r_mid * a;
        self.delta_position += self.delta_velocity * dt + 0.5 * acc * dt * dt;
        self.delta_velocity += acc * dt;
        self.delta_rotation = Rotation3::from_matrix_unchecked(r * full.matrix()).renormalize_copy();
        self.dt += dt;
    }

    /// Deltas re-linearized at `bias` to first order.
    pub fn corrected(&self, bias: &ImuBias) -> (Rotation3<f64>, Vector3<f64>, Vector3<f64>) {
        let dg = bias.gyro - self.bias.gyro;
        let da = bias.accel - self.bias.accel;
        let rot = self.delta_rotation * so3_exp(&(self.d_rot_d_bg * dg));
        let vel = self.delta_velocity + self.d_vel_d_ba * da + self.d_vel_d_bg * dg;
        let pos = self.delta_position + self.d_pos_d_ba * da + self.d_pos_d_bg * dg;
        (rot, vel, pos)
    }

    /// Propagates `state` through the preintegrated interval; the bias is carried over.
    pub fn predict(&self, state: &NavState, gravity: &Vector3<f64>) -> NavState {
        let (d_rot, d_vel, d_pos) = self.corrected(&state.bias);
        let r = state.pose.rotation;
        let dt = self.dt;
        let rotation = (r * d_rot).renormalize_copy();
        let velocity = state.velocity + gravity * dt + r * d_vel;
        let translation = state.pose.translation + state.velocity * dt + 0.5 * gravity * dt * dt + r * d_pos;
        NavState::new(Pose::new(rotation, translation), velocity, state.bias)
    }

    /// Residual `(r_φ, r_v, r_p)` between two states, with the deltas corrected at `state_i`'s bias.
    pub fn residual(&self, state_i: &NavState, state_j: &NavState, gravity: &Vector3<f64>) -> Vector9 {
        let (d_rot, d_vel, d_pos) = self.corrected(&state_i.bias);
        let ri = state_i.pose.rotation;
        let ri_t = ri.inverse();
        let dt = self.dt;
        let r_rot = so3_log(&(d_rot.inverse() * ri_t * state_j.pose.rotation));
        let r_vel = ri_t * (state_j.velocity - state_i.velocity - gravity * dt) - d_vel;
        let r_pos = ri_t
            * (state_j.pose.translation - state_i.pose.translation - state_i.velocity * dt - 0.5 * gravity * dt * dt)
            - d_pos;
        let mut r = Vector9::zeros();
        r.fixed_rows_mut::<3>(0).copy_from(&r_rot);
        r.fixed_rows_mut::<3>(3).copy_from(&r_vel);
        r.fixed_rows_mut::<3>(6).copy_from(&r_pos);
        r
    }

    /// Concatenates `self` (earlier) with `next` (later); both must share the bias.
    pub fn compose(&self, next: &PreintegratedImu) -> PreintegratedImu {
        let r1 = *self.delta_rotation.matrix();
        let r2_t = next.delta_rotation.matrix().transpose();
        let dt2 = next.dt;
        let dv2_hat = skew(&next.delta_velocity);
        let dp2_hat = skew(&next.delta_position);

        let mut a_mat = Matrix9::identity();
        a_mat.fixed_view_mut::<3, 3>(0, 0).copy_from(&r2_t);
        a_mat.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-r1 * dv2_hat));
        a_mat.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-r1 * dp2_hat));
        a_mat.fixed_view_mut::<3, 3>(6, 3).copy_from(&(Matrix3::identity() * dt2));
        let mut b_mat = Matrix9::identity();
        b_mat.fixed_view_mut::<3, 3>(3, 3).copy_from(&r1);
        b_mat.fixed_view_mut::<3, 3>(6, 6).copy_from(&r1);
        let cov = a_mat * self.covariance * a_mat.transpose() + b_mat * next.covariance * b_mat.transpose();

        PreintegratedImu {
            dt: self.dt + dt2,
            delta_rotation: (self.delta_rotation * next.delta_rotation).renormalize_copy(),
            delta_velocity: self.delta_velocity + r1 * next.delta_velocity,
            delta_position: self.delta_position + self.delta_velocity * dt2 + r1 * next.delta_position,
            bias: self.bias,
            d_rot_d_bg: r2_t * self.d_rot_d_bg + next.d_rot_d_bg,
            d_vel_d_ba: self.d_vel_d_ba + r1 * next.d_vel_d_ba,
            d_vel_d_bg: self.d_vel_d_bg + r1 * next.d_vel_d_bg - r1 * dv2_hat * self.d_rot_d_bg,
            d_pos_d_ba: self.d_pos_d_ba + self.d_vel_d_ba * dt2 + r1 * next.d_pos_d_ba,
            d_pos_d_bg: self.d_pos_d_bg + self.d_vel_d_bg * dt2 + r1 * next.d_pos_d_bg
                - r1 * dp2_hat * self.d_rot_d_bg,
            covariance: 0.5 * (cov + cov.transpose()),
            noise: self.noise,
        }
    }
}

trait Renormalize {
    fn renormalize_copy(self) -> Self;
}

impl Renormalize for Rotation3<f64> {
    fn renormalize_copy(self) -> Self {
        let mut r = self;
        r.renormalize();
        r
    }
}

/// Integrates `samples` (at least two, strictly increasing in time) at `bias`.
pub fn preintegrate(samples: &[ImuSample], bias: &ImuBias, noise: &ImuNoise) -> Result<PreintegratedImu, ImuError> {
    if samples.len() < 2 {
        return Err(ImuError::TooFewSamples(samples.len()));
    }
    for (i, pair) in samples.windows(2).enumerate() {
        if !(pair[1].t > pair[0].t) {
            return Err(ImuError::NonMonotonic {
                index: i + 1,
                t: pair[1].t,
            });
        }
    }
    let mut pim = PreintegratedImu::new(*bias, *noise);
    for pair in samples.windows(2) {
        pim.integrate(&pair[0], &pair[1]);
    }
    Ok(pim)
}
