use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::trajectory::TrajectorySpline;
use crate::error::SimError;
use crate::imu::{ImuBias, ImuSample};

/// IMU synthesis settings. Noise values are continuous-time densities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSimParams {
    pub rate: f64,
    pub bias: ImuBias,
    /// rad/s/√Hz
    pub gyro_noise: f64,
    /// m/s²/√Hz
    pub accel_noise: f64,
    pub gravity: Vector3<f64>,
}

impl Default for ImuSimParams {
    fn default() -> Self {
        Self {
            rate: 200.0,
            bias: ImuBias::default(),
            gyro_noise: 1.7e-4,
            accel_noise: 2.0e-3,
            gravity: Vector3::new(0.0, 0.0, -9.81),
        }
    }
}

/// Samples the exact body-frame rate and specific force of `traj` at `params.rate`.
///
/// Per-sample noise has standard deviation `density·√rate`.
pub fn synthesize_imu<R: Rng + ?Sized>(
    traj: &TrajectorySpline,
    params: &ImuSimParams,
    rng: &mut R,
) -> Result<Vec<ImuSample>, SimError> {
    if !(params.rate > 0.0 && params.gyro_noise >= 0.0 && params.accel_noise >= 0.0) {
        return Err(SimError::InvalidParameter(format!(
            "IMU rate {} and noise densities must be positive",
            params.rate
        )));
    }
    let gyro_sd = params.gyro_noise * params.rate.sqrt();
    let accel_sd = params.accel_noise * params.rate.sqrt();
    let gyro_n = (gyro_sd > 0.0).then(|| Normal::new(0.0, gyro_sd).expect("finite sigma"));
    let accel_n = (accel_sd > 0.0).then(|| Normal::new(0.0, accel_sd).expect("finite sigma"));
    let draw = |n: &Option<Normal<f64>>, rng: &mut R| match n {
        Some(n) => Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng)),
        None => Vector3::zeros(),
    };

    let count = (traj.duration() * params.rate + 1e-9).floor() as usize;
    let mut out = Vec::with_capacity(count + 1);
    for k in 0..=count {
        let t = traj.start_time() + k as f64 / params.rate;
        let e = traj.evaluate(t);
        let r_t = e.pose.rotation.inverse();
        let gyro = e.angular_velocity + params.bias.gyro + draw(&gyro_n, rng);
        let accel = r_t * (e.acceleration - params.gravity) + params.bias.accel + draw(&accel_n, rng);
        out.push(ImuSample::new(t, gyro, accel));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Pose;
    use crate::imu::{preintegrate, ImuNoise, NavState};
    use crate::sim::trajectory::{Knot, PathBuilder};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noiseless(rate: f64, bias: ImuBias) -> ImuSimParams {
        ImuSimParams {
            rate,
            bias,
            gyro_noise: 0.0,
            accel_noise: 0.0,
            ..ImuSimParams::default()
        }
    }

    #[test]
    fn stationary_reads_bias_and_gravity() {
        let bias = ImuBias::new(Vector3::new(0.01, 0.02, -0.03), Vector3::new(1e-3, 0.0, -2e-3));
        let tr = TrajectorySpline::stationary(Vector3::new(1.0, 2.0, 3.0), 0.7, 2.0).unwrap();
        let s = synthesize_imu(&tr, &noiseless(100.0, bias), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(s.len(), 201);
        let expect_a = tr.pose(0.0).rotation.inverse() * Vector3::new(0.0, 0.0, 9.81) + bias.accel;
        for x in &s {
            assert_eq!(x.gyro, bias.gyro);
            assert!((x.accel - expect_a).norm() < 1e-15);
        }
    }

    #[test]
    fn constant_yaw_rate() {
        let w = std::f64::consts::FRAC_PI_2;
        let tr = TrajectorySpline::new(vec![
            Knot {
                yaw_rate: w,
                ..Knot::at_rest(0.0, Vector3::zeros(), 0.0)
            },
            Knot {
                yaw_rate: w,
                ..Knot::at_rest(2.0, Vector3::zeros(), 2.0 * w)
            },
        ])
        .unwrap();
        let s = synthesize_imu(&tr, &noiseless(100.0, ImuBias::default()), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for x in &s {
            assert!((x.gyro - Vector3::new(0.0, 0.0, w)).norm() < 1e-12);
        }
    }

    #[test]
    fn preintegration_round_trip_reaches_the_endpoint() {
        let tr = PathBuilder::new(Vector3::zeros(), 0.0, 1.0)
            .move_to(Vector3::new(3.0, 0.0, 0.5))
            .turn_to(1.2)
            .move_to(Vector3::new(3.0 + 2.0 * 1.2_f64.cos(), 2.0 * 1.2_f64.sin(), 0.5))
            .hold(3.0)
            .build()
            .unwrap();
        assert!(tr.duration() >= 10.0);
        let params = noiseless(400.0, ImuBias::default());
        let s = synthesize_imu(&tr, &params, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let pim = preintegrate(&s, &ImuBias::default(), &ImuNoise::default()).unwrap();
        let start = NavState::new(tr.pose(0.0), Vector3::zeros(), ImuBias::default());
        let end = pim.predict(&start, &params.gravity);
        let truth: Pose = tr.pose(s.last().unwrap().t);
        assert!(
            (end.pose.translation - truth.translation).norm() < 1e-4,
            "{}",
            (end.pose.translation - truth.translation).norm()
        );
        assert!(end.pose.rotation_angle_to(&truth) < 1e-6);
    }
}
