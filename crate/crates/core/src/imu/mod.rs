//! IMU samples, scan deskewing and on-manifold preintegration.

mod buffer;
mod deskew;
mod preintegration;

pub use buffer::ImuBuffer;
pub use deskew::{deskew, DeskewedScan};
pub use preintegration::{preintegrate, Matrix9, PreintegratedImu, Vector9};

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::geom::Pose;

/// One IMU reading in the IMU (body) frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    /// Seconds.
    pub t: f64,
    /// Angular rate, rad/s.
    pub gyro: Vector3<f64>,
    /// Specific force, m/s².
    pub accel: Vector3<f64>,
}

impl ImuSample {
    pub fn new(t: f64, gyro: Vector3<f64>, accel: Vector3<f64>) -> Self {
        Self { t, gyro, accel }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.gyro.iter().all(|v| v.is_finite()) && self.accel.iter().all(|v| v.is_finite())
    }

    /// Linear interpolation to time `t`.
    pub fn lerp(&self, other: &ImuSample, t: f64) -> ImuSample {
        let span = other.t - self.t;
        let a = if span > 0.0 { (t - self.t) / span } else { 0.0 };
        ImuSample {
            t,
            gyro: self.gyro + (other.gyro - self.gyro) * a,
            accel: self.accel + (other.accel - self.accel) * a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImuBias {
    /// Accelerometer bias, m/s².
    pub accel: Vector3<f64>,
    /// Gyroscope bias, rad/s.
    pub gyro: Vector3<f64>,
}

impl ImuBias {
    pub fn new(accel: Vector3<f64>, gyro: Vector3<f64>) -> Self {
        Self { accel, gyro }
    }
}

/// Continuous-time noise densities of the IMU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuNoise {
    /// rad/s/√Hz
    pub gyro: f64,
    /// m/s²/√Hz
    pub accel: f64,
    /// Gyro bias random walk, rad/s²/√Hz.
    pub gyro_bias_rw: f64,
    /// Accelerometer bias random walk, m/s³/√Hz.
    pub accel_bias_rw: f64,
}

impl Default for ImuNoise {
    fn default() -> Self {
        Self {
            gyro: 1.7e-4,
            accel: 2.0e-3,
            gyro_bias_rw: 1.0e-5,
            accel_bias_rw: 1.0e-4,
        }
    }
}

/// Pose, world-frame velocity and biases of the IMU body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState {
    pub pose: Pose,
    pub velocity: Vector3<f64>,
    pub bias: ImuBias,
}

impl Default for NavState {
    fn default() -> Self {
        Self {
            pose: Pose::identity(),
            velocity: Vector3::zeros(),
            bias: ImuBias::default(),
        }
    }
}

impl NavState {
    pub fn new(pose: Pose, velocity: Vector3<f64>, bias: ImuBias) -> Self {
        Self { pose, velocity, bias }
    }
}

/// Result of the stationary bootstrap: initial attitude, gravity and gyro bias.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GravityBootstrap {
    /// Roll/pitch-only attitude that maps the measured specific force onto +z.
    pub attitude: Rotation3<f64>,
    /// World gravity vector `(0, 0, −|f̄|)`.
    pub gravity: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
}

/// Averages the samples of a stationary interval to fix roll, pitch, gravity magnitude and gyro bias.
pub fn bootstrap_gravity(samples: &[ImuSample]) -> Result<GravityBootstrap, crate::error::ImuError> {
    if samples.is_empty() {
        return Err(crate::error::ImuError::Bootstrap("no samples in the stationary window".into()));
    }
    let n = samples.len() as f64;
    let mean_f = samples.iter().map(|s| s.accel).sum::<Vector3<f64>>() / n;
    let mean_w = samples.iter().map(|s| s.gyro).sum::<Vector3<f64>>() / n;
    let g = mean_f.norm();
    if g < 1.0 {
        return Err(crate::error::ImuError::Bootstrap(format!(
            "specific force {g:.3} m/s² is too small for a gravity estimate"
        )));
    }
    let attitude = Rotation3::rotation_between(&mean_f, &Vector3::z()).unwrap_or_else(|| {
        // Upside down: any half turn about a horizontal axis.
        Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI)
    });
    // Strip yaw so the initial heading is zero.
    let (roll, pitch, _) = attitude.euler_angles();
    let attitude = Rotation3::from_euler_angles(roll, pitch, 0.0);
    Ok(GravityBootstrap {
        attitude,
        gravity: Vector3::new(0.0, 0.0, -g),
        gyro_bias: mean_w,
    })
}

pub(crate) fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    crate::geom::hat(v)
}
