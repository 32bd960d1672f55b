//! Rotation-only motion compensation of a spinning-LiDAR scan.

use nalgebra::{Rotation3, Vector3};

use super::{ImuBias, ImuBuffer};
use crate::error::ImuError;
use crate::geom::so3_exp;

/// Points expressed in the LiDAR frame at the scan start time.
#[derive(Debug, Clone)]
pub struct DeskewedScan {
    pub start_time: f64,
    pub points: Vec<Vector3<f64>>,
}

/// Rotates every point into the LiDAR frame at `start_time`.
///
/// `points` carry offsets from `start_time`. The bias-corrected gyro is integrated
/// with a constant rate per IMU interval (the mean of its end samples), rotated into
/// the LiDAR frame through `imu_to_lidar`.
pub fn deskew(
    start_time: f64,
    points: &[(f64, Vector3<f64>)],
    imu: &ImuBuffer,
    bias: &ImuBias,
    imu_to_lidar: &Rotation3<f64>,
) -> Result<DeskewedScan, ImuError> {
    if points.is_empty() {
        return Ok(DeskewedScan {
            start_time,
            points: Vec::new(),
        });
    }
    let last_offset = points.iter().map(|p| p.0).fold(0.0, f64::max);
    let samples = imu.slice(start_time, start_time + last_offset)?;

    // Orientation of the LiDAR frame at each sample time relative to the start.
    let mut knots: Vec<(f64, Rotation3<f64>, Vector3<f64>)> = Vec::with_capacity(samples.len());
    let mut orientation = Rotation3::identity();
    for pair in samples.windows(2) {
        let rate = imu_to_lidar * ((pair[0].gyro + pair[1].gyro) * 0.5 - bias.gyro);
        knots.push((pair[0].t - start_time, orientation, rate));
        orientation *= so3_exp(&(rate * (pair[1].t - pair[0].t)));
    }
    if knots.is_empty() {
        // Zero-length scan: every offset is 0.
        return Ok(DeskewedScan {
            start_time,
            points: points.iter().map(|p| p.1).collect(),
        });
    }

    let out = points
        .iter()
        .map(|&(offset, p)| {
            let idx = knots.partition_point(|k| k.0 <= offset).max(1) - 1;
            let (t_knot, rot, rate) = &knots[idx];
            let rotation = rot * so3_exp(&(rate * (offset - t_knot)));
            rotation * p
        })
        .collect();
    Ok(DeskewedScan {
        start_time,
        points: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imu::ImuSample;

    fn constant_rate_buffer(rate: Vector3<f64>) -> ImuBuffer {
        ImuBuffer::from_samples(
            (0..=40)
                .map(|i| ImuSample::new(i as f64 * 0.005, rate, Vector3::new(0.0, 0.0, 9.81)))
                .collect(),
        )
        .unwrap()
    }

    fn points() -> Vec<(f64, Vector3<f64>)> {
        (0..100)
            .map(|i| (i as f64 * 0.001, Vector3::new(3.0 + i as f64 * 0.01, -1.0, 0.5)))
            .collect()
    }

    #[test]
    fn zero_rate_is_identity() {
        let out = deskew(0.0, &points(), &constant_rate_buffer(Vector3::zeros()), &ImuBias::default(), &Rotation3::identity()).unwrap();
        for (a, b) in out.points.iter().zip(points()) {
            assert_eq!(*a, b.1);
        }
    }

    #[test]
    fn cancelled_by_bias() {
        let w = Vector3::new(0.3, -0.2, 1.0);
        let bias = ImuBias::new(Vector3::zeros(), w);
        let out = deskew(0.0, &points(), &constant_rate_buffer(w), &bias, &Rotation3::identity()).unwrap();
        for (a, b) in out.points.iter().zip(points()) {
            assert_eq!(*a, b.1);
        }
    }

    #[test]
    fn constant_yaw_rate_closed_form() {
        // The sensor yaws at 1 rad/s, so a static world point appears rotated by −0.05 rad
        // at t0 + 0.05 s; deskewing restores its scan-start coordinates.
        let world = Vector3::new(4.0, 1.0, 0.3);
        let raw = Rotation3::from_axis_angle(&Vector3::z_axis(), -0.05) * world;
        let out = deskew(
            0.0,
            &[(0.05, raw)],
            &constant_rate_buffer(Vector3::new(0.0, 0.0, 1.0)),
            &ImuBias::default(),
            &Rotation3::identity(),
        )
        .unwrap();
        assert!((out.points[0] - world).norm() < 1e-12);
    }

    #[test]
    fn uncovered_interval_is_reported() {
        let err = deskew(0.1, &[(0.2, Vector3::x())], &constant_rate_buffer(Vector3::zeros()), &ImuBias::default(), &Rotation3::identity())
            .unwrap_err();
        match err {
            ImuError::Uncovered { start, end } => {
                assert_eq!(start, 0.1);
                assert!((end - 0.3).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
