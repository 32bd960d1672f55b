//! Spinning multi-beam LiDAR model and scan synthesis.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::scene::{Hit, Scene};
use crate::error::SimError;
use crate::geom::Pose;
use crate::range_image::ProjectionParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarModel {
    pub channels: usize,
    /// Azimuth samples per revolution.
    pub samples: usize,
    /// Upper edge of the vertical field of view, radians.
    pub fov_up: f64,
    /// Lower edge of the vertical field of view, radians.
    pub fov_down: f64,
    /// Revolutions per second.
    pub spin_rate: f64,
    /// Standard deviation of the Gaussian range noise, metres.
    pub range_noise: f64,
    pub max_range: f64,
    pub min_range: f64,
}

impl Default for LidarModel {
    fn default() -> Self {
        Self {
            channels: 64,
            samples: 1024,
            fov_up: 22.5_f64.to_radians(),
            fov_down: -22.5_f64.to_radians(),
            spin_rate: 10.0,
            range_noise: 0.01,
            max_range: 60.0,
            min_range: 0.3,
        }
    }
}

impl LidarModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.channels >= 2
            && self.samples >= 8
            && self.fov_up > self.fov_down
            && self.spin_rate > 0.0
            && self.range_noise >= 0.0
            && self.max_range > self.min_range
            && self.min_range >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidParameter(format!("inconsistent lidar model {self:?}")))
        }
    }

    /// Depth-image geometry whose cells hold exactly one beam each.
    pub fn projection(&self) -> ProjectionParams {
        ProjectionParams {
            fov_max: self.fov_up,
            fov_min: self.fov_down,
            height: self.channels,
            width: self.samples,
        }
    }

    pub fn period(&self) -> f64 {
        1.0 / self.spin_rate
    }

    /// Unit beam direction for `channel` (top first) and `column`, at cell-centre angles.
    pub fn beam(&self, channel: usize, column: usize) -> Vector3<f64> {
        let ver_res = (self.fov_up - self.fov_down) / self.channels as f64;
        let hor_res = 2.0 * PI / self.samples as f64;
        let elevation = self.fov_up - (channel as f64 + 0.5) * ver_res;
        let azimuth = PI - (column as f64 + 0.5) * hor_res;
        Vector3::new(
            elevation.cos() * azimuth.cos(),
            elevation.cos() * azimuth.sin(),
            elevation.sin(),
        )
    }

    /// Time of `column` relative to the scan start.
    pub fn column_offset(&self, column: usize) -> f64 {
        column as f64 / (self.samples as f64 * self.spin_rate)
    }
}

/// One return, expressed in the sensor frame at its own capture time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimPoint {
    pub t_offset: f64,
    pub position: Vector3<f64>,
    /// Ground-truth surface normal, turned toward the sensor.
    pub normal: Vector3<f64>,
    pub surface: usize,
    pub room: Option<u32>,
    pub channel: usize,
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimScan {
    pub start_time: f64,
    pub points: Vec<SimPoint>,
}

impl SimScan {
    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.points.iter().map(|p| p.position).collect()
    }
}

/// Casts one ray per (channel, column); the sensor pose may change across the revolution.
///
/// Rays are traced in parallel; noise is drawn afterwards in column-major order so the
/// result depends only on the generator state.
pub fn raycast_scan<F, R>(scene: &Scene, pose_at: F, model: &LidarModel, t0: f64, rng: &mut R) -> SimScan
where
    F: Fn(f64) -> Pose + Sync,
    R: Rng + ?Sized,
{
    let columns: Vec<Vec<(usize, Hit, Vector3<f64>)>> = (0..model.samples)
        .into_par_iter()
        .map(|k| {
            let offset = model.column_offset(k);
            let pose = pose_at(t0 + offset);
            (0..model.channels)
                .filter_map(|i| {
                    let beam = model.beam(i, k);
                    let dir = pose.rotate(&beam);
                    scene
                        .raycast(&pose.translation, &dir, model.max_range)
                        .map(|hit| (i, Hit { normal: pose.rotation.inverse() * hit.normal, ..hit }, beam))
                })
                .collect()
        })
        .collect();

    let noise = (model.range_noise > 0.0).then(|| Normal::new(0.0, model.range_noise).expect("finite sigma"));
    let mut points = Vec::with_capacity(columns.iter().map(Vec::len).sum());
    for (k, hits) in columns.into_iter().enumerate() {
        let t_offset = model.column_offset(k);
        for (i, hit, beam) in hits {
            let range = match &noise {
                Some(n) => hit.range + n.sample(rng),
                None => hit.range,
            };
            if range < model.min_range || range > model.max_range {
                continue;
            }
            points.push(SimPoint {
                t_offset,
                position: beam * range,
                normal: hit.normal,
                surface: hit.surface,
                room: hit.room,
                channel: i,
                column: k,
            });
        }
    }
    SimScan { start_time: t0, points }
}

/// Scan from a sensor held at `pose` for the whole revolution.
pub fn raycast_static<R: Rng + ?Sized>(scene: &Scene, pose: &Pose, model: &LidarModel, t0: f64, rng: &mut R) -> SimScan {
    let p = *pose;
    raycast_scan(scene, move |_| p, model, t0, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn room() -> Scene {
        let mut s = Scene::new();
        // 10 x 8 x 3 box seen from inside.
        let (lx, ly, lz) = (10.0, 8.0, 3.0);
        let o = Vector3::new(-5.0, -4.0, -1.5);
        let (ex, ey, ez) = (Vector3::new(lx, 0.0, 0.0), Vector3::new(0.0, ly, 0.0), Vector3::new(0.0, 0.0, lz));
        s.add_rect(o, ey, ez, Vector3::x(), None).unwrap();
        s.add_rect(o + ex, ey, ez, -Vector3::x(), None).unwrap();
        s.add_rect(o, ex, ez, Vector3::y(), None).unwrap();
        s.add_rect(o + ey, ex, ez, -Vector3::y(), None).unwrap();
        s.add_rect(o, ex, ey, Vector3::z(), None).unwrap();
        s.add_rect(o + ez, ex, ey, -Vector3::z(), None).unwrap();
        s.finalize();
        s
    }

    fn noiseless() -> LidarModel {
        LidarModel {
            range_noise: 0.0,
            ..LidarModel::default()
        }
    }

    #[test]
    fn beams_land_in_their_own_pixel() {
        let m = LidarModel::default();
        let params = m.projection();
        for (i, k) in [(0, 0), (31, 512), (63, 1023), (10, 700)] {
            assert_eq!(params.pixel_of(&m.beam(i, k)), Some((k, i)));
        }
    }

    #[test]
    fn noiseless_points_lie_on_their_surfaces() {
        let scene = room();
        let pose = Pose::from_yaw(0.3, Vector3::new(0.5, -0.2, 0.1));
        let scan = raycast_static(&scene, &pose, &noiseless(), 0.0, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(scan.points.len() > 60_000);
        for p in &scan.points {
            let world = pose.transform_point(&p.position);
            assert!(scene.plane_distance(p.surface, &world).unwrap() < 1e-9);
            let n_world = pose.rotate(&p.normal);
            let rect = scene.surface(p.surface).unwrap();
            assert!((n_world.dot(&rect.normal).abs() - 1.0).abs() < 1e-12);
            assert!(p.normal.dot(&p.position) < 0.0);
        }
    }

    #[test]
    fn moving_sensor_smears_the_scan() {
        // Sensor at 1 m/s along x; the wall is at x = 5 and every beam looking at it
        // sees the range shrink by the distance travelled since the scan start.
        let mut scene = Scene::new();
        scene
            .add_rect(
                Vector3::new(5.0, -50.0, -50.0),
                Vector3::new(0.0, 100.0, 0.0),
                Vector3::new(0.0, 0.0, 100.0),
                -Vector3::x(),
                None,
            )
            .unwrap();
        scene.finalize();
        let model = noiseless();
        let scan = raycast_scan(
            &scene,
            |t| Pose::from_translation(Vector3::new(t, 0.0, 0.0)),
            &model,
            0.0,
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        // Column 0 looks along −x; the wall spans roughly the middle half of the revolution.
        let first = scan.points.first().unwrap();
        let last = scan.points.last().unwrap();
        assert!(first.t_offset < 0.03 && last.t_offset > 0.07);
        for p in &scan.points {
            let world_x = p.t_offset + p.position.x;
            assert!((world_x - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let scene = room();
        let m = LidarModel::default();
        let a = raycast_static(&scene, &Pose::identity(), &m, 0.0, &mut ChaCha8Rng::seed_from_u64(9));
        let b = raycast_static(&scene, &Pose::identity(), &m, 0.0, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }
}
