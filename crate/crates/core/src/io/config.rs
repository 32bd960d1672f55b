//! Run configuration: flat `key = value` TOML, every key optional.
//!
//! Angles are given in degrees. Unknown keys are rejected, and every value is
//! checked against its documented range before use.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::IoError;
use crate::imu::ImuNoise;
use crate::pipeline::PipelineConfig;
use crate::range_image::ProjectionParams;
use crate::sim::{LidarModel, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // Range image.
    pub channels: usize,
    pub width: usize,
    pub fov_up_deg: f64,
    pub fov_down_deg: f64,
    /// Defaults to 3 for up to 32 channels, 5 above.
    pub normal_window: Option<usize>,

    // Registration.
    pub voxel: f64,
    pub keyframe_voxel: f64,
    pub dist_thresh: f64,
    pub angle_thresh_deg: f64,
    pub max_iterations: usize,
    pub min_correspondences: usize,
    pub submap_length: usize,

    // Keyframes.
    pub keyframe_angle_deg: f64,
    pub keyframe_distance: f64,

    // Degeneracy.
    pub lambda_threshold: f64,
    pub degeneracy_scale: f64,
    pub sigma_rot: f64,

    // Loop closure.
    pub loop_enabled: bool,
    pub loop_radius: f64,
    pub loop_exclusion: usize,
    pub loop_neighborhood: usize,
    pub loop_radial_thresh: f64,
    pub loop_angle_thresh_deg: f64,
    pub loop_min_matches: usize,

    // IMU.
    pub gyro_noise: f64,
    pub accel_noise: f64,
    pub gyro_bias_rw: f64,
    pub accel_bias_rw: f64,
    pub bootstrap_duration: f64,

    // Simulation only.
    pub sim_range_noise: f64,
    pub sim_spin_rate: f64,
    pub sim_duration: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        let lidar = LidarModel::default();
        Self {
            channels: p.projection.height,
            width: p.projection.width,
            fov_up_deg: p.projection.fov_max.to_degrees(),
            fov_down_deg: p.projection.fov_min.to_degrees(),
            normal_window: None,
            voxel: p.voxel,
            keyframe_voxel: p.keyframe_voxel,
            dist_thresh: p.registration.dist_thresh,
            angle_thresh_deg: p.registration.angle_thresh.to_degrees(),
            max_iterations: p.registration.max_iterations,
            min_correspondences: p.registration.min_correspondences,
            submap_length: p.submap_length,
            keyframe_angle_deg: p.keyframe.angle.to_degrees(),
            keyframe_distance: p.keyframe.distance,
            lambda_threshold: p.degeneracy.lambda_threshold,
            degeneracy_scale: p.degeneracy.scale,
            sigma_rot: p.degeneracy.sigma_rot,
            loop_enabled: p.loop_enabled,
            loop_radius: p.loop_closure.radius,
            loop_exclusion: p.loop_closure.exclusion_count,
            loop_neighborhood: p.loop_closure.neighborhood,
            loop_radial_thresh: p.loop_closure.radial_thresh,
            loop_angle_thresh_deg: p.loop_closure.angle_thresh.to_degrees(),
            loop_min_matches: p.loop_closure.min_matches,
            gyro_noise: p.imu_noise.gyro,
            accel_noise: p.imu_noise.accel,
            gyro_bias_rw: p.imu_noise.gyro_bias_rw,
            accel_bias_rw: p.imu_noise.accel_bias_rw,
            bootstrap_duration: p.bootstrap_duration,
            sim_range_noise: lidar.range_noise,
            sim_spin_rate: lidar.spin_rate,
            sim_duration: None,
        }
    }
}

fn check(ok: bool, key: &str, value: impl std::fmt::Display, range: &str) -> Result<(), IoError> {
    if ok {
        Ok(())
    } else {
        Err(IoError::Config(format!("`{key}` = {value} is outside {range}")))
    }
}

fn positive(key: &str, v: f64) -> Result<(), IoError> {
    check(v > 0.0 && v.is_finite(), key, v, "(0, ∞)")
}

fn in_range(key: &str, v: f64, lo: f64, hi: f64) -> Result<(), IoError> {
    check(v >= lo && v <= hi, key, v, &format!("[{lo}, {hi}]"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, IoError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| IoError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| super::io_err(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            IoError::Config(m) => IoError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn window(&self) -> usize {
        self.normal_window.unwrap_or(if self.channels <= 32 { 3 } else { 5 })
    }

    pub fn validate(&self) -> Result<(), IoError> {
        check(self.channels >= 2, "channels", self.channels, "[2, ∞)")?;
        check(self.width >= 8, "width", self.width, "[8, ∞)")?;
        in_range("fov_up_deg", self.fov_up_deg, -90.0, 90.0)?;
        in_range("fov_down_deg", self.fov_down_deg, -90.0, 90.0)?;
        check(
            self.fov_up_deg > self.fov_down_deg,
            "fov_up_deg",
            self.fov_up_deg,
            "values above fov_down_deg",
        )?;
        let w = self.window();
        check(w == 3 || w == 5, "normal_window", w, "{3, 5}")?;
        positive("voxel", self.voxel)?;
        positive("keyframe_voxel", self.keyframe_voxel)?;
        positive("dist_thresh", self.dist_thresh)?;
        in_range("angle_thresh_deg", self.angle_thresh_deg, 0.0, 90.0)?;
        check(self.max_iterations >= 1, "max_iterations", self.max_iterations, "[1, ∞)")?;
        check(self.min_correspondences >= 6, "min_correspondences", self.min_correspondences, "[6, ∞)")?;
        in_range("keyframe_angle_deg", self.keyframe_angle_deg, 0.0, 180.0)?;
        positive("keyframe_distance", self.keyframe_distance)?;
        in_range("lambda_threshold", self.lambda_threshold, 0.0, 1.0 / 3.0)?;
        positive("degeneracy_scale", self.degeneracy_scale)?;
        positive("sigma_rot", self.sigma_rot)?;
        positive("loop_radius", self.loop_radius)?;
        check(self.loop_exclusion >= 1, "loop_exclusion", self.loop_exclusion, "[1, ∞)")?;
        check(
            self.loop_neighborhood % 2 == 1,
            "loop_neighborhood",
            self.loop_neighborhood,
            "odd pixel counts",
        )?;
        positive("loop_radial_thresh", self.loop_radial_thresh)?;
        in_range("loop_angle_thresh_deg", self.loop_angle_thresh_deg, 0.0, 90.0)?;
        check(self.loop_min_matches >= 6, "loop_min_matches", self.loop_min_matches, "[6, ∞)")?;
        positive("gyro_noise", self.gyro_noise)?;
        positive("accel_noise", self.accel_noise)?;
        positive("gyro_bias_rw", self.gyro_bias_rw)?;
        positive("accel_bias_rw", self.accel_bias_rw)?;
        positive("bootstrap_duration", self.bootstrap_duration)?;
        check(
            self.sim_range_noise >= 0.0 && self.sim_range_noise.is_finite(),
            "sim_range_noise",
            self.sim_range_noise,
            "[0, ∞)",
        )?;
        positive("sim_spin_rate", self.sim_spin_rate)?;
        if let Some(d) = self.sim_duration {
            positive("sim_duration", d)?;
        }
        Ok(())
    }

    pub fn projection(&self) -> ProjectionParams {
        ProjectionParams {
            fov_max: self.fov_up_deg.to_radians(),
            fov_min: self.fov_down_deg.to_radians(),
            height: self.channels,
            width: self.width,
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        let mut p = PipelineConfig {
            projection: self.projection(),
            normal_window: self.window(),
            voxel: self.voxel,
            keyframe_voxel: self.keyframe_voxel,
            submap_length: self.submap_length,
            loop_enabled: self.loop_enabled,
            imu_noise: ImuNoise {
                gyro: self.gyro_noise,
                accel: self.accel_noise,
                gyro_bias_rw: self.gyro_bias_rw,
                accel_bias_rw: self.accel_bias_rw,
            },
            bootstrap_duration: self.bootstrap_duration,
            ..PipelineConfig::default()
        };
        p.registration.dist_thresh = self.dist_thresh;
        p.registration.angle_thresh = self.angle_thresh_deg.to_radians();
        p.registration.max_iterations = self.max_iterations;
        p.registration.min_correspondences = self.min_correspondences;
        p.registration.degeneracy_guard = self.lambda_threshold;
        p.keyframe.angle = self.keyframe_angle_deg.to_radians();
        p.keyframe.distance = self.keyframe_distance;
        p.degeneracy.lambda_threshold = self.lambda_threshold;
        p.degeneracy.scale = self.degeneracy_scale;
        p.degeneracy.sigma_rot = self.sigma_rot;
        let lc = &mut p.loop_closure;
        lc.radius = self.loop_radius;
        lc.exclusion_count = self.loop_exclusion;
        lc.neighborhood = self.loop_neighborhood;
        lc.radial_thresh = self.loop_radial_thresh;
        lc.angle_thresh = self.loop_angle_thresh_deg.to_radians();
        lc.min_matches = self.loop_min_matches;
        lc.registration = p.registration;
        lc.degeneracy = p.degeneracy;
        p
    }

    /// Simulator settings matching this configuration's sensor.
    pub fn simulation(&self, seed: u64) -> SimConfig {
        let mut sim = SimConfig {
            seed,
            max_duration: self.sim_duration,
            ..SimConfig::default()
        };
        sim.lidar.channels = self.channels;
        sim.lidar.samples = self.width;
        sim.lidar.fov_up = self.fov_up_deg.to_radians();
        sim.lidar.fov_down = self.fov_down_deg.to_radians();
        sim.lidar.range_noise = self.sim_range_noise;
        sim.lidar.spin_rate = self.sim_spin_rate;
        sim.imu.gyro_noise = self.gyro_noise;
        sim.imu.accel_noise = self.accel_noise;
        sim
    }
}
