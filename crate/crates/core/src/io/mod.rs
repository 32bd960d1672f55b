//! File formats: datasets, TUM trajectories, PLY maps, keyframe archives and run configs.

mod config;
mod dataset;
mod keyframes;
mod ply;
mod tum;

pub use config::RunConfig;
pub use dataset::{
    read_dataset, read_imu, write_imu, ScanReader, ScanWriter, GROUND_TRUTH_FILE, IMU_FILE, SCANS_FILE,
};
pub use keyframes::{read_keyframes, write_keyframes};
pub use ply::{export_map, read_ply, write_ply};
pub use tum::{format_sig9, format_tum_line, read_trajectory, write_trajectory};

use std::path::Path;

use nalgebra::Vector3;

use crate::error::IoError;

/// One raw LiDAR sweep: sensor-frame points with time offsets from `start_time`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScanRecord {
    pub start_time: f64,
    pub points: Vec<(f64, Vector3<f64>)>,
}

impl ScanRecord {
    /// Time of the latest point, or the start time for an empty scan.
    pub fn end_time(&self) -> f64 {
        self.start_time + self.points.iter().map(|p| p.0).fold(0.0, f64::max)
    }
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::Io {
        path: path.display().to_string(),
        source,
    }
}
