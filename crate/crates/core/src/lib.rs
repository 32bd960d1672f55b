//! LiDAR-inertial odometry and mapping on normal clouds.
//!
//! Scans are projected into depth images, turned into clouds of points with unit
//! normals, and registered against a keyframe submap with a normal-gated
//! point-to-plane Gauss-Newton. The spread of matched normals flags degenerate
//! geometry and shapes the measurement covariance. Keyframes, IMU
//! preintegration and viewpoint-based loop closures are fused in a pose graph.
//! The [`sim`] module generates synthetic scenes, LiDAR scans and IMU streams
//! with exact ground truth.

pub mod cli;
pub mod cloud;
pub mod degeneracy;
pub mod error;
pub mod geom;
pub mod imu;
pub mod io;
pub mod loop_closure;
pub mod pipeline;
pub mod pose_graph;
pub mod range_image;
pub mod registration;
pub mod sim;

pub use cloud::{Frame, NormalCloud, NormalPoint};
pub use error::{Error, Result};
