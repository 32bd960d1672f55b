//! Spherical projection of scans into depth images and normal extraction.

mod normals;
mod projection;

pub use normals::{compute_normals, compute_normals_indexed, NormalParams, CONSENSUS_DISTANCE, RANGE_JUMP_GUARD};
pub use projection::{
    project, spherical_frame, spherical_to_cartesian_table, unproject, ProjectionParams, RangeImage, RangePixel,
};
