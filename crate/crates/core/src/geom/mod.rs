//! Rigid-body algebra, spatial search, downsampling and trajectory alignment.

mod align;
mod kdtree;
mod lie;
mod pose;
mod voxel;

pub use align::{align_points, ate_rmse, umeyama_align};
pub use kdtree::KdTree;
pub use lie::{
    hat, se3_exp, se3_log, so3_exp, so3_log, so3_right_jacobian, so3_right_jacobian_inv, SMALL_ANGLE,
};
pub use pose::Pose;
pub use voxel::{voxel_downsample, VoxelKey};
