use std::collections::HashMap;

use nalgebra::Vector3;

use crate::cloud::{NormalCloud, NormalPoint};

/// Integer voxel index; `key(p)` is shared by every point of the half-open cube `[i·v, (i+1)·v)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelKey {
    pub ix: i64,
    pub iy: i64,
    pub iz: i64,
}

impl VoxelKey {
    pub fn of(p: &Vector3<f64>, voxel: f64) -> Self {
        Self {
            ix: (p.x / voxel).floor() as i64,
            iy: (p.y / voxel).floor() as i64,
            iz: (p.z / voxel).floor() as i64,
        }
    }
}

#[derive(Default)]
struct Accum {
    sum_p: Vector3<f64>,
    sum_n: Vector3<f64>,
    count: usize,
}

/// Below this norm a merged normal is treated as cancelled and its voxel dropped.
const MIN_MEAN_NORMAL: f64 = 1e-6;

/// One point per occupied voxel: the member centroid with the renormalized mean normal.
///
/// Output order follows the first appearance of each voxel in the input.
pub fn voxel_downsample(cloud: &NormalCloud, voxel: f64) -> NormalCloud {
    assert!(voxel > 0.0, "voxel size must be positive");
    let mut slots: HashMap<VoxelKey, usize> = HashMap::with_capacity(cloud.len());
    let mut accums: Vec<Accum> = Vec::new();
    for pt in cloud.iter() {
        let key = VoxelKey::of(&pt.position, voxel);
        let slot = *slots.entry(key).or_insert_with(|| {
            accums.push(Accum::default());
            accums.len() - 1
        });
        let acc = &mut accums[slot];
        acc.sum_p += pt.position;
        acc.sum_n += pt.normal;
        acc.count += 1;
    }
    let points = accums
        .into_iter()
        .filter_map(|acc| {
            let mean_n = acc.sum_n / acc.count as f64;
            let norm = mean_n.norm();
            (norm >= MIN_MEAN_NORMAL).then(|| NormalPoint {
                position: acc.sum_p / acc.count as f64,
                normal: mean_n / norm,
            })
        })
        .collect();
    NormalCloud::new(points, cloud.frame)
}
