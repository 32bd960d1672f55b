//! Scan-to-submap registration of normal clouds.
//!
//! The estimate `T` maps submap coordinates into the query frame. Correspondences
//! pair each query point with the closest submap point inside the distance
//! threshold whose normal agrees within the angle threshold, which keeps the two
//! faces of a thin wall apart. The pose is refined by damped Gauss-Newton on the
//! point-to-plane residual `n_q · (T p_t − p_q)` with a left perturbation.
//! When the matched normals leave a translation direction weakly constrained,
//! the step is restricted to the complement so the initial guess survives there.

use nalgebra::{Matrix3, Matrix6, SMatrix, SymmetricEigen, Vector3, Vector6};
use rayon::prelude::*;

use crate::cloud::{Frame, NormalCloud, NormalPoint};
use crate::error::RegistrationError;
use crate::geom::{se3_exp, voxel_downsample, KdTree, Pose};

/// Pose plus normal cloud snapshot; the map is the collection of keyframes.
#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub id: usize,
    pub timestamp: f64,
    /// Sensor pose in the world frame.
    pub pose: Pose,
    /// Sensor-frame normal cloud.
    pub cloud: NormalCloud,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub query: usize,
    pub target: usize,
    /// Query normal, in the query frame.
    pub normal: Vector3<f64>,
    pub query_point: Vector3<f64>,
    /// Target point, in the query frame at selection time.
    pub target_point: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationParams {
    pub dist_thresh: f64,
    pub angle_thresh: f64,
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub min_correspondences: usize,
    pub damping: f64,
    /// Below this smallest eigenvalue of the matched-normal covariance, translation
    /// along its eigenvector is held at the initial guess. Zero disables the guard.
    pub degeneracy_guard: f64,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self {
            dist_thresh: 0.5,
            angle_thresh: 30f64.to_radians(),
            max_iterations: 30,
            step_tolerance: 1e-6,
            min_correspondences: 20,
            damping: 1e-6,
            degeneracy_guard: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Maps submap coordinates into the query frame.
    pub pose: Pose,
    /// Correspondences of the final iteration.
    pub correspondences: Vec<Correspondence>,
    pub iterations: usize,
    pub converged: bool,
    /// Mean |point-to-plane residual| at the final estimate, metres.
    pub mean_residual: f64,
    /// The same quantity at the initial estimate.
    pub initial_mean_residual: f64,
}

/// Submap points with a kd-tree over their positions, built once per registration.
#[derive(Debug, Clone)]
pub struct SubmapIndex {
    cloud: NormalCloud,
    tree: KdTree,
}

impl SubmapIndex {
    pub fn new(cloud: NormalCloud) -> Self {
        let tree = KdTree::from_iter(cloud.positions());
        Self { cloud, tree }
    }

    pub fn cloud(&self) -> &NormalCloud {
        &self.cloud
    }

    pub fn tree(&self) -> &KdTree {
        &self.tree
    }
}

/// Unions the keyframe clouds in the frame of the last keyframe and downsamples them.
pub fn build_submap(keyframes: &[Keyframe], voxel: f64) -> Result<NormalCloud, RegistrationError> {
    let last = keyframes.last().ok_or(RegistrationError::EmptyInput("keyframes"))?;
    let to_last = last.pose.inverse();
    let mut points = Vec::with_capacity(keyframes.iter().map(|k| k.cloud.len()).sum());
    for kf in keyframes {
        let rel = to_last.compose(&kf.pose);
        points.extend(kf.cloud.iter().map(|p| p.transformed(&rel)));
    }
    Ok(voxel_downsample(&NormalCloud::new(points, Frame::Keyframe), voxel))
}

/// Accepts, per query point, the nearest submap point within `dist_thresh` whose normal is
/// within `angle_thresh` of the query normal. Both clouds must share one frame.
pub fn find_correspondences(
    query: &NormalCloud,
    submap: &SubmapIndex,
    dist_thresh: f64,
    angle_thresh: f64,
) -> Vec<Correspondence> {
    let cos_min = angle_thresh.cos();
    query
        .points
        .par_iter()
        .enumerate()
        .filter_map(|(qi, q)| {
            submap
                .tree
                .nearest_within(&q.position, dist_thresh, |ti| {
                    submap.cloud.points[ti].normal.dot(&q.normal) >= cos_min
                })
                .map(|(ti, _)| Correspondence {
                    query: qi,
                    target: ti,
                    normal: q.normal,
                    query_point: q.position,
                    target_point: submap.cloud.points[ti].position,
                })
        })
        .collect()
}

/// Residuals are evaluated against fixed pairs; `x` is the target point after `pose`.
fn point_to_plane(pose: &Pose, submap: &NormalCloud, c: &Correspondence) -> (f64, Vector3<f64>) {
    let x = pose.transform_point(&submap.points[c.target].position);
    (c.normal.dot(&(x - c.query_point)), x)
}

fn cost(pose: &Pose, submap: &NormalCloud, pairs: &[Correspondence]) -> f64 {
    pairs
        .iter()
        .map(|c| point_to_plane(pose, submap, c).0.powi(2))
        .sum()
}

fn mean_abs(pose: &Pose, submap: &NormalCloud, pairs: &[Correspondence]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs
        .iter()
        .map(|c| point_to_plane(pose, submap, c).0.abs())
        .sum::<f64>()
        / pairs.len() as f64
}

/// Pairs the query with the submap under `pose` and reports them in the query frame.
fn associate(query: &NormalCloud, submap: &SubmapIndex, pose: &Pose, params: &RegistrationParams) -> Vec<Correspondence> {
    // Searching in the submap frame keeps the tree fixed across iterations.
    let inv = pose.inverse();
    let moved: NormalCloud = query.iter().map(|p| p.transformed(&inv)).collect();
    let mut pairs = find_correspondences(&moved, submap, params.dist_thresh, params.angle_thresh);
    for c in &mut pairs {
        let q: &NormalPoint = &query.points[c.query];
        c.normal = q.normal;
        c.query_point = q.position;
        c.target_point = pose.transform_point(&c.target_point);
    }
    pairs
}

/// Point-to-plane Gauss-Newton of `query` against `submap`, starting from `init`.
pub fn register(
    query: &NormalCloud,
    submap: &NormalCloud,
    init: &Pose,
    params: &RegistrationParams,
) -> Result<RegistrationResult, RegistrationError> {
    if submap.is_empty() {
        return Err(RegistrationError::EmptyInput("submap"));
    }
    register_indexed(query, &SubmapIndex::new(submap.clone()), init, params)
}

/// Columns spanning the allowed step directions: all six, or with the weakest
/// translation direction replaced by zero when the matched normals are degenerate.
fn step_basis(pairs: &[Correspondence], guard: f64) -> Matrix6<f64> {
    let mut basis = Matrix6::identity();
    if guard <= 0.0 {
        return basis;
    }
    let c = pairs.iter().map(|p| p.normal * p.normal.transpose()).sum::<Matrix3<f64>>() / pairs.len() as f64;
    let eig = SymmetricEigen::new(c);
    let weakest = eig.eigenvalues.imin();
    if eig.eigenvalues[weakest] >= guard {
        return basis;
    }
    let mut col = 3;
    for k in (0..3).filter(|&k| k != weakest) {
        basis.fixed_view_mut::<3, 1>(3, col).copy_from(&eig.eigenvectors.column(k));
        col += 1;
    }
    basis.fixed_view_mut::<6, 1>(0, 5).fill(0.0);
    basis
}

/// [`register`] against a prebuilt index.
pub fn register_indexed(
    query: &NormalCloud,
    index: &SubmapIndex,
    init: &Pose,
    params: &RegistrationParams,
) -> Result<RegistrationResult, RegistrationError> {
    if query.is_empty() {
        return Err(RegistrationError::EmptyInput("query"));
    }
    if index.cloud.is_empty() {
        return Err(RegistrationError::EmptyInput("submap"));
    }
    let submap = &index.cloud;
    let mut pose = *init;
    let mut initial_mean = None;
    let mut converged = false;
    let mut iterations = 0;
    let mut pairs;
    loop {
        pairs = associate(query, index, &pose, params);
        if pairs.len() < params.min_correspondences {
            return Err(RegistrationError::InsufficientOverlap {
                found: pairs.len(),
                required: params.min_correspondences,
                iteration: iterations,
            });
        }
        initial_mean.get_or_insert_with(|| mean_abs(&pose, submap, &pairs));
        if converged || iterations >= params.max_iterations {
            break;
        }
        iterations += 1;

        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for c in &pairs {
            let (r, x) = point_to_plane(&pose, submap, c);
            let mut j = Vector6::zeros();
            j.fixed_rows_mut::<3>(0).copy_from(&x.cross(&c.normal));
            j.fixed_rows_mut::<3>(3).copy_from(&c.normal);
            h += j * j.transpose();
            g += j * r;
        }
        if !h.iter().chain(g.iter()).all(|v| v.is_finite()) {
            return Err(RegistrationError::Numerical(iterations));
        }
        let basis = step_basis(&pairs, params.degeneracy_guard);
        let damped = basis.transpose() * h * basis + SMatrix::<f64, 6, 6>::identity() * params.damping;
        let Some(step) = damped.cholesky().map(|c| -(basis * c.solve(&(basis.transpose() * g)))) else {
            return Err(RegistrationError::Numerical(iterations));
        };

        // Step halving keeps the cost over the current pairs from rising.
        let before = cost(&pose, submap, &pairs);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..12 {
            let candidate = se3_exp(&(step * scale)).compose(&pose);
            if cost(&candidate, submap, &pairs) <= before {
                accepted = Some((candidate, scale));
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some((candidate, scale)) => {
                pose = candidate;
                converged = step.norm() * scale < params.step_tolerance;
            }
            None => converged = true,
        }
    }
    Ok(RegistrationResult {
        mean_residual: mean_abs(&pose, submap, &pairs),
        initial_mean_residual: initial_mean.unwrap_or(0.0),
        pose,
        correspondences: pairs,
        iterations,
        converged,
    })
}
