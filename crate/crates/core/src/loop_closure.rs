//! Viewpoint-based loop closure.
//!
//! A nearby older keyframe is rendered into the current sensor view with a
//! z-buffer. Points whose normals face away from the ray (N⁻) that sit behind a
//! nearby sensor-facing point (N⁺) are back faces seen through a wall and are
//! dropped. Pixels valid in both views are matched by range and normal angle,
//! the matched pairs are registered, and the result becomes a loop factor only
//! if the matched normals constrain all three translation directions.

use nalgebra::{Matrix6, Vector3};

use crate::cloud::{Frame, NormalCloud, NormalPoint};
use crate::degeneracy::{analyze, measurement_covariance, normal_covariance, DegeneracyParams};
use crate::geom::{KdTree, Pose};
use crate::range_image::ProjectionParams;
use crate::registration::{register, Correspondence, Keyframe, RegistrationParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopParams {
    pub exclusion_count: usize,
    pub radius: f64,
    /// Side of the square N⁻ neighbourhood, pixels (odd).
    pub neighborhood: usize,
    pub radial_thresh: f64,
    pub angle_thresh: f64,
    pub min_matches: usize,
    pub registration: RegistrationParams,
    pub degeneracy: DegeneracyParams,
}

impl Default for LoopParams {
    fn default() -> Self {
        Self {
            exclusion_count: 10,
            radius: 10.0,
            neighborhood: 3,
            radial_thresh: 0.3,
            angle_thresh: 30f64.to_radians(),
            min_matches: 20,
            registration: RegistrationParams::default(),
            degeneracy: DegeneracyParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopCandidate {
    pub current: usize,
    pub target: usize,
    /// Maps target-keyframe coordinates into the current sensor frame.
    pub initial: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Facing {
    /// `n·r̂ ≤ 0`: the surface faces the sensor.
    Toward,
    Away,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewPixel {
    pub range: f64,
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub facing: Facing,
    /// Index of the point in the projected cloud.
    pub source: usize,
}

/// A normal cloud rendered into a depth image, closest point per pixel.
#[derive(Debug, Clone)]
pub struct ProjectedView {
    pub params: ProjectionParams,
    pixels: Vec<Option<ViewPixel>>,
}

impl ProjectedView {
    pub fn get(&self, u: usize, v: usize) -> Option<&ViewPixel> {
        self.pixels[v * self.params.width + u].as_ref()
    }

    pub fn valid_count(&self) -> usize {
        self.pixels.iter().flatten().count()
    }

    /// Valid pixels as `(u, v, pixel)`, row-major.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, usize, &ViewPixel)> + '_ {
        let w = self.params.width;
        self.pixels
            .iter()
            .enumerate()
            .filter_map(move |(i, p)| p.as_ref().map(|p| (i % w, i / w, p)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopFactor {
    pub current: usize,
    pub target: usize,
    /// `T_target⁻¹·T_current`.
    pub relative: Pose,
    /// Ordered (rot, trans), current frame.
    pub covariance: Matrix6<f64>,
    pub matches: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LoopRejection {
    NoCandidate,
    InsufficientMatches(usize),
    Diverged,
    /// Smallest normal-covariance eigenvalue.
    Degenerate(f64),
}

impl LoopRejection {
    pub fn reason(&self) -> &'static str {
        match self {
            LoopRejection::NoCandidate => "no-candidate",
            LoopRejection::InsufficientMatches(_) => "insufficient-matches",
            LoopRejection::Diverged => "diverged",
            LoopRejection::Degenerate(_) => "degenerate",
        }
    }
}

/// Nearest older keyframe to `poses[current]`, skipping the `exclusion_count` just before it.
pub fn find_candidate(poses: &[Pose], current: usize, exclusion_count: usize, radius: f64) -> Option<LoopCandidate> {
    let eligible = current.checked_sub(exclusion_count)?;
    if eligible == 0 || current >= poses.len() {
        return None;
    }
    let tree = KdTree::from_iter(poses[..eligible].iter().map(|p| p.translation));
    let (target, dist) = tree.nearest(&poses[current].translation)?;
    (dist <= radius).then(|| LoopCandidate {
        current,
        target,
        initial: poses[current].inverse().compose(&poses[target]),
    })
}

/// Z-buffered projection of a sensor-frame normal cloud.
pub fn project_view(cloud: &NormalCloud, params: &ProjectionParams) -> ProjectedView {
    let mut pixels: Vec<Option<ViewPixel>> = vec![None; params.len()];
    for (i, p) in cloud.iter().enumerate() {
        let range = p.position.norm();
        if range <= 0.0 {
            continue;
        }
        let Some((u, v)) = params.pixel_of(&p.position) else {
            continue;
        };
        let slot = &mut pixels[v * params.width + u];
        if slot.as_ref().is_some_and(|old| old.range <= range) {
            continue;
        }
        let facing = if p.normal.dot(&p.position) <= 0.0 {
            Facing::Toward
        } else {
            Facing::Away
        };
        *slot = Some(ViewPixel {
            range,
            point: p.position,
            normal: p.normal,
            facing,
            source: i,
        });
    }
    ProjectedView { params: *params, pixels }
}

/// Renders the target cloud from the current viewpoint; `relative` maps target into current.
pub fn project_target(target: &NormalCloud, relative: &Pose, params: &ProjectionParams) -> ProjectedView {
    project_view(&target.transformed(relative, Frame::Sensor), params)
}

/// Drops every N⁻ pixel that lies behind an N⁺ pixel within the square neighbourhood.
pub fn visibility_filter(view: &ProjectedView, neighborhood: usize) -> ProjectedView {
    let (w, h) = (view.params.width, view.params.height);
    let half = (neighborhood / 2) as isize;
    let mut out = view.clone();
    for (u, v, px) in view.iter_valid() {
        if px.facing != Facing::Toward {
            continue;
        }
        for dv in -half..=half {
            let vv = v as isize + dv;
            if vv < 0 || vv >= h as isize {
                continue;
            }
            for du in -half..=half {
                // Azimuth wraps around.
                let uu = (u as isize + du).rem_euclid(w as isize) as usize;
                let idx = vv as usize * w + uu;
                if out.pixels[idx]
                    .as_ref()
                    .is_some_and(|n| n.facing == Facing::Away && n.range > px.range)
                {
                    out.pixels[idx] = None;
                }
            }
        }
    }
    out
}

/// Pixel-wise pairs whose ranges and normals agree. `query` indexes the current cloud,
/// `target` the target cloud; points are in the current frame.
pub fn match_projections(
    current: &ProjectedView,
    target: &ProjectedView,
    radial_thresh: f64,
    angle_thresh: f64,
) -> Vec<Correspondence> {
    let cos_min = angle_thresh.cos();
    current
        .iter_valid()
        .filter_map(|(u, v, c)| {
            let t = target.get(u, v)?;
            ((c.range - t.range).abs() <= radial_thresh && c.normal.dot(&t.normal) >= cos_min).then_some(Correspondence {
                query: c.source,
                target: t.source,
                normal: c.normal,
                query_point: c.point,
                target_point: t.point,
            })
        })
        .collect()
}

/// Full loop test of `current` against `target`.
///
/// `current_query` is the downsampled current cloud in the current sensor frame.
pub fn close_loop(
    current: &Keyframe,
    current_query: &NormalCloud,
    target: &Keyframe,
    projection: &ProjectionParams,
    params: &LoopParams,
) -> Result<LoopFactor, LoopRejection> {
    let initial = current.pose.inverse().compose(&target.pose);
    let current_view = project_view(current_query, projection);
    let target_view = visibility_filter(&project_target(&target.cloud, &initial, projection), params.neighborhood);
    let matches = match_projections(&current_view, &target_view, params.radial_thresh, params.angle_thresh);
    if matches.len() < params.min_matches {
        return Err(LoopRejection::InsufficientMatches(matches.len()));
    }
    let query: NormalCloud = matches.iter().map(|m| current_query.points[m.query]).collect();
    let submap = NormalCloud::new(
        matches.iter().map(|m| target.cloud.points[m.target]).collect::<Vec<NormalPoint>>(),
        Frame::Keyframe,
    );
    let result = match register(&query, &submap, &initial, &params.registration) {
        Ok(r) if r.converged && r.pose.is_finite() => r,
        _ => return Err(LoopRejection::Diverged),
    };
    let report = normal_covariance(&result.correspondences)
        .and_then(|c| analyze(&c, params.degeneracy.lambda_threshold))
        .map_err(|_| LoopRejection::Diverged)?;
    if report.degenerate {
        return Err(LoopRejection::Degenerate(report.eigenvalues[0]));
    }
    Ok(LoopFactor {
        current: current.id,
        target: target.id,
        relative: result.pose.inverse(),
        covariance: measurement_covariance(&report, &params.degeneracy),
        matches: matches.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ProjectionParams {
        ProjectionParams::new(22.5f64.to_radians(), -22.5f64.to_radians(), 64, 1024).unwrap()
    }

    fn line(n: usize) -> Vec<Pose> {
        (0..n).map(|i| Pose::from_translation(Vector3::new(i as f64, 0.0, 0.0))).collect()
    }

    #[test]
    fn candidate_search() {
        // Walking back along a line: the last eleven are excluded, the rest are far away.
        let mut poses = line(15);
        poses.push(Pose::identity());
        assert!(find_candidate(&line(11), 10, 10, 10.0).is_none());
        let c = find_candidate(&poses, 15, 10, 10.0).unwrap();
        assert_eq!(c.target, 0);
        assert!(c.initial.distance_to(&Pose::identity()) < 1e-12);
        // Equidistant: lower id wins.
        let mut tie = vec![
            Pose::from_translation(Vector3::new(1.0, 0.0, 0.0)),
            Pose::from_translation(Vector3::new(-1.0, 0.0, 0.0)),
        ];
        tie.extend((0..10).map(|_| Pose::from_translation(Vector3::new(50.0, 0.0, 0.0))));
        tie.push(Pose::identity());
        assert_eq!(find_candidate(&tie, 12, 10, 10.0).unwrap().target, 0);
        assert!(find_candidate(&tie, 12, 10, 0.5).is_none());
    }

    #[test]
    fn zbuffer_keeps_the_closest_point() {
        let p = params();
        let dir = Vector3::new(1.0, 0.2, 0.05).normalize();
        let cloud = NormalCloud::new(
            vec![
                NormalPoint::new(dir * 6.0, dir),
                NormalPoint::new(dir * 5.0, -dir),
                NormalPoint::new(dir * 7.0, -dir),
            ],
            Frame::Sensor,
        );
        let view = project_view(&cloud, &p);
        assert_eq!(view.valid_count(), 1);
        let (_, _, px) = view.iter_valid().next().unwrap();
        assert_eq!((px.source, px.facing), (1, Facing::Toward));
        assert_eq!(project_view(&NormalCloud::default(), &p).valid_count(), 0);
    }

    #[test]
    fn filter_removes_only_hidden_back_faces() {
        let p = params();
        let (u, v) = (300usize, 30usize);
        let at = |du: isize, dv: isize, r: f64, toward: bool| {
            let dir = crate::range_image::unproject((u as isize + du) as usize, (v as isize + dv) as usize, 1.0, &p)
                .unwrap();
            NormalPoint::new(dir * r, if toward { -dir } else { dir })
        };
        let cloud = NormalCloud::new(
            vec![
                at(0, 0, 5.0, true),
                at(1, 1, 6.0, false),
                at(-1, 0, 4.0, false),
                at(2, 0, 6.0, false),
                at(0, 1, 7.0, true),
            ],
            Frame::Sensor,
        );
        let view = project_view(&cloud, &p);
        assert_eq!(view.valid_count(), 5);
        let filtered = visibility_filter(&view, 3);
        let kept: Vec<usize> = filtered.iter_valid().map(|(_, _, px)| px.source).collect();
        // Behind and adjacent: removed. Nearer: kept. Two pixels away: outside 3x3.
        assert_eq!(kept.len(), 4);
        assert!(!kept.contains(&1));
        assert!(kept.contains(&2) && kept.contains(&3) && kept.contains(&4));
        // A 5x5 neighbourhood reaches the pixel two columns away.
        let wide = visibility_filter(&view, 5);
        assert!(!wide.iter_valid().any(|(_, _, px)| px.source == 3));
    }

    #[test]
    fn projection_matching_gates() {
        let p = params();
        let pts: Vec<NormalPoint> = (0..200)
            .map(|i| {
                let dir = crate::range_image::unproject(100 + i, 32, 1.0, &p).unwrap();
                NormalPoint::new(dir * 5.0, -dir)
            })
            .collect();
        let cloud = NormalCloud::new(pts, Frame::Sensor);
        let view = project_view(&cloud, &p);
        assert_eq!(match_projections(&view, &view, 0.3, 0.5).len(), 200);
        let pushed = NormalCloud::new(
            cloud.iter().map(|q| NormalPoint::new(q.position * 1.2, q.normal)).collect(),
            Frame::Sensor,
        );
        assert!(match_projections(&view, &project_view(&pushed, &p), 0.5, 0.5).is_empty());
    }
}
