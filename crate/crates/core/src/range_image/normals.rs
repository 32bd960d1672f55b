//! Window-averaged normal extraction from a depth image.
//!
//! For each valid pixel the range derivatives along the image rows (azimuth) and
//! columns (polar angle) are averaged over all adjacent valid pairs inside the
//! window. Each pair derivative is divided by the arc length it spans (`r·sinθ·Δψ`
//! horizontally, `r·Δθ` vertically), so the local normal
//! `[Δr/Δψ, −Δr/Δθ, 1] / c` is dimensionless. It is rotated into Cartesian
//! coordinates by the pixel's spherical frame, turned to face the sensor and
//! finally checked for consensus with the window's points.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rayon::prelude::*;

use super::projection::{spherical_frame, RangeImage};
use crate::cloud::{Frame, NormalCloud, NormalPoint};
use crate::error::RangeImageError;

/// Adjacent pairs whose ranges differ by more than this straddle a depth discontinuity.
pub const RANGE_JUMP_GUARD: f64 = 0.3;
/// Neighbours within this point-to-plane distance support the normal.
pub const CONSENSUS_DISTANCE: f64 = 0.05;
/// Minimum number of adjacent pairs per direction.
const MIN_PAIRS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalParams {
    pub window: usize,
    pub jump_guard: f64,
    pub consensus_distance: f64,
}

impl NormalParams {
    pub fn new(window: usize) -> Result<Self, RangeImageError> {
        if window != 3 && window != 5 {
            return Err(RangeImageError::InvalidWindow(window));
        }
        Ok(Self {
            window,
            jump_guard: RANGE_JUMP_GUARD,
            consensus_distance: CONSENSUS_DISTANCE,
        })
    }

    /// Supporters needed: one third of the window area, rounded up.
    pub fn consensus_count(&self) -> usize {
        (self.window * self.window).div_ceil(3)
    }
}

fn azimuth(p: &Vector3<f64>) -> f64 {
    p.y.atan2(p.x)
}

fn polar(p: &Vector3<f64>) -> f64 {
    p.x.hypot(p.y).atan2(p.z)
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Normals for every pixel that passes the pair and consensus checks, tagged with the
/// source index of the pixel's point.
pub fn compute_normals_indexed(img: &RangeImage, params: &NormalParams) -> Vec<(usize, NormalPoint)> {
    let w = img.width();
    let h = img.height();
    let angles = pixel_angles(img);
    (0..w * h)
        .into_par_iter()
        .filter_map(|i| {
            let (u, v) = (i % w, i / w);
            let center = img.get(u, v)?;
            pixel_normal(img, &angles, u, v, params).map(|n| (center.source, NormalPoint::new(center.point, n)))
        })
        .collect()
}

pub fn compute_normals(img: &RangeImage, params: &NormalParams) -> NormalCloud {
    NormalCloud::new(
        compute_normals_indexed(img, params)
            .into_iter()
            .map(|(_, p)| p)
            .collect(),
        Frame::Sensor,
    )
}

/// Measured ray angles of a stored point.
#[derive(Clone, Copy, Default)]
struct RayAngles {
    azimuth: f64,
    polar: f64,
    sin_polar: f64,
}

/// Ray angles per pixel, computed once per image instead of once per window pair.
fn pixel_angles(img: &RangeImage) -> Vec<RayAngles> {
    let w = img.width();
    (0..w * img.height())
        .into_par_iter()
        .map(|i| {
            img.get(i % w, i / w).map_or_else(RayAngles::default, |px| {
                let polar = polar(&px.point);
                RayAngles {
                    azimuth: azimuth(&px.point),
                    polar,
                    sin_polar: polar.sin(),
                }
            })
        })
        .collect()
}

fn pixel_normal(img: &RangeImage, angles: &[RayAngles], u: usize, v: usize, params: &NormalParams) -> Option<Vector3<f64>> {
    let w = img.width() as i64;
    let h = img.height() as i64;
    let k = (params.window / 2) as i64;
    let center = img.get(u, v)?;
    let at = |u: usize, v: usize| &angles[v * w as usize + u];
    let col = |du: i64| (u as i64 + du).rem_euclid(w) as usize;
    let row = |dv: i64| {
        let r = v as i64 + dv;
        (0..h).contains(&r).then_some(r as usize)
    };

    // Horizontal pairs along increasing u (azimuth decreases); they wrap across the seam.
    let mut sum_u = 0.0;
    let mut n_u = 0usize;
    for dv in -k..=k {
        let Some(vr) = row(dv) else { continue };
        for du in -k..k {
            let (Some(a), Some(b)) = (img.get(col(du), vr), img.get(col(du + 1), vr)) else {
                continue;
            };
            if (b.range - a.range).abs() > params.jump_guard {
                continue;
            }
            let (aa, ab) = (at(col(du), vr), at(col(du + 1), vr));
            let dpsi = wrap_angle(aa.azimuth - ab.azimuth);
            let mean_r = 0.5 * (a.range + b.range);
            let sin_theta = 0.5 * (aa.sin_polar + ab.sin_polar);
            let arc = mean_r * sin_theta * dpsi;
            if arc.abs() < 1e-12 {
                continue;
            }
            sum_u += (b.range - a.range) / arc;
            n_u += 1;
        }
    }

    // Vertical pairs along increasing v (polar angle increases); no wrapping.
    let mut sum_v = 0.0;
    let mut n_v = 0usize;
    for du in -k..=k {
        let uc = col(du);
        for dv in -k..k {
            let (Some(ra), Some(rb)) = (row(dv), row(dv + 1)) else {
                continue;
            };
            let (Some(a), Some(b)) = (img.get(uc, ra), img.get(uc, rb)) else {
                continue;
            };
            if (b.range - a.range).abs() > params.jump_guard {
                continue;
            }
            let dtheta = at(uc, rb).polar - at(uc, ra).polar;
            let arc = 0.5 * (a.range + b.range) * dtheta;
            if arc.abs() < 1e-12 {
                continue;
            }
            sum_v += (b.range - a.range) / arc;
            n_v += 1;
        }
    }
    if n_u < MIN_PAIRS || n_v < MIN_PAIRS {
        return None;
    }
    let du = sum_u / n_u as f64;
    let dv = sum_v / n_v as f64;
    let local = Vector3::new(du, -dv, 1.0).normalize();
    let c = at(u, v);
    let frame = spherical_frame(c.polar, c.azimuth);
    let mut n = frame * local;
    let ray = center.point / center.range;
    if n.dot(&ray) > 0.0 {
        n = -n;
    }
    if !n.iter().all(|c| c.is_finite()) {
        return None;
    }

    let mut support = 0usize;
    for dv in -k..=k {
        let Some(vr) = row(dv) else { continue };
        for du in -k..=k {
            if du == 0 && dv == 0 {
                continue;
            }
            if let Some(nb) = img.get(col(du), vr) {
                if n.dot(&(nb.point - center.point)).abs() <= params.consensus_distance {
                    support += 1;
                }
            }
        }
    }
    (support >= params.consensus_count()).then_some(n)
}
