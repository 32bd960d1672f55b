use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

use crate::error::RangeImageError;

/// Depth-image geometry: vertical field of view and image size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionParams {
    /// Upper edge of the vertical field of view, radians.
    pub fov_max: f64,
    /// Lower edge of the vertical field of view, radians.
    pub fov_min: f64,
    pub height: usize,
    pub width: usize,
}

impl ProjectionParams {
    pub fn new(fov_max: f64, fov_min: f64, height: usize, width: usize) -> Result<Self, RangeImageError> {
        let p = Self {
            fov_max,
            fov_min,
            height,
            width,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), RangeImageError> {
        if !(self.fov_max.is_finite() && self.fov_min.is_finite() && self.fov_max > self.fov_min) {
            return Err(RangeImageError::InvalidParams("fov_max must exceed fov_min".into()));
        }
        if self.height < 2 || self.width < 8 {
            return Err(RangeImageError::InvalidParams(format!(
                "image must be at least 2x8, got {}x{}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn ver_res(&self) -> f64 {
        (self.fov_max - self.fov_min) / self.height as f64
    }

    pub fn hor_res(&self) -> f64 {
        2.0 * PI / self.width as f64
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixel `(u, v)` of a point, or `None` if it falls outside the vertical field of view.
    pub fn pixel_of(&self, p: &Vector3<f64>) -> Option<(usize, usize)> {
        let u = ((PI - p.y.atan2(p.x)) / self.hor_res()).floor();
        let v = ((self.fov_max - p.z.atan2(p.x.hypot(p.y))) / self.ver_res()).floor();
        if !(v >= 0.0 && v < self.height as f64) {
            return None;
        }
        let u = (u as i64).rem_euclid(self.width as i64) as usize;
        Some((u, v as usize))
    }

    /// Polar angle θ and azimuth ψ at the top-left corner of pixel `(u, v)`.
    pub fn pixel_angles(&self, u: usize, v: usize) -> (f64, f64) {
        let theta = PI / 2.0 - (self.fov_max - v as f64 * self.ver_res());
        let psi = PI - u as f64 * self.hor_res();
        (theta, psi)
    }
}

/// One occupied depth-image cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangePixel {
    pub range: f64,
    pub point: Vector3<f64>,
    /// Index of the source point in the projected list.
    pub source: usize,
}

/// Depth image with an explicit per-pixel validity (empty cells are `None`).
#[derive(Debug, Clone)]
pub struct RangeImage {
    pub params: ProjectionParams,
    pixels: Vec<Option<RangePixel>>,
    /// Points discarded because they fell outside the vertical field of view.
    pub dropped: usize,
}

impl RangeImage {
    pub fn empty(params: ProjectionParams) -> Self {
        Self {
            params,
            pixels: vec![None; params.len()],
            dropped: 0,
        }
    }

    pub fn width(&self) -> usize {
        self.params.width
    }

    pub fn height(&self) -> usize {
        self.params.height
    }

    pub fn get(&self, u: usize, v: usize) -> Option<&RangePixel> {
        self.pixels[v * self.params.width + u].as_ref()
    }

    pub fn valid_count(&self) -> usize {
        self.pixels.iter().filter(|p| p.is_some()).count()
    }

    /// Valid pixels as `(u, v, pixel)` in row-major order.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, usize, &RangePixel)> + '_ {
        let w = self.params.width;
        self.pixels
            .iter()
            .enumerate()
            .filter_map(move |(i, p)| p.as_ref().map(|p| (i % w, i / w, p)))
    }

    /// Keeps the closer of the existing and the new point.
    pub fn insert(&mut self, u: usize, v: usize, pixel: RangePixel) -> bool {
        let slot = &mut self.pixels[v * self.params.width + u];
        match slot {
            Some(existing) if existing.range <= pixel.range => false,
            _ => {
                *slot = Some(pixel);
                true
            }
        }
    }

    pub fn clear(&mut self, u: usize, v: usize) {
        self.pixels[v * self.params.width + u] = None;
    }
}

/// Spherical projection into a depth image; per-cell conflicts keep the smaller range.
pub fn project(points: &[Vector3<f64>], params: &ProjectionParams) -> RangeImage {
    let mut img = RangeImage::empty(*params);
    for (i, p) in points.iter().enumerate() {
        let range = p.norm();
        if !(range > 0.0) {
            img.dropped += 1;
            continue;
        }
        match params.pixel_of(p) {
            Some((u, v)) => {
                img.insert(
                    u,
                    v,
                    RangePixel {
                        range,
                        point: *p,
                        source: i,
                    },
                );
            }
            None => img.dropped += 1,
        }
    }
    img
}

/// Point at range `r` along the center ray of pixel `(u, v)`.
pub fn unproject(u: usize, v: usize, r: f64, params: &ProjectionParams) -> Result<Vector3<f64>, RangeImageError> {
    if u >= params.width || v >= params.height {
        return Err(RangeImageError::PixelOutOfBounds { u, v });
    }
    if !(r > 0.0) {
        return Err(RangeImageError::NonPositiveRange(r));
    }
    let azimuth = PI - (u as f64 + 0.5) * params.hor_res();
    let elevation = params.fov_max - (v as f64 + 0.5) * params.ver_res();
    Ok(r * Vector3::new(
        elevation.cos() * azimuth.cos(),
        elevation.cos() * azimuth.sin(),
        elevation.sin(),
    ))
}

/// Local spherical frame `T(θ, ψ)`: columns are the azimuthal direction, the polar direction and the ray.
pub fn spherical_frame(theta: f64, psi: f64) -> Matrix3<f64> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = psi.sin_cos();
    Matrix3::new(
        -sp,
        cp * ct,
        cp * st,
        cp,
        sp * ct,
        sp * st,
        0.0,
        -st,
        ct,
    )
}

/// Per-pixel frames evaluated at each pixel's corner angles, row-major (`v * width + u`).
pub fn spherical_to_cartesian_table(params: &ProjectionParams) -> Vec<Matrix3<f64>> {
    let mut table = Vec::with_capacity(params.len());
    for v in 0..params.height {
        for u in 0..params.width {
            let (theta, psi) = params.pixel_angles(u, v);
            table.push(spherical_frame(theta, psi));
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> ProjectionParams {
        ProjectionParams::new(15f64.to_radians(), -15f64.to_radians(), 16, 1024).unwrap()
    }

    #[test]
    fn forward_examples() {
        let p = params();
        let img = project(&[Vector3::new(10.0, 0.0, 0.0)], &p);
        let px = img.get(512, 8).expect("pixel");
        assert_eq!(px.range, 10.0);
        assert_eq!(p.pixel_of(&Vector3::new(0.0, 10.0, 0.0)), Some((256, 8)));
    }

    #[test]
    fn closer_point_wins() {
        let p = params();
        let img = project(&[Vector3::new(7.0, 0.0, 0.0), Vector3::new(5.0, 0.0, 0.0)], &p);
        assert_eq!(img.get(512, 8).unwrap().range, 5.0);
        assert_eq!(img.valid_count(), 1);
        let img = project(&[Vector3::new(5.0, 0.0, 0.0), Vector3::new(7.0, 0.0, 0.0)], &p);
        assert_eq!(img.get(512, 8).unwrap().range, 5.0);
    }

    #[test]
    fn out_of_fov_is_dropped() {
        let img = project(&[Vector3::new(1.0, 0.0, 5.0), Vector3::zeros()], &params());
        assert_eq!(img.valid_count(), 0);
        assert_eq!(img.dropped, 2);
    }

    #[test]
    fn stored_points_reproject_to_their_cell() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vector3<f64>> = (0..5000)
            .map(|_| Vector3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-3.0..3.0)))
            .collect();
        let img = project(&pts, &p);
        for (u, v, px) in img.iter_valid() {
            assert_eq!(p.pixel_of(&px.point), Some((u, v)));
            assert!((px.range - px.point.norm()).abs() < 1e-6);
        }
    }

    #[test]
    fn unproject_center() {
        let p = params();
        let q = unproject(512, 8, 10.0, &p).unwrap();
        // Cell-center quantization: half a cell in each direction.
        assert!((q - Vector3::new(10.0, 0.0, 0.0)).norm() < 10.0 * p.ver_res());
        assert_relative_eq!(q.norm(), 10.0, epsilon = 1e-12);
        assert!(unproject(512, 8, 0.0, &p).is_err());
        assert!(unproject(1024, 0, 1.0, &p).is_err());
    }

    #[test]
    fn project_unproject_round_trip() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cell_diag = p.ver_res().hypot(p.hor_res());
        for _ in 0..10_000 {
            let az: f64 = rng.random_range(-PI..PI);
            let el: f64 = rng.random_range(p.fov_min + 1e-9..p.fov_max - 1e-9);
            let r: f64 = rng.random_range(0.5..50.0);
            let pt = r * Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            let (u, v) = p.pixel_of(&pt).unwrap();
            let back = unproject(u, v, r, &p).unwrap();
            let angle = (pt.dot(&back) / (r * r)).clamp(-1.0, 1.0).acos();
            assert!(angle <= cell_diag, "angle {angle} > {cell_diag}");
            assert_eq!(p.pixel_of(&back), Some((u, v)));
        }
    }

    #[test]
    fn table_equator_entry() {
        let p = params();
        let table = spherical_to_cartesian_table(&p);
        let (theta, psi) = p.pixel_angles(0, 8);
        assert_relative_eq!(theta, PI / 2.0, epsilon = 1e-15);
        assert_relative_eq!(psi, PI, epsilon = 1e-15);
        // sin π = 0, cos π = −1, sin θ = 1, cos θ = 0.
        let expected = Matrix3::new(0.0, 0.0, -1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
        assert_relative_eq!(table[8 * p.width], expected, epsilon = 1e-15);
    }

    #[test]
    fn table_entries_are_orthonormal_and_third_column_is_ray() {
        let p = params();
        let table = spherical_to_cartesian_table(&p);
        for v in 0..p.height {
            for u in 0..p.width {
                let t = &table[v * p.width + u];
                assert_relative_eq!(t.transpose() * t, Matrix3::identity(), epsilon = 1e-9);
                // Independently computed ray from elevation/azimuth.
                let elevation = p.fov_max - v as f64 * p.ver_res();
                let azimuth = PI - u as f64 * p.hor_res();
                let ray = Vector3::new(
                    elevation.cos() * azimuth.cos(),
                    elevation.cos() * azimuth.sin(),
                    elevation.sin(),
                );
                assert_relative_eq!(t.column(2).into_owned(), ray, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn invalid_params() {
        assert!(ProjectionParams::new(0.1, 0.2, 16, 1024).is_err());
        assert!(ProjectionParams::new(0.2, 0.1, 1, 1024).is_err());
        assert!(ProjectionParams::new(0.2, 0.1, 16, 4).is_err());
    }
}
