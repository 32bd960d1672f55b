//! Degeneracy detection from the spread of matched normals, and the measurement
//! covariance it implies.

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3};

use crate::error::DegeneracyError;
use crate::registration::Correspondence;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegeneracyParams {
    pub lambda_threshold: f64,
    /// Scale `s` of the translation block.
    pub scale: f64,
    /// Isotropic rotation standard deviation, radians.
    pub sigma_rot: f64,
    /// Floor applied to eigenvalues before inversion.
    pub eigen_floor: f64,
}

impl Default for DegeneracyParams {
    fn default() -> Self {
        Self {
            lambda_threshold: 0.02,
            scale: 0.01,
            sigma_rot: 0.01,
            eigen_floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegeneracyReport {
    pub covariance: Matrix3<f64>,
    /// Ascending.
    pub eigenvalues: Vector3<f64>,
    /// Column `i` pairs with `eigenvalues[i]`.
    pub eigenvectors: Matrix3<f64>,
    pub degenerate: bool,
}

impl DegeneracyReport {
    /// Direction least constrained by the matched normals.
    pub fn axis(&self) -> Vector3<f64> {
        self.eigenvectors.column(0).into_owned()
    }
}

/// Mean outer product of the query normals.
pub fn normal_covariance(correspondences: &[Correspondence]) -> Result<Matrix3<f64>, DegeneracyError> {
    normal_covariance_of(correspondences.iter().map(|c| c.normal))
}

pub fn normal_covariance_of<I: IntoIterator<Item = Vector3<f64>>>(normals: I) -> Result<Matrix3<f64>, DegeneracyError> {
    let mut sum = Matrix3::zeros();
    let mut m = 0usize;
    for n in normals {
        sum += n * n.transpose();
        m += 1;
    }
    if m == 0 {
        return Err(DegeneracyError::NoCorrespondences);
    }
    Ok(sum / m as f64)
}

/// Sorted eigen-decomposition of `c`; degenerate iff the smallest eigenvalue is below the threshold.
pub fn analyze(c: &Matrix3<f64>, lambda_threshold: f64) -> Result<DegeneracyReport, DegeneracyError> {
    let asym = (c - c.transpose()).amax();
    if asym > 1e-9 * c.amax().max(1.0) {
        return Err(DegeneracyError::NotSymmetric(asym));
    }
    let eig = SymmetricEigen::new(*c);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = Vector3::from_fn(|i, _| eig.eigenvalues[order[i]]);
    let eigenvectors = Matrix3::from_fn(|r, col| eig.eigenvectors[(r, order[col])]);
    Ok(DegeneracyReport {
        covariance: *c,
        eigenvalues,
        eigenvectors,
        degenerate: eigenvalues[0] < lambda_threshold,
    })
}

/// 6×6 covariance ordered (rotation, translation): `σ_rot²·I` and
/// `s·V·diag(1/max(λᵢ, ε))·Vᵀ`.
pub fn measurement_covariance(report: &DegeneracyReport, params: &DegeneracyParams) -> Matrix6<f64> {
    let v = &report.eigenvectors;
    let inv = Matrix3::from_diagonal(&report.eigenvalues.map(|l| 1.0 / l.max(params.eigen_floor)));
    let trans = v * inv * v.transpose() * params.scale;
    let mut q = Matrix6::zeros();
    q.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(Matrix3::identity() * params.sigma_rot.powi(2)));
    // Symmetrize away rounding so the Cholesky downstream sees an exact SPD matrix.
    q.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&((trans + trans.transpose()) * 0.5));
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::from_fn(|_, _| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng));
            if v.norm() > 1e-9 {
                return v.normalize();
            }
        }
    }

    #[test]
    fn covariance_of_simple_sets() {
        let (x, z) = (Vector3::x(), Vector3::z());
        let c = normal_covariance_of([x, -x, z, -z]).unwrap();
        assert!((c - Matrix3::from_diagonal(&Vector3::new(0.5, 0.0, 0.5))).amax() < 1e-15);
        let c = normal_covariance_of([x; 5]).unwrap();
        assert!((c - Matrix3::from_diagonal(&Vector3::new(1.0, 0.0, 0.0))).amax() < 1e-15);
        assert_eq!(normal_covariance(&[]), Err(DegeneracyError::NoCorrespondences));
    }

    #[test]
    fn random_normals_are_isotropic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = normal_covariance_of((0..1000).map(|_| unit(&mut rng))).unwrap();
        assert!((c - Matrix3::identity() / 3.0).amax() < 0.05);
        assert!((c.trace() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn analysis_flags_the_missing_direction() {
        let r = analyze(&Matrix3::from_diagonal(&Vector3::new(0.5, 0.0, 0.5)), 0.02).unwrap();
        assert!(r.degenerate);
        assert!((r.axis().dot(&Vector3::y()).abs() - 1.0).abs() < 1e-12);
        let r = analyze(&(Matrix3::identity() / 3.0), 0.02).unwrap();
        assert!(!r.degenerate);
        let mut bad = Matrix3::identity();
        bad[(0, 1)] = 0.1;
        assert!(matches!(analyze(&bad, 0.02), Err(DegeneracyError::NotSymmetric(_))));
    }

    #[test]
    fn eigenpairs_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.random_range(1..40);
            let c = normal_covariance_of((0..n).map(|_| unit(&mut rng))).unwrap();
            let r = analyze(&c, 0.02).unwrap();
            for i in 0..3 {
                let v = r.eigenvectors.column(i);
                assert!((c * v - v * r.eigenvalues[i]).amax() < 1e-9);
            }
            assert!(r.eigenvalues[0] <= r.eigenvalues[1] && r.eigenvalues[1] <= r.eigenvalues[2]);
            assert!((r.eigenvalues.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn translation_block_matches_direct_evaluation() {
        let report = DegeneracyReport {
            covariance: Matrix3::zeros(),
            eigenvalues: Vector3::new(0.1, 0.4, 0.5),
            eigenvectors: Matrix3::identity(),
            degenerate: false,
        };
        let q = measurement_covariance(&report, &DegeneracyParams::default());
        let block = q.fixed_view::<3, 3>(3, 3);
        assert!((block - Matrix3::from_diagonal(&Vector3::new(0.1, 0.025, 0.02))).amax() < 1e-12);
        assert!((q.fixed_view::<3, 3>(0, 0) - Matrix3::identity() * 1e-4).amax() < 1e-18);

        let iso = DegeneracyReport {
            eigenvalues: Vector3::repeat(1.0 / 3.0),
            ..report
        };
        let block = measurement_covariance(&iso, &DegeneracyParams::default()).fixed_view::<3, 3>(3, 3).into_owned();
        assert!((block - Matrix3::identity() * 0.03).amax() < 1e-12);

        let flat = DegeneracyReport {
            eigenvalues: Vector3::new(0.0, 0.5, 0.5),
            ..report
        };
        let q = measurement_covariance(&flat, &DegeneracyParams::default());
        assert!((q[(3, 3)] - 0.01 / 1e-4).abs() < 1e-9);
        assert!(q.cholesky().is_some());
    }

    #[test]
    fn loosest_direction_is_the_degenerate_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..1000 {
            let n = rng.random_range(2..12);
            let c = normal_covariance_of((0..n).map(|_| unit(&mut rng))).unwrap();
            let r = analyze(&c, 0.02).unwrap();
            let q = measurement_covariance(&r, &DegeneracyParams::default());
            let t = analyze(&q.fixed_view::<3, 3>(3, 3).into_owned(), 0.0).unwrap();
            let loosest = t.eigenvectors.column(2);
            // Equal floored eigenvalues leave the direction ambiguous; skip near-ties.
            let floored = r.eigenvalues.map(|l| l.max(1e-4));
            if (floored[1] - floored[0]).abs() < 1e-6 {
                continue;
            }
            assert!((loosest.dot(&r.axis()).abs() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn invariant_under_eigenvector_sign_flips() {
        let c = Matrix3::new(0.5, 0.1, 0.0, 0.1, 0.3, 0.05, 0.0, 0.05, 0.2);
        let r = analyze(&c, 0.02).unwrap();
        let mut flipped = r;
        flipped.eigenvectors.column_mut(1).neg_mut();
        let p = DegeneracyParams::default();
        assert!((measurement_covariance(&r, &p) - measurement_covariance(&flipped, &p)).amax() < 1e-15);
    }
}
