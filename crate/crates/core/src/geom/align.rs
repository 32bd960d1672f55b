//! Rigid trajectory alignment and absolute trajectory error.

use nalgebra::{Matrix3, Rotation3, Vector3};

use super::Pose;
use crate::error::GeomError;

/// Rigid (no scale) Umeyama alignment: the `T` minimizing `Σ‖T·tᵢᵉˢᵗ − tᵢʳᵉᶠ‖²`.
pub fn umeyama_align(estimate: &[Pose], reference: &[Pose]) -> Result<Pose, GeomError> {
    let est: Vec<Vector3<f64>> = estimate.iter().map(|p| p.translation).collect();
    let reference: Vec<Vector3<f64>> = reference.iter().map(|p| p.translation).collect();
    align_points(&est, &reference)
}

pub fn align_points(est: &[Vector3<f64>], reference: &[Vector3<f64>]) -> Result<Pose, GeomError> {
    if est.len() != reference.len() {
        return Err(GeomError::LengthMismatch {
            estimate: est.len(),
            reference: reference.len(),
        });
    }
    if est.len() < 3 {
        return Err(GeomError::TooFewPoses(est.len()));
    }
    let n = est.len() as f64;
    let mean_e = est.iter().sum::<Vector3<f64>>() / n;
    let mean_r = reference.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for (e, r) in est.iter().zip(reference) {
        cov += (r - mean_r) * (e - mean_e).transpose();
    }
    cov /= n;

    let svd = cov.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    // Rank ≤ 1 (collinear or coincident translations) leaves rotation about the line free.
    if sv[0] <= f64::EPSILON || sv[1] <= 1e-10 * sv[0] {
        return Err(GeomError::DegenerateGeometry);
    }
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = Rotation3::from_matrix_unchecked(u * d * v_t);
    let translation = mean_r - rotation * mean_e;
    Ok(Pose::new(rotation, translation))
}

/// Translation RMSE after rigid alignment of `estimate` onto `reference`.
pub fn ate_rmse(estimate: &[Pose], reference: &[Pose]) -> Result<f64, GeomError> {
    let t = umeyama_align(estimate, reference)?;
    let sum: f64 = estimate
        .iter()
        .zip(reference)
        .map(|(e, r)| (t.transform_point(&e.translation) - r.translation).norm_squared())
        .sum();
    Ok((sum / estimate.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::se3_exp;
    use nalgebra::Vector6;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn random_trajectory(rng: &mut ChaCha8Rng, n: usize) -> Vec<Pose> {
        (0..n)
            .map(|_| {
                let xi = Vector6::from_fn(|_, _| rng.random_range(-3.0..3.0));
                se3_exp(&xi)
            })
            .collect()
    }

    #[test]
    fn identical_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let traj = random_trajectory(&mut rng, 20);
        let t = umeyama_align(&traj, &traj).unwrap();
        assert!(t.rotation_angle_to(&Pose::identity()) < 1e-12);
        assert!(t.translation.norm() < 1e-12);
        assert!(ate_rmse(&traj, &traj).unwrap() < 1e-12);
    }

    #[test]
    fn recovers_known_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let traj = random_trajectory(&mut rng, 30);
            let known = se3_exp(&Vector6::from_fn(|_, _| rng.random_range(-2.0..2.0)));
            let reference: Vec<Pose> = traj.iter().map(|p| known.compose(p)).collect();
            let t = umeyama_align(&traj, &reference).unwrap();
            assert!(t.rotation_angle_to(&known) < 1e-9);
            assert!((t.translation - known.translation).norm() < 1e-9);
        }
    }

    #[test]
    fn constant_offset_is_absorbed() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let traj = random_trajectory(&mut rng, 10);
        let shifted: Vec<Pose> = traj
            .iter()
            .map(|p| Pose::new(p.rotation, p.translation + Vector3::new(5.0, -2.0, 1.0)))
            .collect();
        assert!(ate_rmse(&traj, &shifted).unwrap() < 1e-12);
    }

    #[test]
    fn noisy_rmse_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let reference = random_trajectory(&mut rng, 500);
        // Per-pose 3D noise with RMS norm 0.01 m.
        let noise = Normal::new(0.0, 0.01 / 3f64.sqrt()).unwrap();
        let estimate: Vec<Pose> = reference
            .iter()
            .map(|p| {
                let d = Vector3::from_fn(|_, _| noise.sample(&mut rng));
                Pose::new(p.rotation, p.translation + d)
            })
            .collect();
        let rmse = ate_rmse(&estimate, &reference).unwrap();
        // Direct recomputation of the residuals after alignment.
        let t = umeyama_align(&estimate, &reference).unwrap();
        let direct = (estimate
            .iter()
            .zip(&reference)
            .map(|(e, r)| (t * *e).translation - r.translation)
            .map(|d| d.norm_squared())
            .sum::<f64>()
            / 500.0)
            .sqrt();
        assert!((rmse - direct).abs() < 1e-12);
        assert!(rmse > 0.01 * (2.0f64 / 3.0).sqrt() && rmse < 0.0105, "{rmse}");
    }

    #[test]
    fn errors() {
        let line: Vec<Pose> = (0..5)
            .map(|i| Pose::from_translation(Vector3::new(i as f64, 0.0, 0.0)))
            .collect();
        assert_eq!(umeyama_align(&line, &line), Err(GeomError::DegenerateGeometry));
        assert_eq!(
            umeyama_align(&line[..2], &line[..2]),
            Err(GeomError::TooFewPoses(2))
        );
        assert!(matches!(
            umeyama_align(&line[..3], &line),
            Err(GeomError::LengthMismatch { .. })
        ));
    }
}
