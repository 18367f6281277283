//! Closed-form least-squares alignment of corresponded point sets.

use nalgebra::{Matrix3, Point3, Vector3};

use super::{GeometryError, RigidTransform};

/// Rigid transform minimizing `sum_i ||R s_i + t - t_i||^2`.
///
/// Solved by SVD of the cross-covariance with the reflection corrected to
/// keep `det R = +1`. Requires at least 3 pairs whose source points are not
/// all collinear.
pub fn fit_rigid_least_squares(
    source: &[Point3<f64>],
    target: &[Point3<f64>],
) -> Result<RigidTransform, GeometryError> {
    fit_weighted(source, target, None, false)
}

/// Similarity variant of [`fit_rigid_least_squares`] that also estimates a
/// single positive scale (`sum_i ||s R s_i + t - t_i||^2`).
pub fn fit_similarity_least_squares(
    source: &[Point3<f64>],
    target: &[Point3<f64>],
) -> Result<RigidTransform, GeometryError> {
    fit_weighted(source, target, None, true)
}

pub(crate) fn fit_rigid_weighted(
    source: &[Point3<f64>],
    target: &[Point3<f64>],
    weights: &[f64],
) -> Result<RigidTransform, GeometryError> {
    fit_weighted(source, target, Some(weights), false)
}

fn fit_weighted(
    source: &[Point3<f64>],
    target: &[Point3<f64>],
    weights: Option<&[f64]>,
    with_scale: bool,
) -> Result<RigidTransform, GeometryError> {
    if source.len() != target.len() {
        return Err(GeometryError::CorrespondenceLengthMismatch {
            source_len: source.len(),
            target_len: target.len(),
        });
    }
    if source.len() < 3 {
        return Err(GeometryError::DegenerateCorrespondences);
    }
    if let Some(w) = weights {
        if w.len() != source.len() {
            return Err(GeometryError::CorrespondenceLengthMismatch {
                source_len: source.len(),
                target_len: w.len(),
            });
        }
    }
    let weight_at = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total: f64 = (0..source.len()).map(weight_at).sum();
    if !(total > 0.0) {
        return Err(GeometryError::DegenerateCorrespondences);
    }

    let mut src_mean = Vector3::zeros();
    let mut tgt_mean = Vector3::zeros();
    for i in 0..source.len() {
        src_mean += weight_at(i) * source[i].coords;
        tgt_mean += weight_at(i) * target[i].coords;
    }
    src_mean /= total;
    tgt_mean /= total;

    // Cross-covariance and the source scatter used for both the
    // collinearity guard and the scale estimate.
    let mut h = Matrix3::zeros();
    let mut src_scatter = Matrix3::zeros();
    let mut src_var = 0.0;
    for i in 0..source.len() {
        let w = weight_at(i);
        let s = source[i].coords - src_mean;
        let t = target[i].coords - tgt_mean;
        h += w * s * t.transpose();
        src_scatter += w * s * s.transpose();
        src_var += w * s.norm_squared();
    }

    // Collinear (or coincident) sources leave a rotation axis unobservable.
    let scatter_eigs = src_scatter.symmetric_eigenvalues();
    let max_eig = scatter_eigs.max();
    let mid_eig = {
        let mut v: Vec<f64> = scatter_eigs.iter().copied().collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[1]
    };
    if !(max_eig > 0.0) || mid_eig <= max_eig * 1e-12 {
        return Err(GeometryError::DegenerateCorrespondences);
    }

    let svd = h.svd(true, true);
    let u = svd.u.ok_or(GeometryError::DegenerateCorrespondences)?;
    let v = svd.v_t.ok_or(GeometryError::DegenerateCorrespondences)?.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = v * correction * u.transpose();

    let scale = if with_scale {
        let trace = svd.singular_values[0] + svd.singular_values[1] + d * svd.singular_values[2];
        let s = trace / src_var;
        if !(s > 0.0) || !s.is_finite() {
            return Err(GeometryError::DegenerateCorrespondences);
        }
        s
    } else {
        1.0
    };

    let translation = tgt_mean - scale * (rotation * src_mean);
    RigidTransform::with_scale(rotation, translation, scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, rng: &mut ChaCha8Rng) -> Vec<Point3<f64>> {
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                )
            })
            .collect()
    }

    #[test]
    fn recovers_synthesized_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..25 {
            let source = random_cloud(40, &mut rng);
            let rotation = Rotation3::from_euler_angles(
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.5..1.5),
                rng.random_range(-3.0..3.0),
            )
            .into_inner();
            let translation =
                Vector3::new(rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0), 2.0);
            let truth = RigidTransform::new(rotation, translation).unwrap();
            let target: Vec<_> = source.iter().map(|p| truth.apply_point(p)).collect();
            let fit = fit_rigid_least_squares(&source, &target).unwrap();
            // Element-wise deviation: the acos angle formula bottoms out
            // near 2e-8 from rounding and cannot certify 1e-9.
            assert!((fit.rotation - truth.rotation).abs().max() < 1e-9);
            assert_relative_eq!(fit.translation, truth.translation, epsilon = 1e-9);
            assert_eq!(fit.scale, 1.0);
        }
    }

    #[test]
    fn reflected_source_still_yields_proper_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let source = random_cloud(30, &mut rng);
        let target: Vec<_> =
            source.iter().map(|p| Point3::new(p.x, p.y, -p.z)).collect();
        let fit = fit_rigid_least_squares(&source, &target).unwrap();
        assert_relative_eq!(fit.rotation.determinant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_fewer_than_three_pairs() {
        let pts = vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)];
        let err = fit_rigid_least_squares(&pts, &pts).unwrap_err();
        assert_eq!(err.to_string(), "degenerate correspondence set");
    }

    #[test]
    fn rejects_collinear_source() {
        let source: Vec<_> = (0..6).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let err = fit_rigid_least_squares(&source, &source).unwrap_err();
        assert_eq!(err.to_string(), "degenerate correspondence set");
    }

    #[test]
    fn recovers_similarity_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let source = random_cloud(25, &mut rng);
        let rotation = Rotation3::from_euler_angles(0.4, -0.2, 1.1).into_inner();
        let truth =
            RigidTransform::with_scale(rotation, Vector3::new(1.0, 2.0, 3.0), 1.7).unwrap();
        let target: Vec<_> = source.iter().map(|p| truth.apply_point(p)).collect();
        let fit = fit_similarity_least_squares(&source, &target).unwrap();
        assert_relative_eq!(fit.scale, 1.7, epsilon = 1e-9);
        assert!((fit.rotation - truth.rotation).abs().max() < 1e-9);
        assert_relative_eq!(fit.translation, truth.translation, epsilon = 1e-8);
    }

    #[test]
    fn weighting_ignores_zero_weight_gross_outlier() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut source = random_cloud(20, &mut rng);
        let rotation = Rotation3::from_euler_angles(0.2, 0.5, -0.1).into_inner();
        let truth = RigidTransform::new(rotation, Vector3::new(0.5, -0.5, 1.5)).unwrap();
        let mut target: Vec<_> = source.iter().map(|p| truth.apply_point(p)).collect();
        source.push(Point3::new(100.0, 100.0, 100.0));
        target.push(Point3::new(-100.0, 50.0, 0.0));
        let mut weights = vec![1.0; 21];
        weights[20] = 0.0;
        let fit = fit_rigid_weighted(&source, &target, &weights).unwrap();
        assert!((fit.rotation - truth.rotation).abs().max() < 1e-9);
        assert_relative_eq!(fit.translation, truth.translation, epsilon = 1e-9);
    }
}
