//! PCA shape-model construction and probabilistic-PCA completion.

use nalgebra::{DMatrix, DVector};

use super::{
    flatten, observed_rows, observed_values, unflatten, CompletionError, PartialObservation,
    PcaShapeModel,
};
use crate::geometry::PointCloud;

/// Eigenvalues below `max_eigenvalue * RANK_TOL` count as zero when
/// deciding how many components exist.
const RANK_TOL: f64 = 1e-12;

/// Variance floor that keeps the posterior information matrix finite when
/// a caller requests (or a full-rank model implies) zero noise.
const NOISE_FLOOR: f64 = 1e-12;

/// Builds a `d`-component PCA model from corresponded, aligned shapes.
///
/// Uses the inner-product (Gram) trick so cost scales with the number of
/// shapes rather than the flattened dimension. `noise_sigma2` is the
/// average of the discarded sample-covariance eigenvalues over the full
/// `3M`-dimensional spectrum, the PPCA maximum-likelihood estimate.
pub fn build_pca_model(shapes: &[PointCloud], d: usize) -> Result<PcaShapeModel, CompletionError> {
    if shapes.len() < 2 {
        return Err(CompletionError::TooFewShapes(shapes.len()));
    }
    let expected = shapes[0].len();
    for (index, s) in shapes.iter().enumerate() {
        if s.len() != expected {
            return Err(CompletionError::InconsistentShape {
                index,
                points: s.len(),
                expected,
            });
        }
    }
    if expected == 0 {
        return Err(CompletionError::InvalidModel("shapes are empty".to_string()));
    }
    if d == 0 {
        return Err(CompletionError::ZeroRank);
    }

    let n = shapes.len();
    let dim = expected * 3;
    let flat: Vec<DVector<f64>> = shapes.iter().map(flatten).collect();
    let mut mean = DVector::zeros(dim);
    for x in &flat {
        mean += x;
    }
    mean /= n as f64;

    // Centered data, columns = shapes.
    let mut centered = DMatrix::zeros(dim, n);
    for (j, x) in flat.iter().enumerate() {
        centered.set_column(j, &(x - &mean));
    }

    // Gram trick: eigenvectors of (A^T A)/(n-1) lift to those of the
    // sample covariance (A A^T)/(n-1).
    let gram = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

    let lambda_max = eig.eigenvalues[order[0]].max(0.0);
    let nonzero = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > lambda_max * RANK_TOL && eig.eigenvalues[i] > 0.0)
        .count();
    if d > nonzero {
        return Err(CompletionError::RankExceeded { requested: d, available: nonzero });
    }

    let mut basis = DMatrix::zeros(dim, d);
    let mut eigenvalues = DVector::zeros(d);
    for slot in 0..d {
        let i = order[slot];
        let lambda = eig.eigenvalues[i];
        let lifted = &centered * eig.eigenvectors.column(i);
        // ||A u|| = sqrt((n-1) lambda); normalize explicitly for stability.
        basis.set_column(slot, &(&lifted / lifted.norm()));
        eigenvalues[slot] = lambda;
    }

    // Discarded spectrum over the full 3M dimensions: only the first
    // `nonzero` sample eigenvalues are potentially nonzero.
    let discarded_sum: f64 = order[d..nonzero].iter().map(|&i| eig.eigenvalues[i]).sum();
    let noise_sigma2 =
        if dim > d { (discarded_sum / (dim - d) as f64).max(0.0) } else { 0.0 };

    PcaShapeModel::new(mean, basis, eigenvalues, noise_sigma2)
}

/// Posterior over a PCA model's latent coefficients given a partial
/// observation, and the completed shape it implies.
#[derive(Debug, Clone)]
pub struct PpcaCompletion {
    pub shape: PointCloud,
    /// Posterior mean of the latent coefficients.
    pub alpha: DVector<f64>,
    /// Posterior covariance of the latent coefficients.
    pub alpha_covariance: DMatrix<f64>,
    /// Effective observation variance used for conditioning.
    pub noise_sigma2: f64,
}

/// Conditions the model on observed coordinates.
///
/// With observed block `b` and noise variance `s2`, the latent posterior
/// is `alpha ~ N(M^-1 W_b^T (x_b - mu_b) / s2, M^-1)` where
/// `M = W_b^T W_b / s2 + I`. The completed shape is `W alpha + mu` over
/// all points. Zero observations fall back to the prior (`alpha = 0`).
pub fn ppca_complete(
    model: &PcaShapeModel,
    observation: &PartialObservation,
) -> Result<PpcaCompletion, CompletionError> {
    observation.check_bounds(model.point_count())?;
    let d = model.components();
    let noise_sigma2 =
        observation.observation_noise().unwrap_or(model.noise_sigma2()).max(NOISE_FLOOR);

    let rows = observed_rows(observation);
    let mut info = DMatrix::identity(d, d);
    let mut rhs = DVector::zeros(d);
    if !rows.is_empty() {
        let mut basis_obs = DMatrix::zeros(rows.len(), d);
        for (slot, &row) in rows.iter().enumerate() {
            basis_obs.set_row(slot, &model.basis().row(row));
        }
        let values = observed_values(observation);
        let mut residual = values;
        for (slot, &row) in rows.iter().enumerate() {
            residual[slot] -= model.mean()[row];
        }
        info += basis_obs.transpose() * &basis_obs / noise_sigma2;
        rhs = basis_obs.transpose() * residual / noise_sigma2;
    }

    let chol = info.clone().cholesky().ok_or(CompletionError::IllConditioned)?;
    let alpha = chol.solve(&rhs);
    let alpha_covariance = chol.inverse();
    if !alpha.iter().all(|v| v.is_finite()) {
        return Err(CompletionError::IllConditioned);
    }

    let completed = model.mean() + model.basis() * &alpha;
    Ok(PpcaCompletion { shape: unflatten(&completed), alpha, alpha_covariance, noise_sigma2 })
}
