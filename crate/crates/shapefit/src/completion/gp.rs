//! Gaussian-process deformation model: construction and regression.

use nalgebra::{DMatrix, DVector};

use super::{
    flatten, observed_rows, observed_values, unflatten, CompletionError, CompletionStatus,
    GpShapeModel, PartialObservation,
};
use crate::geometry::PointCloud;

/// Relative ridge applied when an observation carries no explicit noise.
const DEFAULT_RELATIVE_RIDGE: f64 = 1e-9;

/// Builds a rank-`rank` deformation model over `reference`.
///
/// Deformation fields are `u_i = shape_i - reference` per point. The model
/// kernel is the sample covariance of those fields plus an isotropic
/// Gaussian term `amplitude * exp(-||x - x'||^2 / sigma^2) I3` evaluated
/// between reference points. Eigenpairs come from a dense symmetric
/// eigendecomposition of the kernel Gram matrix on the reference points
/// (the Nystrom discretization of the continuous operator), truncated to
/// the leading `rank`; `rank = 3M` keeps the decomposition exact.
///
/// `amplitude = 0` is allowed and reduces the kernel to the pure sample
/// covariance, whose span is the sample PCA subspace.
pub fn build_gp_model(
    shapes: &[PointCloud],
    reference: &PointCloud,
    gaussian_sigma: f64,
    gaussian_amplitude: f64,
    rank: usize,
) -> Result<GpShapeModel, CompletionError> {
    if shapes.len() < 2 {
        return Err(CompletionError::TooFewShapes(shapes.len()));
    }
    let points = reference.len();
    if points == 0 {
        return Err(CompletionError::InvalidModel("empty reference".to_string()));
    }
    for (index, s) in shapes.iter().enumerate() {
        if s.len() != points {
            return Err(CompletionError::InconsistentShape {
                index,
                points: s.len(),
                expected: points,
            });
        }
    }
    if !gaussian_sigma.is_finite() || gaussian_sigma <= 0.0 {
        return Err(CompletionError::InvalidKernelSigma(gaussian_sigma));
    }
    if !gaussian_amplitude.is_finite() || gaussian_amplitude < 0.0 {
        return Err(CompletionError::InvalidKernelAmplitude(gaussian_amplitude));
    }
    let dim = points * 3;
    if rank == 0 {
        return Err(CompletionError::ZeroRank);
    }
    if rank > dim {
        return Err(CompletionError::RankExceeded { requested: rank, available: dim });
    }

    let n = shapes.len();
    let ref_flat = flatten(reference);
    let mut mean = DVector::zeros(dim);
    let fields: Vec<DVector<f64>> = shapes.iter().map(|s| flatten(s) - &ref_flat).collect();
    for u in &fields {
        mean += u;
    }
    mean /= n as f64;

    // Gram matrix of the full kernel on the reference points.
    let mut kernel = DMatrix::zeros(dim, dim);
    let scale = 1.0 / (n as f64 - 1.0);
    for u in &fields {
        let centered = u - &mean;
        kernel.ger(scale, &centered, &centered, 1.0);
    }
    if gaussian_amplitude > 0.0 {
        let inv_sigma2 = 1.0 / (gaussian_sigma * gaussian_sigma);
        for i in 0..points {
            for j in i..points {
                let d2 = (reference.points()[i] - reference.points()[j]).norm_squared();
                let g = gaussian_amplitude * (-d2 * inv_sigma2).exp();
                for a in 0..3 {
                    kernel[(3 * i + a, 3 * j + a)] += g;
                    if i != j {
                        kernel[(3 * j + a, 3 * i + a)] += g;
                    }
                }
            }
        }
    }

    let eig = kernel.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

    let mut eigenvalues = DVector::zeros(rank);
    let mut eigenfields = DMatrix::zeros(dim, rank);
    for slot in 0..rank {
        let i = order[slot];
        // The kernel is PSD up to round-off; clamp tiny negatives.
        eigenvalues[slot] = eig.eigenvalues[i].max(0.0);
        eigenfields.set_column(slot, &eig.eigenvectors.column(i));
    }

    GpShapeModel::new(
        reference.clone(),
        mean,
        eigenvalues,
        eigenfields,
        gaussian_sigma,
        gaussian_amplitude,
    )
}

/// Result of GP regression over the deformation model.
#[derive(Debug, Clone)]
pub struct GpCompletion {
    pub shape: PointCloud,
    /// Coefficients in the scaled eigenbasis (`u = mean + B alpha`).
    pub coefficients: DVector<f64>,
    pub status: CompletionStatus,
    /// Ridge variance actually used.
    pub noise_used: f64,
}

/// GP regression in the model's low-rank basis.
///
/// Solves `(B_o^T B_o + noise I) alpha = B_o^T y` where `B = Phi
/// diag(sqrt(lambda))` and `y` is the observed deformation minus the mean
/// field; the completed shape is `reference + mean + B alpha`. With zero
/// observations the prior mean field is returned with status
/// [`CompletionStatus::PriorMean`].
pub fn gp_complete(
    model: &GpShapeModel,
    observation: &PartialObservation,
) -> Result<GpCompletion, CompletionError> {
    observation.check_bounds(model.reference().len())?;
    let rank = model.rank();
    let scaled: Vec<f64> = model.eigenvalues().iter().map(|l| l.sqrt()).collect();

    if observation.is_empty() {
        let completed = flatten(model.reference()) + model.mean_deformation();
        return Ok(GpCompletion {
            shape: unflatten(&completed),
            coefficients: DVector::zeros(rank),
            status: CompletionStatus::PriorMean,
            noise_used: 0.0,
        });
    }

    let rows = observed_rows(observation);
    let mut basis_obs = DMatrix::zeros(rows.len(), rank);
    for (slot, &row) in rows.iter().enumerate() {
        for c in 0..rank {
            basis_obs[(slot, c)] = model.eigenfields()[(row, c)] * scaled[c];
        }
    }
    let ref_flat = flatten(model.reference());
    let mut residual = observed_values(observation);
    for (slot, &row) in rows.iter().enumerate() {
        residual[slot] -= ref_flat[row] + model.mean_deformation()[row];
    }

    let lambda_max = model.eigenvalues().max();
    let noise = observation
        .observation_noise()
        .unwrap_or(DEFAULT_RELATIVE_RIDGE * lambda_max.max(f64::MIN_POSITIVE));
    let mut info = basis_obs.transpose() * &basis_obs;
    for i in 0..rank {
        info[(i, i)] += noise;
    }
    let chol = info.cholesky().ok_or(CompletionError::IllConditioned)?;
    let alpha = chol.solve(&(basis_obs.transpose() * residual));
    if !alpha.iter().all(|v| v.is_finite()) {
        return Err(CompletionError::IllConditioned);
    }

    let mut field = model.mean_deformation().clone();
    for c in 0..rank {
        let coeff = alpha[c] * scaled[c];
        field.axpy(coeff, &model.eigenfields().column(c).into_owned(), 1.0);
    }
    let completed = ref_flat + field;
    Ok(GpCompletion {
        shape: unflatten(&completed),
        coefficients: alpha,
        status: CompletionStatus::Posterior,
        noise_used: noise,
    })
}

/// Evaluates the model kernel between two reference points as a 3x3 block:
/// sample covariance plus the isotropic Gaussian term. Exposed for
/// positive-semidefiniteness checks.
pub fn kernel_block(
    model: &GpShapeModel,
    i: usize,
    j: usize,
) -> nalgebra::Matrix3<f64> {
    let mut block = nalgebra::Matrix3::zeros();
    for a in 0..3 {
        for b in 0..3 {
            let mut v = 0.0;
            for c in 0..model.rank() {
                v += model.eigenvalues()[c]
                    * model.eigenfields()[(3 * i + a, c)]
                    * model.eigenfields()[(3 * j + b, c)];
            }
            block[(a, b)] = v;
        }
    }
    block
}
