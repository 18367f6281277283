//! Shape completion: predicting a full shape from a partial set of
//! corresponded points.
//!
//! Three routes with increasing structure:
//!
//! * [`deformed_template_completion`]: take the non-rigidly deformed
//!   template as the completed shape, no model required.
//! * [`ppca_complete`]: condition a probabilistic PCA shape model
//!   ([`PcaShapeModel`]) on the observed coordinates and read off the
//!   posterior full shape.
//! * [`gp_complete`]: Gaussian-process regression over a statistical
//!   deformation model ([`GpShapeModel`]) whose kernel is the sample
//!   deformation covariance plus an isotropic Gaussian term.

use nalgebra::{DMatrix, DVector, Point3};
use thiserror::Error;

use crate::geometry::PointCloud;

mod gp;
mod pca;

pub use gp::{build_gp_model, gp_complete, kernel_block, GpCompletion};
pub use pca::{build_pca_model, ppca_complete, PpcaCompletion};

/// Columns of a basis are accepted as orthonormal within this max-norm.
pub const BASIS_ORTHO_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum CompletionError {
    #[error("shape {index} has {points} points, expected {expected}")]
    InconsistentShape { index: usize, points: usize, expected: usize },
    #[error("need at least 2 shapes, got {0}")]
    TooFewShapes(usize),
    #[error("cannot retain {requested} components: only {available} nonzero eigenvalues")]
    RankExceeded { requested: usize, available: usize },
    #[error("rank must be at least 1")]
    ZeroRank,
    #[error("gaussian kernel sigma must be positive, got {0}")]
    InvalidKernelSigma(f64),
    #[error("gaussian kernel amplitude must be non-negative, got {0}")]
    InvalidKernelAmplitude(f64),
    #[error("invalid shape model: {0}")]
    InvalidModel(String),
    #[error("observed index {index} out of bounds for model with {points} points")]
    ObservedIndexOutOfBounds { index: usize, points: usize },
    #[error("duplicate observed index {0}")]
    DuplicateObservedIndex(usize),
    #[error("{positions} observed positions for {indices} observed indices")]
    ObservationLengthMismatch { indices: usize, positions: usize },
    #[error("non-finite observed position at slot {0}")]
    NonFiniteObservation(usize),
    #[error("observation noise must be non-negative, got {0}")]
    InvalidObservationNoise(f64),
    #[error("ill-conditioned completion")]
    IllConditioned,
}

/// Linear-Gaussian shape model from PCA of an aligned, corresponded
/// dataset. Shapes are flattened point-major: `[x0, y0, z0, x1, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaShapeModel {
    mean: DVector<f64>,
    basis: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    noise_sigma2: f64,
}

impl PcaShapeModel {
    pub fn new(
        mean: DVector<f64>,
        basis: DMatrix<f64>,
        eigenvalues: DVector<f64>,
        noise_sigma2: f64,
    ) -> Result<Self, CompletionError> {
        if mean.len() == 0 || mean.len() % 3 != 0 {
            return Err(CompletionError::InvalidModel(format!(
                "mean length {} is not a positive multiple of 3",
                mean.len()
            )));
        }
        if basis.nrows() != mean.len() || basis.ncols() != eigenvalues.len() {
            return Err(CompletionError::InvalidModel(format!(
                "basis is {}x{} for mean length {} and {} eigenvalues",
                basis.nrows(),
                basis.ncols(),
                mean.len(),
                eigenvalues.len()
            )));
        }
        if basis.ncols() == 0 {
            return Err(CompletionError::ZeroRank);
        }
        validate_finite(mean.as_slice(), "mean")?;
        validate_finite(basis.as_slice(), "basis")?;
        validate_orthonormal(&basis)?;
        validate_spectrum(&eigenvalues)?;
        if !noise_sigma2.is_finite() || noise_sigma2 < 0.0 {
            return Err(CompletionError::InvalidModel(format!(
                "noise variance {noise_sigma2} must be finite and non-negative"
            )));
        }
        Ok(Self { mean, basis, eigenvalues, noise_sigma2 })
    }

    /// Number of model points (a third of the flattened dimension).
    pub fn point_count(&self) -> usize {
        self.mean.len() / 3
    }

    pub fn components(&self) -> usize {
        self.basis.ncols()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn noise_sigma2(&self) -> f64 {
        self.noise_sigma2
    }

    pub fn mean_shape(&self) -> PointCloud {
        unflatten(&self.mean)
    }
}

/// Statistical deformation model over a reference cloud: a mean
/// deformation field plus a rank-`r` Karhunen-Loeve expansion of the
/// kernel `k_sample + amplitude * exp(-||x - x'||^2 / sigma^2) I3`.
#[derive(Debug, Clone, PartialEq)]
pub struct GpShapeModel {
    reference: PointCloud,
    mean_deformation: DVector<f64>,
    eigenvalues: DVector<f64>,
    eigenfields: DMatrix<f64>,
    gaussian_sigma: f64,
    gaussian_amplitude: f64,
}

impl GpShapeModel {
    pub fn new(
        reference: PointCloud,
        mean_deformation: DVector<f64>,
        eigenvalues: DVector<f64>,
        eigenfields: DMatrix<f64>,
        gaussian_sigma: f64,
        gaussian_amplitude: f64,
    ) -> Result<Self, CompletionError> {
        let dim = reference.len() * 3;
        if dim == 0 {
            return Err(CompletionError::InvalidModel("empty reference".to_string()));
        }
        if mean_deformation.len() != dim {
            return Err(CompletionError::InvalidModel(format!(
                "mean deformation length {} for reference dimension {dim}",
                mean_deformation.len()
            )));
        }
        if eigenfields.nrows() != dim || eigenfields.ncols() != eigenvalues.len() {
            return Err(CompletionError::InvalidModel(format!(
                "eigenfields are {}x{} for dimension {dim} and {} eigenvalues",
                eigenfields.nrows(),
                eigenfields.ncols(),
                eigenvalues.len()
            )));
        }
        if eigenfields.ncols() == 0 {
            return Err(CompletionError::ZeroRank);
        }
        validate_finite(mean_deformation.as_slice(), "mean deformation")?;
        validate_finite(eigenfields.as_slice(), "eigenfields")?;
        validate_orthonormal(&eigenfields)?;
        validate_spectrum(&eigenvalues)?;
        if !gaussian_sigma.is_finite() || gaussian_sigma <= 0.0 {
            return Err(CompletionError::InvalidKernelSigma(gaussian_sigma));
        }
        if !gaussian_amplitude.is_finite() || gaussian_amplitude < 0.0 {
            return Err(CompletionError::InvalidKernelAmplitude(gaussian_amplitude));
        }
        Ok(Self {
            reference,
            mean_deformation,
            eigenvalues,
            eigenfields,
            gaussian_sigma,
            gaussian_amplitude,
        })
    }

    pub fn reference(&self) -> &PointCloud {
        &self.reference
    }

    pub fn mean_deformation(&self) -> &DVector<f64> {
        &self.mean_deformation
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenfields(&self) -> &DMatrix<f64> {
        &self.eigenfields
    }

    pub fn gaussian_sigma(&self) -> f64 {
        self.gaussian_sigma
    }

    pub fn gaussian_amplitude(&self) -> f64 {
        self.gaussian_amplitude
    }

    pub fn rank(&self) -> usize {
        self.eigenfields.ncols()
    }
}

/// A sparse set of known point positions on the model's index space.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialObservation {
    observed_indices: Vec<usize>,
    observed_positions: Vec<Point3<f64>>,
    observation_noise: Option<f64>,
}

impl PartialObservation {
    /// `observation_noise` is the variance (mm^2) assumed on each observed
    /// coordinate; `None` defers to the model (PPCA) or a small relative
    /// ridge (GP).
    pub fn new(
        observed_indices: Vec<usize>,
        observed_positions: Vec<Point3<f64>>,
        observation_noise: Option<f64>,
    ) -> Result<Self, CompletionError> {
        if observed_indices.len() != observed_positions.len() {
            return Err(CompletionError::ObservationLengthMismatch {
                indices: observed_indices.len(),
                positions: observed_positions.len(),
            });
        }
        let mut seen = std::collections::BTreeSet::new();
        for &i in &observed_indices {
            if !seen.insert(i) {
                return Err(CompletionError::DuplicateObservedIndex(i));
            }
        }
        for (slot, p) in observed_positions.iter().enumerate() {
            if !p.coords.iter().all(|c| c.is_finite()) {
                return Err(CompletionError::NonFiniteObservation(slot));
            }
        }
        if let Some(noise) = observation_noise {
            if !noise.is_finite() || noise < 0.0 {
                return Err(CompletionError::InvalidObservationNoise(noise));
            }
        }
        Ok(Self { observed_indices, observed_positions, observation_noise })
    }

    pub fn observed_indices(&self) -> &[usize] {
        &self.observed_indices
    }

    pub fn observed_positions(&self) -> &[Point3<f64>] {
        &self.observed_positions
    }

    pub fn observation_noise(&self) -> Option<f64> {
        self.observation_noise
    }

    pub fn len(&self) -> usize {
        self.observed_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed_indices.is_empty()
    }

    fn check_bounds(&self, points: usize) -> Result<(), CompletionError> {
        for &i in &self.observed_indices {
            if i >= points {
                return Err(CompletionError::ObservedIndexOutOfBounds { index: i, points });
            }
        }
        Ok(())
    }
}

/// How a completion arrived at its answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CompletionStatus {
    /// Conditioned on at least one observation.
    Posterior,
    /// No observations: the model prior mean was returned.
    PriorMean,
}

/// A registration result that carries the template deformed into target
/// space, usable directly as a completed shape.
pub trait DeformedTemplate {
    fn deformed_template(&self) -> &PointCloud;
}

/// The simplest completion: the non-rigid stage's deformed template.
pub fn deformed_template_completion<R: DeformedTemplate>(result: &R) -> PointCloud {
    result.deformed_template().clone()
}

/// Flattens a cloud point-major into a `3M` vector.
pub(crate) fn flatten(cloud: &PointCloud) -> DVector<f64> {
    let mut v = DVector::zeros(cloud.len() * 3);
    for (i, p) in cloud.points().iter().enumerate() {
        v[3 * i] = p.x;
        v[3 * i + 1] = p.y;
        v[3 * i + 2] = p.z;
    }
    v
}

/// Inverse of [`flatten`]; panics if the length is not a multiple of 3.
pub(crate) fn unflatten(v: &DVector<f64>) -> PointCloud {
    assert_eq!(v.len() % 3, 0, "flattened shape length must be a multiple of 3");
    let points = (0..v.len() / 3)
        .map(|i| Point3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2]))
        .collect();
    PointCloud::from_parts_unchecked(points, None, None)
}

/// Rows of the flattened representation touched by the observed points.
pub(crate) fn observed_rows(observation: &PartialObservation) -> Vec<usize> {
    let mut rows = Vec::with_capacity(observation.len() * 3);
    for &p in observation.observed_indices() {
        rows.extend_from_slice(&[3 * p, 3 * p + 1, 3 * p + 2]);
    }
    rows
}

/// Flattened observed coordinates in row order.
pub(crate) fn observed_values(observation: &PartialObservation) -> DVector<f64> {
    let mut v = DVector::zeros(observation.len() * 3);
    for (slot, p) in observation.observed_positions().iter().enumerate() {
        v[3 * slot] = p.x;
        v[3 * slot + 1] = p.y;
        v[3 * slot + 2] = p.z;
    }
    v
}

fn validate_finite(values: &[f64], what: &str) -> Result<(), CompletionError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CompletionError::InvalidModel(format!("{what} contains non-finite values")))
    }
}

fn validate_orthonormal(basis: &DMatrix<f64>) -> Result<(), CompletionError> {
    let gram = basis.transpose() * basis;
    let deviation = (&gram - DMatrix::identity(gram.nrows(), gram.ncols())).abs().max();
    if deviation > BASIS_ORTHO_TOL {
        return Err(CompletionError::InvalidModel(format!(
            "basis columns deviate from orthonormality by {deviation:e}"
        )));
    }
    Ok(())
}

fn validate_spectrum(eigenvalues: &DVector<f64>) -> Result<(), CompletionError> {
    for (i, &l) in eigenvalues.iter().enumerate() {
        if !l.is_finite() || l < 0.0 {
            return Err(CompletionError::InvalidModel(format!(
                "eigenvalue {i} is {l}, expected finite and non-negative"
            )));
        }
        if i > 0 && l > eigenvalues[i - 1] + f64::EPSILON {
            return Err(CompletionError::InvalidModel(format!(
                "eigenvalues not in descending order at index {i}"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pca_model_rejects_non_orthonormal_basis() {
        let mean = DVector::zeros(6);
        let basis = DMatrix::from_element(6, 2, 0.5);
        let eig = DVector::from_vec(vec![2.0, 1.0]);
        let err = PcaShapeModel::new(mean, basis, eig, 0.0).unwrap_err();
        assert!(err.to_string().contains("orthonormality"), "{err}");
    }

    #[test]
    fn pca_model_rejects_ascending_eigenvalues() {
        let mean = DVector::zeros(6);
        let mut basis = DMatrix::zeros(6, 2);
        basis[(0, 0)] = 1.0;
        basis[(1, 1)] = 1.0;
        let eig = DVector::from_vec(vec![1.0, 2.0]);
        let err = PcaShapeModel::new(mean, basis, eig, 0.0).unwrap_err();
        assert!(err.to_string().contains("descending"), "{err}");
    }

    #[test]
    fn observation_rejects_duplicates_and_mismatches() {
        let err = PartialObservation::new(vec![1, 1], vec![Point3::origin(); 2], None).unwrap_err();
        assert!(matches!(err, CompletionError::DuplicateObservedIndex(1)));
        let err = PartialObservation::new(vec![1], vec![], None).unwrap_err();
        assert!(matches!(err, CompletionError::ObservationLengthMismatch { .. }));
    }

    #[test]
    fn flatten_unflatten_round_trip() {
        let cloud = PointCloud::new(vec![
            Point3::new(1.0, 2.0, 3.0),
            Point3::new(-4.0, 5.5, 0.25),
        ])
        .unwrap();
        let v = flatten(&cloud);
        assert_eq!(v.as_slice(), &[1.0, 2.0, 3.0, -4.0, 5.5, 0.25]);
        assert_eq!(unflatten(&v).points(), cloud.points());
    }
}
