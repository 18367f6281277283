//! Non-rigid refinement: mixture-model registration with a motion-coherent
//! displacement field.
//!
//! Both solvers treat the deformed template as the centroids of a Gaussian
//! mixture that must explain the target, with one uniform component
//! absorbing outliers. [`cpd_nonrigid`] estimates a free displacement per
//! template point, tied together by a Gaussian-kernel smoothness prior and
//! fitted by expectation-maximization. [`bcpd`] additionally estimates a
//! global similarity transform (scale, rotation, translation) around the
//! displacement field, so gross pose error does not have to be absorbed by
//! bending. Soft correspondences fall out of either posterior and are
//! hardened by [`extract_correspondences`].
//!
//! Kernel convention: the coherence kernel is
//! `G(i, j) = exp(-|y_i - y_j|^2 / (2 beta^2))`, with `beta` in mm. The 2 in
//! the denominator matters when comparing widths against other codebases.

use nalgebra::{DMatrix, DVector, Point3};
use thiserror::Error;

use crate::geometry::{CorrespondenceMap, GeometryError};

mod bcpd;
mod cpd;

pub use bcpd::{bcpd, BcpdParams, BcpdResult};
pub use cpd::{cpd_nonrigid, CpdParams, CpdResult};

/// Row responsibility below this means a template point has no credible
/// match and is classified missing.
pub const DEFAULT_MISSING_THRESHOLD: f64 = 0.5;
/// Column responsibility mass below this marks a target point as an
/// outlier nothing on the template claims.
pub const DEFAULT_OUTLIER_THRESHOLD: f64 = 0.3;

/// The mixture variance is clamped here once the fit becomes exact;
/// responsibilities stay well-defined instead of dividing zero by zero.
pub(crate) const SIGMA2_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum NonrigidError {
    #[error("empty template cloud")]
    EmptyTemplate,
    #[error("empty target cloud")]
    EmptyTarget,
    #[error("outlier weight must be in (0, 1), got {0}")]
    InvalidOutlierWeight(f64),
    #[error("{name} must be positive and finite, got {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("{name} must be non-negative and finite, got {value}")]
    InvalidNonNegativeParameter { name: &'static str, value: f64 },
    #[error("mixing concentration must be positive (infinity allowed), got {0}")]
    InvalidConcentration(f64),
    #[error("max_iterations must be at least 1")]
    ZeroIterations,
    #[error("all responsibility collapsed onto the outlier component")]
    AllOutliers,
    #[error("probability threshold must be in [0, 1], got {0}")]
    InvalidProbabilityThreshold(f64),
    #[error("coherent displacement solve failed")]
    SolveFailed,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// How an iterative registration run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceStatus {
    /// The monitored change dropped below the configured tolerance.
    Converged,
    /// The iteration budget ran out first.
    MaxIterations,
    /// The mixture variance collapsed to (numerically) zero: the deformed
    /// template explains the target exactly, so iterating further is
    /// meaningless.
    DegenerateVariance,
}

impl std::fmt::Display for ConvergenceStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Converged => write!(f, "converged"),
            Self::MaxIterations => write!(f, "max iterations reached"),
            Self::DegenerateVariance => write!(f, "converged (degenerate variance)"),
        }
    }
}

pub(crate) fn check_positive(name: &'static str, value: f64) -> Result<(), NonrigidError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(NonrigidError::InvalidParameter { name, value })
    }
}

/// Gram matrix of the Gaussian coherence kernel over one point set.
pub(crate) fn gram_matrix(points: &[Point3<f64>], beta: f64) -> DMatrix<f64> {
    let m = points.len();
    let denom = 2.0 * beta * beta;
    DMatrix::from_fn(m, m, |i, j| {
        (-(points[i] - points[j]).norm_squared() / denom).exp()
    })
}

/// Mean squared distance over all template-target pairs, divided by 3 for
/// the per-coordinate variance. The standard mixture-variance start.
pub(crate) fn initial_sigma2(template: &[Point3<f64>], target: &[Point3<f64>]) -> f64 {
    // sum_{m,n} |x_n - y_m|^2 = N sum|y|^2 + M sum|x|^2 - 2 (sum x).(sum y)
    let m = template.len() as f64;
    let n = target.len() as f64;
    let sum_y: nalgebra::Vector3<f64> = template.iter().map(|p| p.coords).sum();
    let sum_x: nalgebra::Vector3<f64> = target.iter().map(|p| p.coords).sum();
    let sq_y: f64 = template.iter().map(|p| p.coords.norm_squared()).sum();
    let sq_x: f64 = target.iter().map(|p| p.coords.norm_squared()).sum();
    (n * sq_y + m * sq_x - 2.0 * sum_x.dot(&sum_y)) / (3.0 * m * n)
}

/// One E-step: posterior responsibilities of each mixture component for
/// each target point, plus the outlier component's share per target.
///
/// `alpha` holds the mixing weights; `None` means uniform `1/M`. Every
/// column of the returned matrix sums with its outlier entry to exactly 1
/// (up to rounding), because each column is normalized by its own total.
pub(crate) fn responsibilities(
    deformed: &[Point3<f64>],
    target: &[Point3<f64>],
    sigma2: f64,
    outlier_weight: f64,
    alpha: Option<&[f64]>,
) -> (DMatrix<f64>, DVector<f64>) {
    let m = deformed.len();
    let n = target.len();
    let inv_two_sigma2 = 1.0 / (2.0 * sigma2);
    // Uniform outlier density 1/N, folded into the same normalization as
    // the Gaussian components by multiplying through (2 pi sigma^2)^{3/2}.
    let outlier_term = (2.0 * std::f64::consts::PI * sigma2).powf(1.5)
        * (outlier_weight / (1.0 - outlier_weight))
        / n as f64;
    let mut posterior = DMatrix::zeros(m, n);
    let mut outlier = DVector::zeros(n);
    for j in 0..n {
        let mut total = outlier_term;
        for i in 0..m {
            let weight = alpha.map_or(1.0 / m as f64, |a| a[i]);
            let e = weight * (-(target[j] - deformed[i]).norm_squared() * inv_two_sigma2).exp();
            posterior[(i, j)] = e;
            total += e;
        }
        for i in 0..m {
            posterior[(i, j)] /= total;
        }
        outlier[j] = outlier_term / total;
        debug_assert!(
            (posterior.column(j).sum() + outlier[j] - 1.0).abs() < 1e-9,
            "responsibility column {j} lost normalization"
        );
    }
    (posterior, outlier)
}

/// Hardens a soft responsibility matrix into assignments.
///
/// Template row `m` maps to its most responsible target if that
/// responsibility reaches `missing_threshold`, otherwise the point is
/// missing. Exact ties go to the lowest target index. A target column
/// whose total mass stays below `outlier_threshold` is an outlier, unless
/// some row assigned it anyway (a sharp responsibility can sit in an
/// otherwise weak column when many template points compete); assignment
/// wins that conflict.
pub fn extract_correspondences(
    probabilities: &DMatrix<f64>,
    missing_threshold: f64,
    outlier_threshold: f64,
) -> Result<CorrespondenceMap, NonrigidError> {
    for (value, _name) in [(missing_threshold, "missing"), (outlier_threshold, "outlier")] {
        if !(0.0..=1.0).contains(&value) {
            return Err(NonrigidError::InvalidProbabilityThreshold(value));
        }
    }
    let (m, n) = probabilities.shape();
    let mut assignments = Vec::with_capacity(m);
    for i in 0..m {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            let p = probabilities[(i, j)];
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((j, p));
            }
        }
        assignments.push(match best {
            Some((j, p)) if p >= missing_threshold => Some(j),
            _ => None,
        });
    }
    let assigned: std::collections::BTreeSet<usize> =
        assignments.iter().flatten().copied().collect();
    let outliers = (0..n)
        .filter(|&j| probabilities.column(j).sum() < outlier_threshold && !assigned.contains(&j))
        .collect();
    Ok(CorrespondenceMap::new(assignments, outliers, missing_threshold, n)?)
}
