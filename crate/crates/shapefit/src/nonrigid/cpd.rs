//! Coherent point drift: EM over a Gaussian mixture whose centroids are
//! the template points plus a smooth displacement field.

use nalgebra::{DMatrix, DVector, Point3};
use serde::{Deserialize, Serialize};

use crate::geometry::{CorrespondenceMap, PointCloud};

use super::{
    check_positive, extract_correspondences, gram_matrix, initial_sigma2, responsibilities,
    ConvergenceStatus, NonrigidError, DEFAULT_MISSING_THRESHOLD, DEFAULT_OUTLIER_THRESHOLD,
    SIGMA2_FLOOR,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CpdParams {
    /// Prior probability `w` that a target point is an outlier; in (0, 1).
    pub outlier_weight: f64,
    /// Width `beta` (mm) of the Gaussian coherence kernel. Larger values
    /// couple distant template points and stiffen the field.
    pub kernel_width: f64,
    /// Trade-off `lambda` between data fit and field smoothness.
    pub regularization: f64,
    pub max_iterations: usize,
    /// Stop when the mixture variance changes by less than this (mm^2).
    pub sigma2_tol: f64,
    /// Reserved for stochastic variants; this solver is deterministic and
    /// draws no randomness.
    pub seed: u64,
}

impl Default for CpdParams {
    fn default() -> Self {
        Self {
            outlier_weight: 0.1,
            kernel_width: 2.0,
            regularization: 2.0,
            max_iterations: 150,
            sigma2_tol: 1e-6,
            seed: 0,
        }
    }
}

impl CpdParams {
    pub fn validate(&self) -> Result<(), NonrigidError> {
        if !(self.outlier_weight > 0.0 && self.outlier_weight < 1.0) {
            return Err(NonrigidError::InvalidOutlierWeight(self.outlier_weight));
        }
        check_positive("kernel_width", self.kernel_width)?;
        check_positive("regularization", self.regularization)?;
        check_positive("sigma2_tol", self.sigma2_tol)?;
        if self.max_iterations == 0 {
            return Err(NonrigidError::ZeroIterations);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CpdResult {
    /// Template points moved by the estimated displacement field. Normals
    /// are dropped: a non-rigid field has no single rotation to apply to
    /// them. Labels carry over.
    pub deformed_template: PointCloud,
    /// Final responsibilities, template rows by target columns. Each
    /// column plus its [`CpdResult::outlier_posterior`] entry sums to 1.
    pub posterior: DMatrix<f64>,
    /// Responsibility the uniform outlier component takes for each target.
    pub outlier_posterior: DVector<f64>,
    /// Mixture variance (mm^2) at the last iteration.
    pub sigma2: f64,
    /// Hard assignments from the posterior at the default thresholds.
    pub correspondences: CorrespondenceMap,
    pub iterations: usize,
    pub status: ConvergenceStatus,
    /// Penalized negative log-likelihood after each iteration;
    /// non-increasing for a correct EM loop.
    pub objective_history: Vec<f64>,
}

/// Registers `template` onto `target` with a coherent displacement field.
///
/// Each EM iteration computes soft correspondences under the current
/// mixture (E-step), then solves the regularized least-squares system for
/// the kernel coefficients `W` of the field `y + G W` and updates the
/// shared variance in closed form (M-step). Iteration stops when the
/// variance change falls under `sigma2_tol`, the variance degenerates to
/// zero (an exact fit), or the budget runs out.
pub fn cpd_nonrigid(
    template: &PointCloud,
    target: &PointCloud,
    params: &CpdParams,
) -> Result<CpdResult, NonrigidError> {
    params.validate()?;
    if template.is_empty() {
        return Err(NonrigidError::EmptyTemplate);
    }
    if target.is_empty() {
        return Err(NonrigidError::EmptyTarget);
    }
    let y = template.points();
    let x = target.points();
    let m = y.len();
    let n = x.len();

    let g = gram_matrix(y, params.kernel_width);
    let x_mat = DMatrix::from_fn(n, 3, |i, c| x[i][c]);
    let y_mat = DMatrix::from_fn(m, 3, |i, c| y[i][c]);

    let mut deformed: Vec<Point3<f64>> = y.to_vec();
    let mut sigma2 = initial_sigma2(y, x);
    let mut status = ConvergenceStatus::MaxIterations;
    let mut iterations = 0;
    let mut objective_history = Vec::new();

    for iter in 1..=params.max_iterations {
        iterations = iter;
        let (posterior, _outlier) =
            responsibilities(&deformed, x, sigma2, params.outlier_weight, None);

        // M-step. Premultiplying the usual system by diag(P1) keeps it
        // solvable even when a template point holds no responsibility.
        let row_mass: DVector<f64> = DVector::from_fn(m, |i, _| posterior.row(i).sum());
        let col_mass: DVector<f64> = DVector::from_fn(n, |j, _| posterior.column(j).sum());
        let px = &posterior * &x_mat;
        let mut system = g.clone();
        for i in 0..m {
            let scale = row_mass[i];
            for j in 0..m {
                system[(i, j)] *= scale;
            }
            system[(i, i)] += params.regularization * sigma2;
        }
        let mut rhs = px.clone();
        for i in 0..m {
            for c in 0..3 {
                rhs[(i, c)] -= row_mass[i] * y_mat[(i, c)];
            }
        }
        let w_coeff = system.lu().solve(&rhs).ok_or(NonrigidError::SolveFailed)?;

        let gw = &g * &w_coeff;
        for i in 0..m {
            deformed[i] = Point3::new(
                y_mat[(i, 0)] + gw[(i, 0)],
                y_mat[(i, 1)] + gw[(i, 1)],
                y_mat[(i, 2)] + gw[(i, 2)],
            );
        }

        // Closed-form variance over the soft matches.
        let total_mass: f64 = row_mass.sum();
        let mut fit = 0.0;
        for j in 0..n {
            fit += col_mass[j] * x[j].coords.norm_squared();
        }
        for i in 0..m {
            let t = deformed[i].coords;
            fit += row_mass[i] * t.norm_squared();
            fit -= 2.0 * t.dot(&nalgebra::Vector3::new(px[(i, 0)], px[(i, 1)], px[(i, 2)]));
        }
        let previous_sigma2 = sigma2;
        sigma2 = fit / (3.0 * total_mass);

        objective_history.push(penalized_nll(
            &deformed,
            x,
            sigma2.max(SIGMA2_FLOOR),
            params,
            &w_coeff,
            &gw,
        ));

        if !(sigma2 > SIGMA2_FLOOR) {
            sigma2 = SIGMA2_FLOOR;
            status = ConvergenceStatus::DegenerateVariance;
            break;
        }
        if (previous_sigma2 - sigma2).abs() < params.sigma2_tol {
            status = ConvergenceStatus::Converged;
            break;
        }
    }

    // Recompute the posterior at the final field so the stored matrix
    // describes the deformed template actually returned.
    let (posterior, outlier_posterior) =
        responsibilities(&deformed, x, sigma2, params.outlier_weight, None);
    let correspondences = extract_correspondences(
        &posterior,
        DEFAULT_MISSING_THRESHOLD,
        DEFAULT_OUTLIER_THRESHOLD,
    )?;

    let mut deformed_template = PointCloud::new(deformed)?;
    if let Some(labels) = template.labels() {
        deformed_template = deformed_template.with_labels(labels.to_vec())?;
    }
    Ok(CpdResult {
        deformed_template,
        posterior,
        outlier_posterior,
        sigma2,
        correspondences,
        iterations,
        status,
        objective_history,
    })
}

/// Negative log-likelihood of the mixture plus the smoothness penalty
/// `lambda/2 tr(W' G W)`; the quantity EM drives downhill.
fn penalized_nll(
    deformed: &[Point3<f64>],
    target: &[Point3<f64>],
    sigma2: f64,
    params: &CpdParams,
    w_coeff: &DMatrix<f64>,
    gw: &DMatrix<f64>,
) -> f64 {
    let m = deformed.len() as f64;
    let n = target.len() as f64;
    let norm = (2.0 * std::f64::consts::PI * sigma2).powf(-1.5);
    let mut nll = 0.0;
    for xj in target {
        let mut density = params.outlier_weight / n;
        for ti in deformed {
            density += (1.0 - params.outlier_weight) / m
                * norm
                * (-(xj - ti).norm_squared() / (2.0 * sigma2)).exp();
        }
        nll -= density.ln();
    }
    let penalty: f64 = w_coeff.zip_fold(gw, 0.0, |acc, w, g| acc + w * g);
    nll + 0.5 * params.regularization * penalty
}
