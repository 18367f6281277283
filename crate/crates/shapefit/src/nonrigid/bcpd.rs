//! Bayesian coherent point drift: a similarity transform around a
//! coherent displacement field, fitted by variational coordinate updates.
//!
//! Putting scale, rotation and translation outside the field keeps pose
//! error out of the bending term. The solver works in a normalized frame
//! (both clouds shifted to their centroids, distances divided by the
//! target's RMS radius) so the convergence tolerance is scale-free; all
//! returned quantities are mapped back to the input units.

use nalgebra::{DMatrix, DVector, Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use crate::geometry::{
    fit_similarity_least_squares, CorrespondenceMap, GeometryError, PointCloud, RigidTransform,
};

use super::{
    check_positive, extract_correspondences, gram_matrix, initial_sigma2, responsibilities,
    ConvergenceStatus, NonrigidError, DEFAULT_MISSING_THRESHOLD, DEFAULT_OUTLIER_THRESHOLD,
    SIGMA2_FLOOR,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcpdParams {
    /// Prior probability `w` that a target point is an outlier; in (0, 1).
    pub outlier_weight: f64,
    /// Width `beta` (mm) of the Gaussian coherence kernel.
    pub kernel_width: f64,
    /// Trade-off `lambda` between data fit and displacement smoothness.
    pub regularization: f64,
    /// Strength `gamma` of the prior pulling scale toward 1; 0 disables
    /// it and lets pathological posteriors drive the scale anywhere.
    pub scale_prior: f64,
    /// Dirichlet concentration `kappa` over per-point mixing weights.
    /// Finite values let frequently-matched template points claim more
    /// mass; infinity pins the weights uniform.
    pub mixing_concentration: f64,
    pub max_iterations: usize,
    /// Stop when scale, rotation, translation and variance all change by
    /// less than this between iterations (normalized frame).
    pub convergence_tol: f64,
    /// Kernel rank for the accelerated path: that many evenly-strided
    /// template points become Nystrom landmarks. 0 means the exact dense
    /// kernel; values >= the template size are exact too.
    pub low_rank_terms: usize,
    /// Reserved for stochastic variants; this solver is deterministic and
    /// draws no randomness.
    pub seed: u64,
}

impl Default for BcpdParams {
    fn default() -> Self {
        Self {
            outlier_weight: 0.1,
            kernel_width: 2.0,
            regularization: 2.0,
            scale_prior: 1.0,
            mixing_concentration: f64::INFINITY,
            max_iterations: 100,
            convergence_tol: 1e-5,
            low_rank_terms: 0,
            seed: 0,
        }
    }
}

impl BcpdParams {
    pub fn validate(&self) -> Result<(), NonrigidError> {
        if !(self.outlier_weight > 0.0 && self.outlier_weight < 1.0) {
            return Err(NonrigidError::InvalidOutlierWeight(self.outlier_weight));
        }
        check_positive("kernel_width", self.kernel_width)?;
        check_positive("regularization", self.regularization)?;
        check_positive("convergence_tol", self.convergence_tol)?;
        if !(self.scale_prior >= 0.0) || !self.scale_prior.is_finite() {
            return Err(NonrigidError::InvalidNonNegativeParameter {
                name: "scale_prior",
                value: self.scale_prior,
            });
        }
        // Infinity is meaningful here (uniform mixing), so only rule out
        // non-positive values and NaN.
        if !(self.mixing_concentration > 0.0) {
            return Err(NonrigidError::InvalidConcentration(self.mixing_concentration));
        }
        if self.max_iterations == 0 {
            return Err(NonrigidError::ZeroIterations);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BcpdResult {
    /// `similarity` applied to template point + displacement, exactly:
    /// `deformed[m] = s R (y_m + v_m) + t` from the stored parts. Normals
    /// are dropped, labels carry over.
    pub deformed_template: PointCloud,
    /// Global similarity component (scale, rotation, translation) in the
    /// input units.
    pub similarity: RigidTransform,
    /// Per-template-point displacement `v_m` (mm), applied before the
    /// similarity.
    pub displacements: Vec<Vector3<f64>>,
    /// Final responsibilities, template rows by target columns.
    pub posterior: DMatrix<f64>,
    /// Responsibility the uniform outlier component takes per target.
    pub outlier_posterior: DVector<f64>,
    /// Mixture variance (mm^2) at the last iteration, in input units.
    pub sigma2: f64,
    /// Hard assignments from the posterior at the default thresholds.
    pub correspondences: CorrespondenceMap,
    pub iterations: usize,
    pub status: ConvergenceStatus,
}

/// The coherence kernel, either dense or as a Nystrom factor
/// `G ~ Q diag(lambda) Q^T`.
enum Kernel {
    Exact(DMatrix<f64>),
    LowRank { q: DMatrix<f64>, lambda: DVector<f64> },
}

impl Kernel {
    /// Dense kernel for `rank == 0`; otherwise a Nystrom factor built on
    /// `rank` evenly-strided landmark points (all of them when `rank >=
    /// M`, which reproduces the dense kernel up to eigensolver rounding).
    ///
    /// The landmark Gram matrix `W` is eigendecomposed and lifted through
    /// the cross-kernel `C`: `G ~ C W^+ C^T = (C V) diag(1/sigma) (C V)^T`.
    /// Near-null landmark directions are truncated; the pseudo-inverse
    /// would only amplify noise through them.
    fn build(points: &[Point3<f64>], beta: f64, rank: usize) -> Self {
        let m = points.len();
        if rank == 0 {
            return Self::Exact(gram_matrix(points, beta));
        }
        let rank = rank.min(m);
        let landmarks: Vec<usize> = (0..rank).map(|k| k * m / rank).collect();
        let denom = 2.0 * beta * beta;
        let w_land = DMatrix::from_fn(rank, rank, |i, j| {
            (-(points[landmarks[i]] - points[landmarks[j]]).norm_squared() / denom).exp()
        });
        let cross = DMatrix::from_fn(m, rank, |i, j| {
            (-(points[i] - points[landmarks[j]]).norm_squared() / denom).exp()
        });
        let eig = w_land.symmetric_eigen();
        let max_eig = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let kept: Vec<usize> =
            order.into_iter().filter(|&k| eig.eigenvalues[k] > max_eig * 1e-12).collect();
        let basis = cross * &eig.eigenvectors;
        let q = DMatrix::from_fn(m, kept.len(), |i, j| basis[(i, kept[j])]);
        let lambda = DVector::from_fn(kept.len(), |j, _| 1.0 / eig.eigenvalues[kept[j]]);
        Self::LowRank { q, lambda }
    }

    /// Solves `(diag(nu) G + ridge I) U = diag(nu) D`, returning `V = G U`:
    /// the smoothed displacement update. The low-rank path expands the
    /// inverse with the Woodbury identity so only a rank-size system is
    /// ever factored.
    fn solve_displacements(
        &self,
        nu: &DVector<f64>,
        d: &DMatrix<f64>,
        ridge: f64,
    ) -> Result<DMatrix<f64>, NonrigidError> {
        let m = nu.len();
        let mut b = d.clone();
        for i in 0..m {
            for c in 0..3 {
                b[(i, c)] *= nu[i];
            }
        }
        match self {
            Self::Exact(g) => {
                let mut system = g.clone();
                for i in 0..m {
                    let scale = nu[i];
                    for j in 0..m {
                        system[(i, j)] *= scale;
                    }
                    system[(i, i)] += ridge;
                }
                let u = system.lu().solve(&b).ok_or(NonrigidError::SolveFailed)?;
                Ok(g * u)
            }
            Self::LowRank { q, lambda } => {
                let rank = lambda.len();
                // Woodbury: (ridge I + diag(nu) Q L Q')^{-1} b
                //   = b/ridge - diag(nu) Q S^{-1} Q' b / ridge^2,
                //   S = L^{-1} + Q' diag(nu) Q / ridge.
                let mut nq = q.clone();
                for i in 0..m {
                    for j in 0..rank {
                        nq[(i, j)] *= nu[i];
                    }
                }
                let mut s = q.transpose() * &nq / ridge;
                for j in 0..rank {
                    s[(j, j)] += 1.0 / lambda[j];
                }
                let qtb = q.transpose() * &b;
                let solved = match s.clone().cholesky() {
                    Some(chol) => chol.solve(&qtb),
                    None => s.lu().solve(&qtb).ok_or(NonrigidError::SolveFailed)?,
                };
                let u = (&b - &nq * solved / ridge) / ridge;
                // V = G U ~ Q diag(lambda) Q' U.
                let mut qtu = q.transpose() * &u;
                for j in 0..rank {
                    for c in 0..3 {
                        qtu[(j, c)] *= lambda[j];
                    }
                }
                Ok(q * qtu)
            }
        }
    }
}

/// Registers `template` onto `target` with a similarity transform wrapped
/// around a coherent displacement field.
///
/// Each iteration reweighs soft correspondences, optionally adapts the
/// mixing weights through their Dirichlet posterior, solves the smoothed
/// displacement system, refits scale/rotation/translation by weighted
/// Procrustes (the scale shrunk toward 1 by `scale_prior`), and updates
/// the variance. Stops when all monitored parameters settle within
/// `convergence_tol`, the variance degenerates, or the budget runs out.
pub fn bcpd(
    template: &PointCloud,
    target: &PointCloud,
    params: &BcpdParams,
) -> Result<BcpdResult, NonrigidError> {
    params.validate()?;
    if template.is_empty() {
        return Err(NonrigidError::EmptyTemplate);
    }
    if target.is_empty() {
        return Err(NonrigidError::EmptyTarget);
    }
    let m = template.len();
    let n = target.len();

    // Normalized frame: centroids out, distances over the target RMS.
    let mu_y = template.centroid()?.coords;
    let mu_x = target.centroid()?.coords;
    let spread: f64 =
        target.points().iter().map(|p| (p.coords - mu_x).norm_squared()).sum::<f64>() / n as f64;
    let unit = if spread > 0.0 { spread.sqrt() } else { 1.0 };
    let y_hat: Vec<Point3<f64>> =
        template.points().iter().map(|p| Point3::from((p.coords - mu_y) / unit)).collect();
    let x_hat: Vec<Point3<f64>> =
        target.points().iter().map(|p| Point3::from((p.coords - mu_x) / unit)).collect();
    let beta_hat = params.kernel_width / unit;
    let lambda_hat = params.regularization * unit * unit;

    let kernel = Kernel::build(&y_hat, beta_hat, params.low_rank_terms);

    let mut scale = 1.0f64;
    let mut rotation = Matrix3::<f64>::identity();
    let mut translation = Vector3::<f64>::zeros();
    let mut v = DMatrix::<f64>::zeros(m, 3);
    let mut sigma2 = initial_sigma2(&y_hat, &x_hat);
    let mut alpha: Option<Vec<f64>> = None;
    let mut status = ConvergenceStatus::MaxIterations;
    let mut iterations = 0;

    let deform = |scale: f64, rotation: &Matrix3<f64>, translation: &Vector3<f64>, v: &DMatrix<f64>, y_hat: &[Point3<f64>]| {
        y_hat
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let shifted = p.coords + Vector3::new(v[(i, 0)], v[(i, 1)], v[(i, 2)]);
                Point3::from(scale * (rotation * shifted) + translation)
            })
            .collect::<Vec<_>>()
    };

    for iter in 1..=params.max_iterations {
        iterations = iter;
        let deformed = deform(scale, &rotation, &translation, &v, &y_hat);
        let (posterior, _outlier) =
            responsibilities(&deformed, &x_hat, sigma2, params.outlier_weight, alpha.as_deref());

        let nu = DVector::from_fn(m, |i, _| posterior.row(i).sum());
        let col_mass = DVector::from_fn(n, |j, _| posterior.column(j).sum());
        let total: f64 = nu.sum();
        if !(total > f64::MIN_POSITIVE) {
            return Err(NonrigidError::AllOutliers);
        }

        if params.mixing_concentration.is_finite() {
            let kappa = params.mixing_concentration;
            let base = digamma(kappa * m as f64 + total);
            alpha = Some((0..m).map(|i| (digamma(kappa + nu[i]) - base).exp()).collect());
        }

        // Posterior mean target for each template point; zero-mass points
        // keep their current position so they contribute nothing.
        let px = &posterior * DMatrix::from_fn(n, 3, |j, c| x_hat[j][c]);
        let x_bar: Vec<Vector3<f64>> = (0..m)
            .map(|i| {
                if nu[i] > f64::MIN_POSITIVE {
                    Vector3::new(px[(i, 0)], px[(i, 1)], px[(i, 2)]) / nu[i]
                } else {
                    deformed[i].coords
                }
            })
            .collect();

        // Displacement update in the template frame: pull the posterior
        // means back through the current similarity.
        let rt = rotation.transpose();
        let d_mat = DMatrix::from_fn(m, 3, |i, c| {
            (rt * ((x_bar[i] - translation) / scale) - y_hat[i].coords)[c]
        });
        let ridge = lambda_hat * sigma2 / (scale * scale);
        v = kernel.solve_displacements(&nu, &d_mat, ridge)?;

        // Weighted Procrustes for the pose, with the scale prior folded
        // into the closed form.
        let sources: Vec<Vector3<f64>> = (0..m)
            .map(|i| y_hat[i].coords + Vector3::new(v[(i, 0)], v[(i, 1)], v[(i, 2)]))
            .collect();
        let mu_src = sources.iter().zip(nu.iter()).map(|(p, &w)| w * p).sum::<Vector3<f64>>() / total;
        let mu_tgt = x_bar.iter().zip(nu.iter()).map(|(p, &w)| w * p).sum::<Vector3<f64>>() / total;
        let mut h = Matrix3::<f64>::zeros();
        let mut src_var = 0.0;
        for i in 0..m {
            let s_c = sources[i] - mu_src;
            let t_c = x_bar[i] - mu_tgt;
            h += nu[i] * s_c * t_c.transpose();
            src_var += nu[i] * s_c.norm_squared();
        }
        let svd = h.svd(true, true);
        let u_svd = svd.u.ok_or(NonrigidError::SolveFailed)?;
        let v_svd = svd.v_t.ok_or(NonrigidError::SolveFailed)?.transpose();
        let det_sign = (v_svd * u_svd.transpose()).determinant().signum();
        let new_rotation =
            v_svd * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, det_sign)) * u_svd.transpose();
        debug_assert!(
            (new_rotation.transpose() * new_rotation - Matrix3::identity()).abs().max() < 1e-8
                && new_rotation.determinant() > 0.0,
            "pose update produced an improper rotation"
        );
        let trace_term = svd.singular_values[0] + svd.singular_values[1]
            + det_sign * svd.singular_values[2];
        let prior = params.scale_prior * sigma2;
        let mut new_scale = (trace_term + prior) / (src_var + prior);
        if !(new_scale > 0.0) || !new_scale.is_finite() {
            return Err(GeometryError::InvalidScale { scale: new_scale }.into());
        }
        let mut new_rotation = new_rotation;
        let mut new_translation = mu_tgt - new_scale * (new_rotation * mu_src);

        // Gauge fix. A displacement field proportional to the template is
        // indistinguishable from scaling, so the data term cannot split
        // the two: coordinate updates stall with part of the pose hiding
        // in `v`. Projecting the best-fit similarity out of the field and
        // composing it into the pose leaves every deformed point exactly
        // where it was but makes the decomposition unique (and lets
        // self-registration resolve to the identity with a zero field).
        let source_pts: Vec<Point3<f64>> = sources.iter().map(|p| Point3::from(*p)).collect();
        if let Ok(gauge) = fit_similarity_least_squares(&y_hat, &source_pts) {
            for (i, src) in sources.iter().enumerate() {
                let residual = src - gauge.apply_point(&y_hat[i]).coords;
                let fixed = (gauge.rotation.transpose() * residual) / gauge.scale;
                for c in 0..3 {
                    v[(i, c)] = fixed[c];
                }
            }
            new_translation += new_scale * (new_rotation * gauge.translation);
            new_rotation *= gauge.rotation;
            new_scale *= gauge.scale;
        }

        // Variance over the soft matches at the updated configuration.
        let new_deformed = deform(new_scale, &new_rotation, &new_translation, &v, &y_hat);
        let mut fit = 0.0;
        for j in 0..n {
            fit += col_mass[j] * x_hat[j].coords.norm_squared();
        }
        for i in 0..m {
            let t_i = new_deformed[i].coords;
            fit += nu[i] * t_i.norm_squared();
            fit -= 2.0 * nu[i] * t_i.dot(&x_bar[i]);
        }
        let new_sigma2 = fit / (3.0 * total);

        let change = (new_sigma2 - sigma2)
            .abs()
            .max((new_scale - scale).abs())
            .max((new_rotation - rotation).abs().max())
            .max((new_translation - translation).norm());
        scale = new_scale;
        rotation = new_rotation;
        translation = new_translation;
        sigma2 = new_sigma2;

        if !(sigma2 > SIGMA2_FLOOR) {
            sigma2 = SIGMA2_FLOOR;
            status = ConvergenceStatus::DegenerateVariance;
            break;
        }
        if change < params.convergence_tol {
            status = ConvergenceStatus::Converged;
            break;
        }
    }

    // Posterior at the final configuration, still in the normalized frame
    // (responsibilities are ratios of distances, so the frame cancels).
    let deformed_hat = deform(scale, &rotation, &translation, &v, &y_hat);
    let (posterior, outlier_posterior) =
        responsibilities(&deformed_hat, &x_hat, sigma2, params.outlier_weight, alpha.as_deref());
    let correspondences = extract_correspondences(
        &posterior,
        DEFAULT_MISSING_THRESHOLD,
        DEFAULT_OUTLIER_THRESHOLD,
    )?;

    // Back to input units: v scales by the unit, and the translation
    // re-absorbs both centroids.
    let displacements: Vec<Vector3<f64>> =
        (0..m).map(|i| unit * Vector3::new(v[(i, 0)], v[(i, 1)], v[(i, 2)])).collect();
    let translation_out = unit * translation + mu_x - scale * (rotation * mu_y);
    let similarity = RigidTransform::with_scale(rotation, translation_out, scale)?;
    let deformed_points: Vec<Point3<f64>> = template
        .points()
        .iter()
        .zip(&displacements)
        .map(|(p, d)| similarity.apply_point(&Point3::from(p.coords + d)))
        .collect();
    let mut deformed_template = PointCloud::new(deformed_points)?;
    if let Some(labels) = template.labels() {
        deformed_template = deformed_template.with_labels(labels.to_vec())?;
    }

    Ok(BcpdResult {
        deformed_template,
        similarity,
        displacements,
        posterior,
        outlier_posterior,
        sigma2: sigma2 * unit * unit,
        correspondences,
        iterations,
        status,
    })
}
