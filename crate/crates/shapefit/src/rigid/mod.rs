//! Rigid alignment: ICP and a randomized multi-start variant (RANSIP)
//! that scores candidate alignments by how well surface normals agree.
//!
//! Plain ICP converges to the basin of its initialization, which is why
//! it fails under large rotations. [`ransip`] runs ICP from many random
//! rigid starts and keeps the trial whose matched normals agree best: an
//! alignment that merely presses two surfaces together still leaves their
//! normals pointing in unrelated directions, so the median normal angle
//! over the mutually-close pairs separates true alignments from
//! point-distance local optima. The number of trials adapts the way
//! RANSAC's does, from the best inlier fraction seen so far.

use std::collections::BTreeSet;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    ensure_normals, fit_rigid_weighted, median_neighbor_spacing, CorrespondenceMap,
    GeometryError, KdTree, PointCloud, RigidTransform,
};

/// Neighborhood size used when normals must be estimated on the fly.
pub const DEFAULT_NORMAL_NEIGHBORS: usize = 10;

#[derive(Debug, Error)]
pub enum RigidError {
    #[error("registration diverged")]
    Diverged,
    #[error("no consensus found")]
    NoConsensus,
    #[error("point cloud needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("max_iterations must be at least 1")]
    ZeroIterations,
    #[error("max_trials must be at least 1")]
    ZeroTrials,
    #[error("{name} must be positive and finite, got {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("confidence must be in (0, 1), got {0}")]
    InvalidConfidence(f64),
    #[error("normal angle gate must be in (0, pi], got {0}")]
    InvalidGate(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Residual weighting for the per-iteration transform fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RobustLoss {
    /// Ordinary least squares.
    Squared,
    /// Huber loss: residuals beyond `delta` (mm) get down-weighted by
    /// `delta / r`, limiting the pull of bad matches.
    Huber { delta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Stop when the RMS in-threshold residual improves by less than
    /// this (mm).
    pub convergence_tol: f64,
    /// Pairs farther apart than this (mm) are excluded from the fit and
    /// flagged missing/outlier. `None` derives the template's diameter,
    /// i.e. full matching: gating during the descent shrinks the
    /// convergence basin badly from distant starts, so exclusion is opt-in.
    pub correspondence_threshold: Option<f64>,
    pub robust_loss: RobustLoss,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            convergence_tol: 1e-6,
            correspondence_threshold: None,
            robust_loss: RobustLoss::Squared,
        }
    }
}

impl IcpParams {
    pub fn validate(&self) -> Result<(), RigidError> {
        if self.max_iterations == 0 {
            return Err(RigidError::ZeroIterations);
        }
        check_positive("convergence_tol", self.convergence_tol)?;
        if let Some(t) = self.correspondence_threshold {
            check_positive("correspondence_threshold", t)?;
        }
        if let RobustLoss::Huber { delta } = self.robust_loss {
            check_positive("huber delta", delta)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RansipParams {
    /// Target probability that at least one trial starts in the right
    /// basin; drives the adaptive trial count.
    pub confidence: f64,
    pub max_trials: usize,
    /// Distance gate for inlier pairs (mm). `None` derives 5x the
    /// template's median nearest-neighbor spacing.
    pub inlier_distance_threshold: Option<f64>,
    /// Matched pairs whose normals disagree by at least this angle
    /// (radians) are not inliers.
    pub normal_angle_gate: f64,
    pub icp: IcpParams,
    pub seed: u64,
}

impl Default for RansipParams {
    fn default() -> Self {
        Self {
            confidence: 0.999,
            max_trials: 200,
            inlier_distance_threshold: None,
            normal_angle_gate: std::f64::consts::FRAC_PI_4,
            icp: IcpParams::default(),
            seed: 0,
        }
    }
}

impl RansipParams {
    pub fn validate(&self) -> Result<(), RigidError> {
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(RigidError::InvalidConfidence(self.confidence));
        }
        if self.max_trials == 0 {
            return Err(RigidError::ZeroTrials);
        }
        if let Some(t) = self.inlier_distance_threshold {
            check_positive("inlier_distance_threshold", t)?;
        }
        if !(self.normal_angle_gate > 0.0 && self.normal_angle_gate <= std::f64::consts::PI) {
            return Err(RigidError::InvalidGate(self.normal_angle_gate));
        }
        self.icp.validate()
    }
}

fn check_positive(name: &'static str, value: f64) -> Result<(), RigidError> {
    if !value.is_finite() || value <= 0.0 {
        return Err(RigidError::InvalidParameter { name, value });
    }
    Ok(())
}

/// Outcome of a rigid alignment.
#[derive(Debug, Clone)]
pub struct RigidResult {
    pub transform: RigidTransform,
    /// Per-template nearest target within the distance threshold;
    /// targets never matched are recorded as outliers.
    pub correspondences: CorrespondenceMap,
    /// ICP: final RMS in-threshold residual (mm). RANSIP: median normal
    /// angle over inlier pairs (radians).
    pub cost: f64,
    /// Random starts executed (1 for plain ICP).
    pub trials_run: usize,
    /// Fit steps taken by the reported ICP run.
    pub iterations: usize,
    /// RMS in-threshold residual after each ICP matching; non-increasing.
    pub residual_history: Vec<f64>,
    /// ICP: in-threshold pairs. RANSIP: pairs that also pass the normal
    /// gate.
    pub inliers: Vec<(usize, usize)>,
    /// Costs of RANSIP trials that produced a candidate (empty for ICP).
    pub trial_costs: Vec<f64>,
}

struct NnPair {
    template: usize,
    target: usize,
    distance: f64,
}

fn nearest_pairs(template: &PointCloud, tree: &KdTree, tf: &RigidTransform) -> Vec<NnPair> {
    template
        .points()
        .iter()
        .enumerate()
        .map(|(m, p)| {
            let q = tf.apply_point(p);
            let (target, distance) = tree.nearest(&q).expect("target cloud is non-empty");
            NnPair { template: m, target, distance }
        })
        .collect()
}

/// Root-mean-square distance over in-threshold pairs. RMS (not the
/// arithmetic mean) is the right descent measure here: each fit step
/// minimizes the summed squared distances, and re-matching to nearest
/// neighbors can only shrink them, so under full matching RMS decreases
/// monotonically while the plain mean can oscillate near convergence.
fn mean_in_threshold(pairs: &[NnPair], threshold: f64) -> Option<(f64, usize)> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for pair in pairs {
        if pair.distance <= threshold {
            sum += pair.distance * pair.distance;
            count += 1;
        }
    }
    (count >= 3).then(|| ((sum / count as f64).sqrt(), count))
}

fn correspondence_map(
    pairs: &[NnPair],
    threshold: f64,
    target_len: usize,
) -> CorrespondenceMap {
    let assignments: Vec<Option<usize>> = pairs
        .iter()
        .map(|p| (p.distance <= threshold).then_some(p.target))
        .collect();
    let assigned: BTreeSet<usize> = assignments.iter().flatten().copied().collect();
    let outliers: BTreeSet<usize> = (0..target_len).filter(|j| !assigned.contains(j)).collect();
    CorrespondenceMap::new(assignments, outliers, threshold, target_len)
        .expect("threshold positive, indices in range")
}

/// Iterative closest point with a correspondence distance gate.
///
/// Alternates nearest-neighbor matching (template onto target) with a
/// closed-form weighted rigid fit over the in-threshold pairs, mapping
/// the *original* template each iteration so error cannot accumulate
/// through composed transforms. A fit that increases the mean
/// in-threshold residual is rolled back and iteration stops, which makes
/// the recorded residual history non-increasing.
pub fn icp(
    template: &PointCloud,
    target: &PointCloud,
    params: &IcpParams,
    init: &RigidTransform,
) -> Result<RigidResult, RigidError> {
    params.validate()?;
    if template.len() < 3 {
        return Err(RigidError::TooFewPoints(template.len()));
    }
    if target.len() < 3 {
        return Err(RigidError::TooFewPoints(target.len()));
    }
    init.validate()?;
    let threshold = match params.correspondence_threshold {
        Some(t) => t,
        None => template.diameter()?,
    };
    let tree = KdTree::build(target.points());

    let mut current = *init;
    let mut previous = current;
    let mut history: Vec<f64> = Vec::new();
    let mut fits = 0usize;
    loop {
        let pairs = nearest_pairs(template, &tree, &current);
        let Some((mean, _)) = mean_in_threshold(&pairs, threshold) else {
            return Err(RigidError::Diverged);
        };
        match history.last() {
            Some(&prev) if mean > prev => {
                // The last fit made matching worse under the gate: undo it.
                current = previous;
                break;
            }
            Some(&prev) => {
                history.push(mean);
                if prev - mean < params.convergence_tol {
                    break;
                }
            }
            None => history.push(mean),
        }
        if fits == params.max_iterations {
            break;
        }
        let mut source = Vec::new();
        let mut matched = Vec::new();
        let mut weights = Vec::new();
        for pair in pairs.iter().filter(|p| p.distance <= threshold) {
            source.push(template.points()[pair.template]);
            matched.push(target.points()[pair.target]);
            weights.push(match params.robust_loss {
                RobustLoss::Squared => 1.0,
                RobustLoss::Huber { delta } => {
                    if pair.distance <= delta {
                        1.0
                    } else {
                        delta / pair.distance
                    }
                }
            });
        }
        previous = current;
        current = fit_rigid_weighted(&source, &matched, &weights)?;
        fits += 1;
    }

    let pairs = nearest_pairs(template, &tree, &current);
    let Some((cost, _)) = mean_in_threshold(&pairs, threshold) else {
        return Err(RigidError::Diverged);
    };
    debug_assert!(history.windows(2).all(|w| w[1] <= w[0]));
    let inliers = pairs
        .iter()
        .filter(|p| p.distance <= threshold)
        .map(|p| (p.template, p.target))
        .collect();
    Ok(RigidResult {
        transform: current,
        correspondences: correspondence_map(&pairs, threshold, target.len()),
        cost,
        trials_run: 1,
        iterations: fits,
        residual_history: history,
        inliers,
        trial_costs: Vec::new(),
    })
}

/// Rotation matrix drawn uniformly over SO(3) (via a Gaussian-sampled
/// unit quaternion).
pub fn uniform_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    loop {
        let q = Quaternion::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        if q.norm() > 1e-12 {
            return UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
        }
    }
}

/// Trials needed so that, with probability `confidence`, at least one
/// trial lands in the basin of the true alignment when a random start
/// succeeds with probability `inlier_fraction`^3 (the RANSAC bound with
/// sample size 3).
fn required_trials(confidence: f64, inlier_fraction: f64) -> usize {
    if inlier_fraction <= 0.0 {
        return usize::MAX;
    }
    let failure = 1.0 - inlier_fraction.powi(3).min(1.0);
    if failure <= 0.0 {
        return 1;
    }
    let denominator = failure.ln();
    if denominator >= 0.0 {
        return usize::MAX;
    }
    let trials = ((1.0 - confidence).ln() / denominator).ceil();
    if !trials.is_finite() || trials >= usize::MAX as f64 {
        usize::MAX
    } else {
        (trials as usize).max(1)
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Inlier pairs and their normal angles under `transform`: pairs within
/// the distance threshold whose (rotated) template normal and target
/// normal disagree by less than the gate. Pairs lacking a normal on
/// either side are skipped.
fn gated_inliers(
    template: &PointCloud,
    target: &PointCloud,
    transform: &RigidTransform,
    pairs: &[NnPair],
    threshold: f64,
    gate: f64,
) -> (Vec<(usize, usize)>, Vec<f64>) {
    let mut inliers = Vec::new();
    let mut angles = Vec::new();
    for pair in pairs.iter().filter(|p| p.distance <= threshold) {
        let (Some(tn), Some(gn)) = (template.normal(pair.template), target.normal(pair.target))
        else {
            continue;
        };
        let rotated = transform.apply_normal(&tn);
        let angle = rotated.dot(&gn).clamp(-1.0, 1.0).acos();
        if angle < gate {
            inliers.push((pair.template, pair.target));
            angles.push(angle);
        }
    }
    (inliers, angles)
}

/// Randomized multi-start ICP scored by normal agreement.
///
/// Each trial rotates the template by a uniform random rotation, places
/// its centroid on the target's, runs [`icp`], and scores the result by
/// the median angle between matched normals over the gated inlier pairs.
/// The lowest-cost trial wins (earliest trial on exact ties). Clouds
/// without stored normals get them estimated first.
pub fn ransip(
    template: &PointCloud,
    target: &PointCloud,
    params: &RansipParams,
) -> Result<RigidResult, RigidError> {
    params.validate()?;
    if template.len() < 3 {
        return Err(RigidError::TooFewPoints(template.len()));
    }
    if target.len() < 3 {
        return Err(RigidError::TooFewPoints(target.len()));
    }
    let template = ensure_normals(template, DEFAULT_NORMAL_NEIGHBORS)?;
    let target = ensure_normals(target, DEFAULT_NORMAL_NEIGHBORS)?;
    let threshold = match params.inlier_distance_threshold {
        Some(t) => t,
        None => 5.0 * median_neighbor_spacing(&template)?,
    };
    let template_centroid = template.centroid()?;
    let target_centroid = target.centroid()?;
    let tree = KdTree::build(target.points());

    struct Best {
        cost: f64,
        result: RigidResult,
        inliers: Vec<(usize, usize)>,
    }
    let mut best: Option<Best> = None;
    let mut trial_costs = Vec::new();
    let mut needed = params.max_trials;
    let mut best_fraction = 0.0f64;
    let mut trial = 0usize;
    while trial < needed {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(trial as u64));
        trial += 1;
        let rotation = uniform_rotation(&mut rng);
        let translation = target_centroid.coords - rotation * template_centroid.coords;
        let init = RigidTransform::new(rotation, translation)
            .expect("unit-quaternion rotation and finite translation");
        let result = match icp(&template, &target, &params.icp, &init) {
            Ok(r) => r,
            Err(RigidError::Diverged) => continue,
            Err(e) => return Err(e),
        };
        let pairs = nearest_pairs(&template, &tree, &result.transform);
        let (inliers, mut angles) =
            gated_inliers(&template, &target, &result.transform, &pairs, threshold, params.normal_angle_gate);
        if inliers.len() < 3 {
            continue;
        }
        angles.sort_by(|a, b| a.partial_cmp(b).expect("angles are finite"));
        let cost = median(&angles);
        trial_costs.push(cost);
        let fraction = (inliers.len() as f64 / template.len() as f64).min(1.0);
        if best.as_ref().is_none_or(|b| cost < b.cost) {
            best = Some(Best { cost, result, inliers });
        }
        if fraction > best_fraction {
            best_fraction = fraction;
            needed = needed.min(required_trials(params.confidence, fraction).max(1));
        }
    }

    let Some(best) = best else {
        return Err(RigidError::NoConsensus);
    };
    let pairs = nearest_pairs(&template, &tree, &best.result.transform);
    Ok(RigidResult {
        transform: best.result.transform,
        correspondences: correspondence_map(&pairs, threshold, target.len()),
        cost: best.cost,
        trials_run: trial,
        iterations: best.result.iterations,
        residual_history: best.result.residual_history,
        inliers: best.inliers,
        trial_costs,
    })
}

/// Splits points by the registration outcome: targets matched by some
/// template point, targets matched by none (outliers), and template
/// points with no in-threshold target (missing).
pub fn classify_points(
    result: &RigidResult,
    target: &PointCloud,
) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let assigned = result.correspondences.assigned_targets();
    let inlier_targets: Vec<usize> = assigned.iter().copied().collect();
    let outlier_targets: Vec<usize> = (0..target.len()).filter(|j| !assigned.contains(j)).collect();
    let missing = result.correspondences.missing_template_indices();
    (inlier_targets, outlier_targets, missing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{apply_transform, rotation_angle_between};
    use crate::synth::bumpy_patch;
    use nalgebra::{Point3, Vector3};

    fn rot_z(angle: f64) -> Matrix3<f64> {
        Matrix3::new(
            angle.cos(), -angle.sin(), 0.0,
            angle.sin(), angle.cos(), 0.0,
            0.0, 0.0, 1.0,
        )
    }

    #[test]
    fn identical_pair_yields_identity_and_zero_cost() {
        let cloud = bumpy_patch(400, 1);
        let result =
            icp(&cloud, &cloud, &IcpParams::default(), &RigidTransform::identity()).unwrap();
        assert!(result.cost == 0.0);
        assert!((result.transform.rotation - Matrix3::identity()).abs().max() < 1e-12);
        assert!(result.transform.translation.norm() < 1e-12);
        assert_eq!(result.correspondences.assigned_count(), 400);
        // Every template point matches itself.
        assert!(result.inliers.iter().all(|&(m, j)| m == j));
    }

    #[test]
    fn recovers_synthesized_transform() {
        let template = bumpy_patch(600, 2);
        let truth = RigidTransform::new(
            rot_z(15f64.to_radians()),
            Vector3::new(5.0, 0.0, 0.0),
        )
        .unwrap();
        let target = apply_transform(&template, &truth);
        let result =
            icp(&template, &target, &IcpParams::default(), &RigidTransform::identity()).unwrap();
        assert!(result.cost < 1e-6, "residual {}", result.cost);
        assert!((result.transform.rotation - truth.rotation).abs().max() < 1e-6);
        assert!((result.transform.translation - truth.translation).norm() < 1e-6);
    }

    #[test]
    fn residual_history_is_non_increasing() {
        let template = bumpy_patch(500, 3);
        let truth =
            RigidTransform::new(rot_z(25f64.to_radians()), Vector3::new(3.0, -2.0, 1.0)).unwrap();
        let target = apply_transform(&template, &truth);
        let result =
            icp(&template, &target, &IcpParams::default(), &RigidTransform::identity()).unwrap();
        assert!(!result.residual_history.is_empty());
        for w in result.residual_history.windows(2) {
            assert!(w[1] <= w[0], "history increased: {:?}", result.residual_history);
        }
    }

    #[test]
    fn far_apart_clouds_with_tight_threshold_diverge() {
        let template = bumpy_patch(100, 4);
        let far = RigidTransform::new(Matrix3::identity(), Vector3::new(1e4, 0.0, 0.0)).unwrap();
        let target = apply_transform(&template, &far);
        let params = IcpParams { correspondence_threshold: Some(0.5), ..IcpParams::default() };
        let err = icp(&template, &target, &params, &RigidTransform::identity()).unwrap_err();
        assert_eq!(err.to_string(), "registration diverged");
    }

    #[test]
    fn icp_is_equivariant_under_target_motion() {
        let template = bumpy_patch(400, 5);
        let truth =
            RigidTransform::new(rot_z(10f64.to_radians()), Vector3::new(1.0, 2.0, 0.5)).unwrap();
        let target = apply_transform(&template, &truth);
        let base =
            icp(&template, &target, &IcpParams::default(), &RigidTransform::identity()).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..3 {
            let q = RigidTransform::new(
                uniform_rotation(&mut rng),
                Vector3::new(
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                ),
            )
            .unwrap();
            let moved_target = apply_transform(&target, &q);
            let moved = icp(&template, &moved_target, &IcpParams::default(), &q).unwrap();
            let expected = q.compose(&base.transform);
            assert!(
                (moved.transform.rotation - expected.rotation).abs().max() < 1e-6,
                "rotation not equivariant"
            );
            assert!((moved.transform.translation - expected.translation).norm() < 1e-6);
        }
    }

    #[test]
    fn huber_resists_contamination_better_than_squared() {
        let template = bumpy_patch(400, 6);
        let truth =
            RigidTransform::new(rot_z(20f64.to_radians()), Vector3::new(2.0, 1.0, -1.0)).unwrap();
        let clean = apply_transform(&template, &truth);
        // Push a tenth of the target far off the surface.
        let mut points = clean.points().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        for _ in 0..40 {
            let k = rng.random_range(0..points.len());
            points[k] += Vector3::new(
                rng.random_range(-30.0..30.0),
                rng.random_range(-30.0..30.0),
                rng.random_range(-30.0..30.0),
            );
        }
        let contaminated = PointCloud::new(points).unwrap();
        let squared = icp(
            &template,
            &contaminated,
            &IcpParams { robust_loss: RobustLoss::Squared, ..IcpParams::default() },
            &RigidTransform::identity(),
        )
        .unwrap();
        let huber = icp(
            &template,
            &contaminated,
            &IcpParams { robust_loss: RobustLoss::Huber { delta: 1.0 }, ..IcpParams::default() },
            &RigidTransform::identity(),
        )
        .unwrap();
        let err = |tf: &RigidTransform| rotation_angle_between(&tf.rotation, &truth.rotation);
        assert!(
            err(&huber.transform) <= err(&squared.transform) + 1e-9,
            "huber {} vs squared {}",
            err(&huber.transform),
            err(&squared.transform)
        );
    }

    #[test]
    fn ransip_is_deterministic_and_beats_its_trials() {
        let template = bumpy_patch(250, 7);
        let truth =
            RigidTransform::new(rot_z(140f64.to_radians()), Vector3::new(4.0, -3.0, 2.0)).unwrap();
        let target = apply_transform(&template, &truth);
        let params = RansipParams { seed: 5, max_trials: 40, ..RansipParams::default() };
        let a = ransip(&template, &target, &params).unwrap();
        let b = ransip(&template, &target, &params).unwrap();
        assert_eq!(a.transform.rotation, b.transform.rotation);
        assert_eq!(a.transform.translation, b.transform.translation);
        assert_eq!(a.cost, b.cost);
        assert_eq!(a.trials_run, b.trials_run);
        assert!(a.trial_costs.iter().all(|&c| a.cost <= c));
    }

    #[test]
    fn ransip_recovers_large_rotations_where_icp_fails() {
        let template = bumpy_patch(250, 8);
        let truth = RigidTransform::new(rot_z(120f64.to_radians()), Vector3::zeros()).unwrap();
        let target = apply_transform(&template, &truth);

        let icp_result =
            icp(&template, &target, &IcpParams::default(), &RigidTransform::identity()).unwrap();
        let icp_error = rotation_angle_between(&icp_result.transform.rotation, &truth.rotation);
        assert!(icp_error > 10f64.to_radians(), "single-start icp should fail here");

        let params = RansipParams {
            seed: 9,
            inlier_distance_threshold: Some(1.5 * median_neighbor_spacing(&template).unwrap()),
            ..RansipParams::default()
        };
        let result = ransip(&template, &target, &params).unwrap();
        let error = rotation_angle_between(&result.transform.rotation, &truth.rotation);
        assert!(error < 2f64.to_radians(), "ransip error {} rad", error);
        // Identical geometry: normals agree essentially exactly.
        assert!(result.cost < 1e-3, "cost {}", result.cost);
    }

    #[test]
    fn ransip_inliers_all_pass_the_normal_gate() {
        let template = bumpy_patch(300, 10);
        let truth =
            RigidTransform::new(rot_z(75f64.to_radians()), Vector3::new(1.0, 1.0, 1.0)).unwrap();
        let moved = apply_transform(&template, &truth);
        // Perturb the target so angles are spread out.
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let points = moved
            .points()
            .iter()
            .map(|p| {
                p + Vector3::new(
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                )
            })
            .collect();
        let target = PointCloud::new(points).unwrap();
        let params = RansipParams { seed: 3, ..RansipParams::default() };
        let result = ransip(&template, &target, &params).unwrap();

        let template_n = ensure_normals(&template, DEFAULT_NORMAL_NEIGHBORS).unwrap();
        let target_n = ensure_normals(&target, DEFAULT_NORMAL_NEIGHBORS).unwrap();
        assert!(!result.inliers.is_empty());
        for &(m, j) in &result.inliers {
            let rotated = result.transform.apply_normal(&template_n.normal(m).unwrap());
            let angle = rotated.dot(&target_n.normal(j).unwrap()).clamp(-1.0, 1.0).acos();
            assert!(angle < params.normal_angle_gate, "pair ({m},{j}) angle {angle}");
        }
    }

    #[test]
    fn ransip_identical_pair_stops_early_with_zero_cost() {
        let cloud = bumpy_patch(300, 11);
        // An inlier gate near the sampling density separates true
        // alignments from point-distance local optima.
        let spacing = median_neighbor_spacing(&cloud).unwrap();
        let params = RansipParams {
            seed: 1,
            inlier_distance_threshold: Some(1.5 * spacing),
            ..RansipParams::default()
        };
        let result = ransip(&cloud, &cloud, &params).unwrap();
        // Once a trial recovers the identity alignment the inlier
        // fraction hits 1 and the adaptive bound stops the search.
        assert!(result.trials_run < params.max_trials / 4, "ran {} trials", result.trials_run);
        assert!(result.cost < 1e-6);
        assert_eq!(result.correspondences.assigned_count(), 300);
    }

    #[test]
    fn ransip_errors_without_consensus() {
        // Three nearly-collinear specks vs a far-away cloud: every trial's
        // ICP diverges under a tight threshold.
        let template = bumpy_patch(50, 12);
        let far = RigidTransform::new(Matrix3::identity(), Vector3::new(1e5, 0.0, 0.0)).unwrap();
        let target = apply_transform(&bumpy_patch(50, 13), &far);
        let params = RansipParams {
            seed: 2,
            max_trials: 5,
            inlier_distance_threshold: Some(1e-6),
            icp: IcpParams { correspondence_threshold: Some(1e-6), ..IcpParams::default() },
            ..RansipParams::default()
        };
        let err = ransip(&template, &target, &params).unwrap_err();
        assert_eq!(err.to_string(), "no consensus found");
    }

    #[test]
    fn classify_points_flags_injected_outliers_and_deleted_regions() {
        // Unit grid: deleting points leaves their nearest survivor a full
        // grid step away, beyond the 0.4 threshold.
        let template = PointCloud::new(
            (0..300)
                .map(|i| Point3::new((i % 20) as f64, (i / 20) as f64, ((i % 7) as f64) * 0.05))
                .collect(),
        )
        .unwrap();
        // Delete 50 template correspondences from the target and inject 10
        // far-away points (more than 10x the threshold from the surface).
        let kept: Vec<usize> = (50..300).collect();
        let mut points: Vec<_> = kept.iter().map(|&i| template.points()[i]).collect();
        let injected_start = points.len();
        for k in 0..10 {
            points.push(Point3::new(500.0 + k as f64, 500.0, 500.0));
        }
        let target = PointCloud::new(points).unwrap();
        let params = IcpParams { correspondence_threshold: Some(0.4), ..IcpParams::default() };
        let result = icp(&template, &target, &params, &RigidTransform::identity()).unwrap();
        let (inliers, outliers, missing) = classify_points(&result, &target);
        assert_eq!(outliers, (injected_start..injected_start + 10).collect::<Vec<_>>());
        assert_eq!(missing, (0..50).collect::<Vec<_>>());
        assert_eq!(inliers.len(), 250);
        assert_eq!(
            result.correspondences.outlier_targets().iter().copied().collect::<Vec<_>>(),
            outliers
        );
    }

    #[test]
    fn parameter_validation_rejects_nonsense() {
        let cloud = bumpy_patch(10, 15);
        let bad = IcpParams { max_iterations: 0, ..IcpParams::default() };
        assert!(icp(&cloud, &cloud, &bad, &RigidTransform::identity()).is_err());
        let bad = IcpParams { convergence_tol: -1.0, ..IcpParams::default() };
        assert!(icp(&cloud, &cloud, &bad, &RigidTransform::identity()).is_err());
        let bad = RansipParams { confidence: 1.5, ..RansipParams::default() };
        assert!(ransip(&cloud, &cloud, &bad).is_err());
        let bad = RansipParams { normal_angle_gate: 0.0, ..RansipParams::default() };
        assert!(ransip(&cloud, &cloud, &bad).is_err());
        let two = PointCloud::new(vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)]).unwrap();
        assert!(matches!(
            icp(&two, &cloud, &IcpParams::default(), &RigidTransform::identity()),
            Err(RigidError::TooFewPoints(2))
        ));
    }

    #[test]
    fn uniform_rotations_are_proper_and_cover_angles() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let mut large = 0;
        for _ in 0..200 {
            let r = uniform_rotation(&mut rng);
            assert!(((r.transpose() * r) - Matrix3::identity()).abs().max() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
            if rotation_angle_between(&r, &Matrix3::identity()) > std::f64::consts::FRAC_PI_2 {
                large += 1;
            }
        }
        // Uniform rotations exceed 90 degrees more than half the time.
        assert!(large > 100, "only {large} of 200 rotations were large");
    }
}
