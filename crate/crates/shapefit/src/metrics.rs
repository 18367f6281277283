//! Scores registration and completion output against corruption ground
//! truth: mean correspondence distance, fraction of correspondences
//! found, outlier/missing classification quality, and completion error.
//!
//! Naming note: `precision` here is `TN / (TN + FP)`, the formula
//! statisticians call specificity. The name is kept because the
//! downstream reports use it, but every export carries a metadata note
//! spelling out the formula so nobody mistakes it for `TP / (TP + FP)`.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corruption::CorruptionGroundTruth;
use crate::geometry::{CorrespondenceMap, PointCloud};
use crate::io::fmt_f64;

/// The formula clarification attached to every aggregate export.
pub const PRECISION_NOTE: &str =
    "precision columns use TN/(TN+FP) (the specificity formula); recall columns use TP/(TP+FN)";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no scorable correspondences")]
    NoScorableCorrespondences,
    #[error("no template point kept a true correspondent")]
    NoSurvivingCorrespondents,
    #[error("{what} has {got} points but ground truth describes {expected}")]
    LengthMismatch { what: &'static str, got: usize, expected: usize },
    #[error("classified index {index} out of bounds for {len} points")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("clouds have {predicted} and {truth} points; completion scoring needs index-matched clouds")]
    CountMismatch { predicted: usize, truth: usize },
    #[error("cannot score empty clouds")]
    EmptyClouds,
}

/// Per-sample registration quality bundle.
///
/// `distance_error` is in mm. `correspondence_fraction` may exceed 1 when
/// a method assigns template points whose true correspondent was deleted
/// (many-to-one matching does this). Classification ratios are `None`
/// when their denominator is empty, never silently zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationScore {
    pub distance_error: f64,
    pub correspondence_fraction: f64,
    pub outlier_precision: Option<f64>,
    pub outlier_recall: Option<f64>,
    pub missing_precision: Option<f64>,
    pub missing_recall: Option<f64>,
}

/// Mean distance (mm) between each assigned target point and the target
/// point that truly corresponds to the template point, over template
/// points where both sides are known.
///
/// The template and the clean target must be index-corresponded (point
/// `m` of one truly matches point `m` of the other), which is how the
/// corruption simulator produces evaluation pairs. Assigned positions are
/// reconstructed from the clean target plus the recorded noise
/// displacements, so the corrupted cloud itself is not needed; the flip
/// side is that assignments onto injected outliers cannot be scored (the
/// record does not store their coordinates) and are skipped here — the
/// classification scores are where such mistakes show up.
pub fn distance_error(
    correspondences: &CorrespondenceMap,
    ground_truth: &CorruptionGroundTruth,
    template: &PointCloud,
    target_clean: &PointCloud,
) -> Result<f64, MetricsError> {
    let original = ground_truth.original_point_count;
    check_len("template", template.len(), original)?;
    check_len("clean target", target_clean.len(), original)?;
    check_len("correspondence map", correspondences.template_len(), original)?;
    let corrupted_len = ground_truth.kept_original_index.len();

    let inverse = ground_truth.corrupted_index_of_original();
    let displacement = |j: usize| -> Vector3<f64> {
        ground_truth.noise_displacements[j].unwrap_or_else(Vector3::zeros)
    };

    let mut sum = 0.0;
    let mut count = 0usize;
    for (m, assignment) in correspondences.assignments().iter().enumerate() {
        let Some(j) = *assignment else { continue };
        if j >= corrupted_len {
            return Err(MetricsError::IndexOutOfBounds { index: j, len: corrupted_len });
        }
        // The true correspondent of template point m, if it survived.
        let Some(true_j) = inverse[m] else { continue };
        // Where the assignment actually landed; unknowable for outliers.
        let Some(origin) = ground_truth.kept_original_index[j] else { continue };
        let assigned = target_clean.points()[origin] + displacement(j);
        let truth = target_clean.points()[m] + displacement(true_j);
        sum += (assigned - truth).norm();
        count += 1;
    }
    if count == 0 {
        return Err(MetricsError::NoScorableCorrespondences);
    }
    Ok(sum / count as f64)
}

/// Assignments made, over template points whose true correspondent
/// survived corruption. Exceeds 1 when points with deleted correspondents
/// get assigned anyway.
pub fn correspondence_fraction(
    correspondences: &CorrespondenceMap,
    ground_truth: &CorruptionGroundTruth,
) -> Result<f64, MetricsError> {
    let original = ground_truth.original_point_count;
    check_len("correspondence map", correspondences.template_len(), original)?;
    let survivors = original - ground_truth.removed_indices.len();
    if survivors == 0 {
        return Err(MetricsError::NoSurvivingCorrespondents);
    }
    Ok(correspondences.assigned_count() as f64 / survivors as f64)
}

/// Classification quality of a flagged-outlier set against the injected
/// outliers the simulator recorded. Targets not in `flagged` count as
/// classified non-outlier. Returns `(precision, recall)`; see
/// [`PRECISION_NOTE`] for the exact formulas.
pub fn outlier_scores(
    flagged: &BTreeSet<usize>,
    ground_truth: &CorruptionGroundTruth,
) -> Result<(Option<f64>, Option<f64>), MetricsError> {
    let len = ground_truth.kept_original_index.len();
    confusion_scores(flagged, len, |j| ground_truth.is_injected_outlier(j))
}

/// Mirror of [`outlier_scores`] for template points flagged missing,
/// scored against the indices the simulator actually deleted.
pub fn missing_scores(
    flagged: &BTreeSet<usize>,
    ground_truth: &CorruptionGroundTruth,
) -> Result<(Option<f64>, Option<f64>), MetricsError> {
    let len = ground_truth.original_point_count;
    confusion_scores(flagged, len, |m| ground_truth.removed_indices.contains(&m))
}

fn confusion_scores(
    flagged: &BTreeSet<usize>,
    len: usize,
    truth: impl Fn(usize) -> bool,
) -> Result<(Option<f64>, Option<f64>), MetricsError> {
    if let Some(&index) = flagged.iter().find(|&&i| i >= len) {
        return Err(MetricsError::IndexOutOfBounds { index, len });
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..len {
        match (flagged.contains(&i), truth(i)) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let precision = (tn + fp > 0).then(|| tn as f64 / (tn + fp) as f64);
    let recall = (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64);
    Ok((precision, recall))
}

/// Full score bundle for one registration result. The outlier
/// classification is the map's rejected-target set; the missing
/// classification is its unassigned template indices.
pub fn score_registration(
    correspondences: &CorrespondenceMap,
    ground_truth: &CorruptionGroundTruth,
    template: &PointCloud,
    target_clean: &PointCloud,
) -> Result<RegistrationScore, MetricsError> {
    let missing: BTreeSet<usize> =
        correspondences.missing_template_indices().into_iter().collect();
    let (outlier_precision, outlier_recall) =
        outlier_scores(correspondences.outlier_targets(), ground_truth)?;
    let (missing_precision, missing_recall) = missing_scores(&missing, ground_truth)?;
    Ok(RegistrationScore {
        distance_error: distance_error(correspondences, ground_truth, template, target_clean)?,
        correspondence_fraction: correspondence_fraction(correspondences, ground_truth)?,
        outlier_precision,
        outlier_recall,
        missing_precision,
        missing_recall,
    })
}

/// Mean per-point distance (mm) between two index-corresponded clouds.
pub fn reconstruction_error(
    predicted: &PointCloud,
    truth: &PointCloud,
) -> Result<f64, MetricsError> {
    if predicted.len() != truth.len() {
        return Err(MetricsError::CountMismatch {
            predicted: predicted.len(),
            truth: truth.len(),
        });
    }
    if predicted.is_empty() {
        return Err(MetricsError::EmptyClouds);
    }
    let sum: f64 = predicted
        .points()
        .iter()
        .zip(truth.points())
        .map(|(p, t)| (p - t).norm())
        .sum();
    Ok(sum / predicted.len() as f64)
}

/// One labeled score line for the CSV export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub sample: String,
    pub method: String,
    pub score: RegistrationScore,
}

/// One row per sample per method; undefined ratios stay empty cells.
pub fn write_scores_csv(rows: &[ScoreRow]) -> Vec<u8> {
    let mut out = String::from(
        "sample,method,distance_error,correspondence_fraction,\
         outlier_precision,outlier_recall,missing_precision,missing_recall\n",
    );
    let cell = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for row in rows {
        let s = &row.score;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.sample,
            row.method,
            fmt_f64(s.distance_error),
            fmt_f64(s.correspondence_fraction),
            cell(s.outlier_precision),
            cell(s.outlier_recall),
            cell(s.missing_precision),
            cell(s.missing_recall),
        ));
    }
    out.into_bytes()
}

/// Spread statistics of one metric over the defined samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub lower_quartile: f64,
    pub upper_quartile: f64,
}

impl MetricSummary {
    /// `None` when no sample defined the metric.
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        Some(Self {
            count: sorted.len(),
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            median: quantile(&sorted, 0.5),
            lower_quartile: quantile(&sorted, 0.25),
            upper_quartile: quantile(&sorted, 0.75),
        })
    }
}

/// Linear interpolation between the two order statistics around
/// `p * (n - 1)`; the convention box-plot tooling uses.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Aggregate summary over score rows, keyed by metric name, with the
/// precision-naming clarification embedded so exports are
/// self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub note: String,
    pub metrics: BTreeMap<String, MetricSummary>,
}

pub fn aggregate_scores(rows: &[ScoreRow]) -> AggregateReport {
    let mut metrics = BTreeMap::new();
    let collect = |f: &dyn Fn(&RegistrationScore) -> Option<f64>| -> Vec<f64> {
        rows.iter().filter_map(|r| f(&r.score)).collect()
    };
    let columns: [(&str, &dyn Fn(&RegistrationScore) -> Option<f64>); 6] = [
        ("distance_error", &|s| Some(s.distance_error)),
        ("correspondence_fraction", &|s| Some(s.correspondence_fraction)),
        ("outlier_precision", &|s| s.outlier_precision),
        ("outlier_recall", &|s| s.outlier_recall),
        ("missing_precision", &|s| s.missing_precision),
        ("missing_recall", &|s| s.missing_recall),
    ];
    for (name, getter) in columns {
        if let Some(summary) = MetricSummary::from_values(&collect(getter)) {
            metrics.insert(name.to_string(), summary);
        }
    }
    AggregateReport { note: PRECISION_NOTE.to_string(), metrics }
}

fn check_len(what: &'static str, got: usize, expected: usize) -> Result<(), MetricsError> {
    if got == expected {
        Ok(())
    } else {
        Err(MetricsError::LengthMismatch { what, got, expected })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corruption::{corrupt, CorruptionConfig};
    use crate::synth::bumpy_patch;
    use nalgebra::Point3;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line_cloud(n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect()).unwrap()
    }

    fn identity_map(n: usize) -> CorrespondenceMap {
        CorrespondenceMap::new((0..n).map(Some).collect(), BTreeSet::new(), 1.0, n).unwrap()
    }

    #[test]
    fn perfect_correspondences_score_zero() {
        let cloud = line_cloud(10);
        let gt = CorruptionGroundTruth::identity(10);
        let map = identity_map(10);
        assert_eq!(distance_error(&map, &gt, &cloud, &cloud).unwrap(), 0.0);
        assert_eq!(correspondence_fraction(&map, &gt).unwrap(), 1.0);
    }

    #[test]
    fn unit_shifted_assignments_score_one_millimetre() {
        let cloud = line_cloud(6);
        let gt = CorruptionGroundTruth::identity(6);
        // Every template point matched to its 1 mm neighbor.
        let assignments = (0..6).map(|m| if m < 5 { Some(m + 1) } else { None }).collect();
        let map = CorrespondenceMap::new(assignments, BTreeSet::new(), 1.0, 6).unwrap();
        assert_eq!(distance_error(&map, &gt, &cloud, &cloud).unwrap(), 1.0);
    }

    #[test]
    fn random_assignments_match_brute_force_on_simulated_corruption() {
        let clean = bumpy_patch(50, 4);
        let config = CorruptionConfig {
            uniform_missing_ratio: 0.2,
            uniform_outlier_ratio: 0.3,
            noise_sigma: 0.5,
            seed: 11,
            ..CorruptionConfig::none()
        };
        let (corrupted, gt) = corrupt(&clean, &config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let assignments: Vec<Option<usize>> = (0..50)
            .map(|_| {
                if rng.random_range(0.0..1.0) < 0.25 {
                    None
                } else {
                    Some(rng.random_range(0..corrupted.len()))
                }
            })
            .collect();
        let map =
            CorrespondenceMap::new(assignments, BTreeSet::new(), 1.0, corrupted.len()).unwrap();

        // Oracle: walk the actual corrupted cloud instead of rebuilding
        // positions from clean + displacement.
        let inverse = gt.corrupted_index_of_original();
        let mut sum = 0.0;
        let mut count = 0usize;
        for (m, assignment) in map.assignments().iter().enumerate() {
            let (Some(j), Some(true_j)) = (*assignment, inverse[m]) else { continue };
            if gt.is_injected_outlier(j) {
                continue;
            }
            sum += (corrupted.points()[j] - corrupted.points()[true_j]).norm();
            count += 1;
        }
        assert!(count > 0);
        let expected = sum / count as f64;
        assert_eq!(distance_error(&map, &gt, &clean, &clean).unwrap(), expected);
    }

    #[test]
    fn no_scorable_correspondences_is_an_error() {
        let cloud = line_cloud(4);
        let gt = CorruptionGroundTruth::identity(4);
        let map =
            CorrespondenceMap::new(vec![None; 4], BTreeSet::new(), 1.0, 4).unwrap();
        let err = distance_error(&map, &gt, &cloud, &cloud).unwrap_err();
        assert_eq!(err.to_string(), "no scorable correspondences");
    }

    #[test]
    fn fraction_counts_assignments_over_survivors() {
        let mut gt = CorruptionGroundTruth::identity(10);
        gt.removed_indices = [0usize, 1].into_iter().collect();
        gt.kept_original_index = (2..10).map(Some).collect();
        gt.noise_displacements = vec![Some(Vector3::zeros()); 8];

        // Half of the 8 survivors assigned.
        let mut assignments = vec![None; 10];
        for m in 2..6 {
            assignments[m] = Some(m - 2);
        }
        let map = CorrespondenceMap::new(assignments, BTreeSet::new(), 1.0, 8).unwrap();
        assert_eq!(correspondence_fraction(&map, &gt).unwrap(), 0.5);

        // Assign every template point, including the two whose true
        // correspondents were deleted: 10 / 8 > 1.
        let all: Vec<Option<usize>> = (0..10).map(|m| Some(m % 8)).collect();
        let map = CorrespondenceMap::new(all, BTreeSet::new(), 1.0, 8).unwrap();
        assert_eq!(correspondence_fraction(&map, &gt).unwrap(), 1.25);
    }

    fn toy_gt_with_outliers(kept: usize, outliers: usize) -> CorruptionGroundTruth {
        CorruptionGroundTruth {
            kept_original_index: (0..kept)
                .map(Some)
                .chain(std::iter::repeat_n(None, outliers))
                .collect(),
            removed_indices: BTreeSet::new(),
            noise_displacements: (0..kept)
                .map(|_| Some(Vector3::zeros()))
                .chain(std::iter::repeat_n(None, outliers))
                .collect(),
            original_point_count: kept,
        }
    }

    #[test]
    fn perfect_outlier_classification_scores_ones() {
        let gt = toy_gt_with_outliers(6, 3);
        let flagged: BTreeSet<usize> = (6..9).collect();
        let (p, r) = outlier_scores(&flagged, &gt).unwrap();
        assert_eq!((p, r), (Some(1.0), Some(1.0)));
    }

    #[test]
    fn flagging_everything_maximizes_recall_and_zeroes_precision() {
        let gt = toy_gt_with_outliers(6, 3);
        let flagged: BTreeSet<usize> = (0..9).collect();
        let (p, r) = outlier_scores(&flagged, &gt).unwrap();
        assert_eq!((p, r), (Some(0.0), Some(1.0)));
    }

    #[test]
    fn undefined_ratios_are_none_not_zero() {
        // No injected outliers: recall has no positives to find.
        let gt = toy_gt_with_outliers(5, 0);
        let (p, r) = outlier_scores(&BTreeSet::new(), &gt).unwrap();
        assert_eq!((p, r), (Some(1.0), None));
        // All outliers flagged-or-not: precision has no negatives.
        let gt = toy_gt_with_outliers(0, 4);
        let (p, r) = outlier_scores(&(0..4).collect(), &gt).unwrap();
        assert_eq!((p, r), (None, Some(1.0)));
    }

    #[test]
    fn random_classifications_match_confusion_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let kept = rng.random_range(1..20);
            let outliers = rng.random_range(0..12);
            let gt = toy_gt_with_outliers(kept, outliers);
            let len = kept + outliers;
            let flagged: BTreeSet<usize> =
                (0..len).filter(|_| rng.random_range(0..2) == 1).collect();
            let (p, r) = outlier_scores(&flagged, &gt).unwrap();

            let (mut tp, mut fp, mut tn, mut fal_n) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..len {
                let is_outlier = i >= kept;
                match (flagged.contains(&i), is_outlier) {
                    (true, true) => tp += 1.0,
                    (true, false) => fp += 1.0,
                    (false, false) => tn += 1.0,
                    (false, true) => fal_n += 1.0,
                }
            }
            let want_p = if tn + fp > 0.0 { Some(tn / (tn + fp)) } else { None };
            let want_r = if tp + fal_n > 0.0 { Some(tp / (tp + fal_n)) } else { None };
            assert_eq!((p, r), (want_p, want_r));
        }
    }

    #[test]
    fn missing_scores_mirror_with_removed_indices() {
        let mut gt = CorruptionGroundTruth::identity(8);
        gt.removed_indices = [1usize, 4, 6].into_iter().collect();
        let exact = gt.removed_indices.clone();
        let (p, r) = missing_scores(&exact, &gt).unwrap();
        assert_eq!((p, r), (Some(1.0), Some(1.0)));
        // One false positive, one miss.
        let flagged: BTreeSet<usize> = [1usize, 4, 0].into_iter().collect();
        let (p, r) = missing_scores(&flagged, &gt).unwrap();
        assert_eq!(p, Some(4.0 / 5.0));
        assert_eq!(r, Some(2.0 / 3.0));
    }

    #[test]
    fn scores_are_invariant_under_target_relabeling() {
        let clean = bumpy_patch(40, 9);
        let config = CorruptionConfig {
            uniform_missing_ratio: 0.25,
            uniform_outlier_ratio: 0.2,
            noise_sigma: 0.3,
            seed: 3,
            ..CorruptionConfig::none()
        };
        let (corrupted, gt) = corrupt(&clean, &config).unwrap();
        let n = corrupted.len();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let assignments: Vec<Option<usize>> = (0..40)
            .map(|_| (rng.random_range(0..3) > 0).then(|| rng.random_range(0..n)))
            .collect();
        let flagged: BTreeSet<usize> = (0..n).filter(|_| rng.random_range(0..4) == 0).collect();
        let flagged_clean: BTreeSet<usize> = flagged
            .iter()
            .copied()
            .filter(|j| !assignments.contains(&Some(*j)))
            .collect();
        let map = CorrespondenceMap::new(
            assignments.clone(),
            flagged_clean.clone(),
            1.0,
            n,
        )
        .unwrap();

        // Relabel the target: permutation of corrupted-cloud indices.
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut gt_perm = gt.clone();
        gt_perm.kept_original_index = vec![None; n];
        gt_perm.noise_displacements = vec![None; n];
        for j in 0..n {
            gt_perm.kept_original_index[perm[j]] = gt.kept_original_index[j];
            gt_perm.noise_displacements[perm[j]] = gt.noise_displacements[j];
        }
        let assignments_perm: Vec<Option<usize>> =
            assignments.iter().map(|a| a.map(|j| perm[j])).collect();
        let flagged_perm: BTreeSet<usize> = flagged_clean.iter().map(|&j| perm[j]).collect();
        let map_perm =
            CorrespondenceMap::new(assignments_perm, flagged_perm.clone(), 1.0, n).unwrap();

        let d = distance_error(&map, &gt, &clean, &clean).unwrap();
        let d_perm = distance_error(&map_perm, &gt_perm, &clean, &clean).unwrap();
        assert_eq!(d, d_perm);
        assert_eq!(
            outlier_scores(&flagged_clean, &gt).unwrap(),
            outlier_scores(&flagged_perm, &gt_perm).unwrap()
        );
        assert_eq!(
            correspondence_fraction(&map, &gt).unwrap(),
            correspondence_fraction(&map_perm, &gt_perm).unwrap()
        );
    }

    #[test]
    fn reconstruction_error_basics() {
        let truth = bumpy_patch(30, 2);
        assert_eq!(reconstruction_error(&truth, &truth).unwrap(), 0.0);

        let offset = PointCloud::new(
            truth.points().iter().map(|p| p + Vector3::new(0.0, 2.0, 0.0)).collect(),
        )
        .unwrap();
        assert_eq!(reconstruction_error(&offset, &truth).unwrap(), 2.0);

        let short = line_cloud(5);
        let err = reconstruction_error(&short, &truth).unwrap_err();
        assert_eq!(
            err.to_string(),
            "clouds have 5 and 30 points; completion scoring needs index-matched clouds"
        );
    }

    #[test]
    fn reconstruction_error_matches_direct_sum_and_triangle_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut random_cloud = |n: usize| {
            PointCloud::new(
                (0..n)
                    .map(|_| {
                        Point3::new(
                            rng.random_range(-10.0..10.0),
                            rng.random_range(-10.0..10.0),
                            rng.random_range(-10.0..10.0),
                        )
                    })
                    .collect(),
            )
            .unwrap()
        };
        for _ in 0..50 {
            let a = random_cloud(20);
            let b = random_cloud(20);
            let c = random_cloud(20);
            let mut direct = 0.0;
            for i in 0..20 {
                direct += (a.points()[i] - b.points()[i]).norm();
            }
            assert_eq!(reconstruction_error(&a, &b).unwrap(), direct / 20.0);
            let ab = reconstruction_error(&a, &b).unwrap();
            let bc = reconstruction_error(&b, &c).unwrap();
            let ac = reconstruction_error(&a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-12);
        }
    }

    #[test]
    fn csv_export_matches_golden_layout() {
        let rows = vec![
            ScoreRow {
                sample: "ear_003".into(),
                method: "ransip+bcpd".into(),
                score: RegistrationScore {
                    distance_error: 0.25,
                    correspondence_fraction: 1.125,
                    outlier_precision: Some(0.9),
                    outlier_recall: None,
                    missing_precision: Some(1.0),
                    missing_recall: Some(0.5),
                },
            },
        ];
        let bytes = write_scores_csv(&rows);
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(
            text,
            "sample,method,distance_error,correspondence_fraction,\
             outlier_precision,outlier_recall,missing_precision,missing_recall\n\
             ear_003,ransip+bcpd,0.25,1.125,0.9,,1,0.5\n"
        );
    }

    #[test]
    fn aggregate_quartiles_interpolate_linearly() {
        let score = |d: f64| ScoreRow {
            sample: "s".into(),
            method: "m".into(),
            score: RegistrationScore {
                distance_error: d,
                correspondence_fraction: 1.0,
                outlier_precision: None,
                outlier_recall: None,
                missing_precision: None,
                missing_recall: None,
            },
        };
        let rows: Vec<ScoreRow> = [1.0, 2.0, 3.0, 4.0].map(score).into_iter().collect();
        let report = aggregate_scores(&rows);
        let d = &report.metrics["distance_error"];
        assert_eq!(d.count, 4);
        assert_eq!(d.mean, 2.5);
        assert_eq!(d.median, 2.5);
        assert_eq!(d.lower_quartile, 1.75);
        assert_eq!(d.upper_quartile, 3.25);
        assert!(!report.metrics.contains_key("outlier_precision"));
        assert_eq!(report.note, PRECISION_NOTE);
    }

    #[test]
    fn score_registration_bundles_all_metrics() {
        let clean = bumpy_patch(30, 6);
        let config = CorruptionConfig {
            uniform_missing_ratio: 0.2,
            uniform_outlier_ratio: 0.2,
            seed: 2,
            ..CorruptionConfig::none()
        };
        let (corrupted, gt) = corrupt(&clean, &config).unwrap();
        // Truth-derived map: every survivor assigned to itself, deleted
        // points missing, injected outliers flagged.
        let inverse = gt.corrupted_index_of_original();
        let assignments: Vec<Option<usize>> = inverse.clone();
        let flagged: BTreeSet<usize> =
            (0..corrupted.len()).filter(|&j| gt.is_injected_outlier(j)).collect();
        let map =
            CorrespondenceMap::new(assignments, flagged, 1.0, corrupted.len()).unwrap();
        let score = score_registration(&map, &gt, &clean, &clean).unwrap();
        assert_eq!(score.distance_error, 0.0);
        assert_eq!(score.correspondence_fraction, 1.0);
        assert_eq!(score.outlier_precision, Some(1.0));
        assert_eq!(score.outlier_recall, Some(1.0));
        assert_eq!(score.missing_precision, Some(1.0));
        assert_eq!(score.missing_recall, Some(1.0));
    }
}
