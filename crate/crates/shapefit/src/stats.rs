//! Dataset-level shape statistics over corresponded point clouds:
//! generalized Procrustes alignment, mean shapes, deformation magnitude
//! marginals, and plot-ready exports of all three.
//!
//! Everything here assumes point-to-point correspondence across the
//! dataset (point `m` of every shape is the same anatomical location),
//! which is what the non-rigid registration stage produces.

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    apply_transform, fit_rigid_least_squares, fit_similarity_least_squares, GeometryError,
    PointCloud, RigidTransform,
};
use crate::io::{fmt_f64, write_ply_scalar_field, IoError};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("alignment needs at least 2 shapes, got {0}")]
    TooFewShapes(usize),
    #[error("shape {index} has {got} points but the dataset is corresponded with {expected}")]
    MismatchedPointCounts { index: usize, got: usize, expected: usize },
    #[error("cannot align shapes with no points")]
    EmptyShapes,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Whether the alignment iteration settled on its own or hit the cap.
/// Hitting the cap is a warning, not an error: the best iterate is still
/// returned and usable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GpaStatus {
    Converged,
    MaxIterations,
}

impl std::fmt::Display for GpaStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GpaStatus::Converged => write!(f, "converged"),
            GpaStatus::MaxIterations => write!(f, "max iterations reached"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpaParams {
    /// Cap on align-then-average sweeps.
    pub max_iterations: usize,
    /// Stop once no mean point moves farther than this (mm) in a sweep.
    pub tolerance: f64,
    /// Also fit a per-shape scale factor, so the statistics describe
    /// shape differences with size factored out. Off by default: for
    /// same-unit scan datasets size is usually a real difference worth
    /// keeping.
    pub with_scale: bool,
}

impl Default for GpaParams {
    fn default() -> Self {
        Self { max_iterations: 200, tolerance: 1e-8, with_scale: false }
    }
}

/// A dataset brought into a common pose.
///
/// `shapes[i]` is `apply_transform(&input[i], &alignment_transforms[i])`,
/// and the average of the aligned centroids sits at the origin. The
/// residual rotation freedom is anchored by initializing the mean from
/// the first shape, so reruns are deterministic.
#[derive(Debug, Clone)]
pub struct AlignedDataset {
    pub shapes: Vec<PointCloud>,
    pub alignment_transforms: Vec<RigidTransform>,
    pub iterations_used: usize,
    pub status: GpaStatus,
    /// Sum of squared distances to the running mean after each sweep.
    pub objective_history: Vec<f64>,
}

/// Generalized Procrustes alignment: repeatedly fit every shape to the
/// running mean by least squares, then recompute the mean, until the
/// mean stops moving.
///
/// Each sweep refits from the original shapes, so transforms never
/// accumulate rounding. Without scale the objective (sum of squared
/// residuals to the mean) cannot increase, because both half-steps are
/// exact minimizations; with scale enabled the mean is renormalized to
/// the first shape's size each sweep to stop the trivial shrink-to-zero
/// drift, and the best iterate seen is returned should that
/// renormalization ever unsettle the objective.
pub fn gpa(shapes: &[PointCloud], params: &GpaParams) -> Result<AlignedDataset, StatsError> {
    if shapes.len() < 2 {
        return Err(StatsError::TooFewShapes(shapes.len()));
    }
    let m = shapes[0].len();
    if m == 0 {
        return Err(StatsError::EmptyShapes);
    }
    for (index, shape) in shapes.iter().enumerate() {
        if shape.len() != m {
            return Err(StatsError::MismatchedPointCounts {
                index,
                got: shape.len(),
                expected: m,
            });
        }
    }

    // The first shape anchors the otherwise-free global orientation.
    let mut mean: Vec<Point3<f64>> = shapes[0].points().to_vec();
    let target_size = params.with_scale.then(|| centroid_size(&mean));

    let fit = if params.with_scale {
        fit_similarity_least_squares
    } else {
        fit_rigid_least_squares
    };

    let mut best: Option<(f64, Vec<PointCloud>, Vec<RigidTransform>, usize)> = None;
    let mut status = GpaStatus::MaxIterations;
    let mut iterations_used = 0;
    let mut objective_history = Vec::new();

    for sweep in 1..=params.max_iterations {
        let fitted: Vec<(RigidTransform, PointCloud)> = shapes
            .par_iter()
            .map(|shape| {
                let tf = fit(shape.points(), &mean)?;
                let aligned = apply_transform(shape, &tf);
                Ok::<_, GeometryError>((tf, aligned))
            })
            .collect::<Result<_, _>>()?;
        let (transforms, aligned): (Vec<_>, Vec<_>) = fitted.into_iter().unzip();

        let mut new_mean = mean_points(&aligned, m);
        if let Some(size) = target_size {
            renormalize_size(&mut new_mean, size);
        }

        let objective: f64 = aligned
            .iter()
            .map(|shape| {
                shape
                    .points()
                    .iter()
                    .zip(&new_mean)
                    .map(|(p, q)| (p - q).norm_squared())
                    .sum::<f64>()
            })
            .sum();
        objective_history.push(objective);
        iterations_used = sweep;

        let moved = mean
            .iter()
            .zip(&new_mean)
            .map(|(old, new)| (old - new).norm())
            .fold(0.0, f64::max);
        mean = new_mean;

        if best.as_ref().is_none_or(|(b, ..)| objective < *b) {
            best = Some((objective, aligned, transforms, sweep));
        }

        if moved < params.tolerance {
            status = GpaStatus::Converged;
            break;
        }
    }

    let (_, aligned, mut transforms, _) = best.expect("at least one sweep ran");

    // Pin the average centroid to the origin so datasets aligned from
    // different starting poses land in the same frame. Shapes are then
    // recomputed from the adjusted transforms, keeping the promise that
    // applying `alignment_transforms[i]` reproduces `shapes[i]` exactly.
    let mut grand = nalgebra::Vector3::zeros();
    for shape in &aligned {
        grand += shape.centroid()?.coords;
    }
    grand /= aligned.len() as f64;
    let aligned: Vec<PointCloud> = shapes
        .iter()
        .zip(&mut transforms)
        .map(|(shape, tf)| {
            tf.translation -= grand;
            apply_transform(shape, tf)
        })
        .collect();

    Ok(AlignedDataset {
        shapes: aligned,
        alignment_transforms: transforms,
        iterations_used,
        status,
        objective_history,
    })
}

/// Per-index arithmetic mean of the aligned shapes. Labels from the
/// first shape carry over (correspondence makes them dataset-wide);
/// normals do not, since averaging directions is not meaningful here.
pub fn mean_shape(dataset: &AlignedDataset) -> PointCloud {
    let m = dataset.shapes.first().map_or(0, PointCloud::len);
    let points = mean_points(&dataset.shapes, m);
    let labels = dataset.shapes.first().and_then(|s| s.labels().map(|ls| ls.to_vec()));
    PointCloud::from_parts_unchecked(points, None, labels)
}

fn mean_points(shapes: &[PointCloud], m: usize) -> Vec<Point3<f64>> {
    let mut sums = vec![nalgebra::Vector3::zeros(); m];
    for shape in shapes {
        for (sum, p) in sums.iter_mut().zip(shape.points()) {
            *sum += p.coords;
        }
    }
    let n = shapes.len() as f64;
    sums.into_iter().map(|s| Point3::from(s / n)).collect()
}

/// Root-mean-square distance of the points from their centroid.
fn centroid_size(points: &[Point3<f64>]) -> f64 {
    let centroid = points.iter().map(|p| p.coords).sum::<nalgebra::Vector3<f64>>()
        / points.len() as f64;
    (points.iter().map(|p| (p.coords - centroid).norm_squared()).sum::<f64>()
        / points.len() as f64)
        .sqrt()
}

fn renormalize_size(points: &mut [Point3<f64>], target: f64) {
    let current = centroid_size(points);
    if current <= 0.0 {
        return;
    }
    let centroid = points.iter().map(|p| p.coords).sum::<nalgebra::Vector3<f64>>()
        / points.len() as f64;
    let factor = target / current;
    for p in points.iter_mut() {
        p.coords = centroid + (p.coords - centroid) * factor;
    }
}

/// Both marginal means of the shapes-by-points deformation matrix
/// `D[i][m] = |shapes[i][m] - mean[m]|` (mm): how far each whole shape
/// sits from the mean, and how variable each point is across the
/// dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformationStats {
    pub per_shape_mean: Vec<f64>,
    pub per_point_mean: Vec<f64>,
}

pub fn deformation_stats(dataset: &AlignedDataset) -> DeformationStats {
    let mean = mean_shape(dataset);
    let m = mean.len();
    let mut per_shape_mean = Vec::with_capacity(dataset.shapes.len());
    let mut point_sums = vec![0.0; m];
    for shape in &dataset.shapes {
        let mut shape_sum = 0.0;
        for (j, (p, q)) in shape.points().iter().zip(mean.points()).enumerate() {
            let d = (p - q).norm();
            shape_sum += d;
            point_sums[j] += d;
        }
        per_shape_mean.push(shape_sum / m as f64);
    }
    let n = dataset.shapes.len() as f64;
    DeformationStats {
        per_shape_mean,
        per_point_mean: point_sums.into_iter().map(|s| s / n).collect(),
    }
}

/// Index of the shape farthest (on average) from the mean shape; ties
/// resolve to the lowest index.
pub fn most_different_shape(dataset: &AlignedDataset) -> usize {
    let per_shape = deformation_stats(dataset).per_shape_mean;
    let mut best = 0;
    for (i, &d) in per_shape.iter().enumerate().skip(1) {
        if d > per_shape[best] {
            best = i;
        }
    }
    best
}

/// One row per shape: `shape,mean_deformation`.
pub fn write_per_shape_deformation_csv(stats: &DeformationStats) -> Vec<u8> {
    let mut out = String::from("shape,mean_deformation\n");
    for (i, v) in stats.per_shape_mean.iter().enumerate() {
        out.push_str(&format!("{i},{}\n", fmt_f64(*v)));
    }
    out.into_bytes()
}

/// One row per point: `point,mean_deformation`.
pub fn write_per_point_deformation_csv(stats: &DeformationStats) -> Vec<u8> {
    let mut out = String::from("point,mean_deformation\n");
    for (j, v) in stats.per_point_mean.iter().enumerate() {
        out.push_str(&format!("{j},{}\n", fmt_f64(*v)));
    }
    out.into_bytes()
}

/// Mean shape with the per-point deformation magnitude attached as a
/// `deformation` vertex property, ready for heat-map rendering.
pub fn write_deformation_field_ply(dataset: &AlignedDataset) -> Result<Vec<u8>, StatsError> {
    let mean = mean_shape(dataset);
    let stats = deformation_stats(dataset);
    Ok(write_ply_scalar_field(&mean, "deformation", &stats.per_point_mean)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_angle_between;
    use crate::synth::bumpy_patch;
    use nalgebra::{Matrix3, UnitQuaternion, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rigid(rng: &mut ChaCha8Rng) -> RigidTransform {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let rotation = UnitQuaternion::from_scaled_axis(axis.normalize() * angle);
        let translation = Vector3::new(
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
        );
        RigidTransform::new(rotation.to_rotation_matrix().into_inner(), translation).unwrap()
    }

    fn jittered_dataset(shapes: usize, points: usize, seed: u64) -> Vec<PointCloud> {
        let base = bumpy_patch(points, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..shapes)
            .map(|_| {
                let jittered = PointCloud::new(
                    base.points()
                        .iter()
                        .map(|p| {
                            p + Vector3::new(
                                rng.random_range(-0.5..0.5),
                                rng.random_range(-0.5..0.5),
                                rng.random_range(-0.5..0.5),
                            )
                        })
                        .collect(),
                )
                .unwrap();
                apply_transform(&jittered, &random_rigid(&mut rng))
            })
            .collect()
    }

    #[test]
    fn rejects_degenerate_datasets() {
        let one = vec![bumpy_patch(10, 1)];
        assert_eq!(
            gpa(&one, &GpaParams::default()).unwrap_err().to_string(),
            "alignment needs at least 2 shapes, got 1"
        );
        let mismatched = vec![bumpy_patch(10, 1), bumpy_patch(12, 1)];
        assert_eq!(
            gpa(&mismatched, &GpaParams::default()).unwrap_err().to_string(),
            "shape 1 has 12 points but the dataset is corresponded with 10"
        );
        let empty = vec![PointCloud::new(vec![]).unwrap(), PointCloud::new(vec![]).unwrap()];
        assert_eq!(
            gpa(&empty, &GpaParams::default()).unwrap_err().to_string(),
            "cannot align shapes with no points"
        );
    }

    #[test]
    fn rigid_copies_of_one_shape_align_exactly() {
        let base = bumpy_patch(60, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shapes: Vec<PointCloud> = (0..5)
            .map(|_| apply_transform(&base, &random_rigid(&mut rng)))
            .collect();
        let aligned = gpa(&shapes, &GpaParams::default()).unwrap();
        assert_eq!(aligned.status, GpaStatus::Converged);

        let first = &aligned.shapes[0];
        for shape in &aligned.shapes[1..] {
            for (p, q) in shape.points().iter().zip(first.points()) {
                assert!((p - q).norm() < 1e-6, "copies differ after alignment");
            }
        }
        let stats = deformation_stats(&aligned);
        assert!(stats.per_shape_mean.iter().all(|&d| d < 1e-6));

        // The mean is the shape itself, up to the rigid motion that
        // centers it.
        let mean = mean_shape(&aligned);
        let back = fit_rigid_least_squares(mean.points(), base.points()).unwrap();
        for (p, q) in mean.points().iter().zip(base.points()) {
            assert!((back.apply_point(p) - q).norm() < 1e-6);
        }
    }

    #[test]
    fn already_aligned_dataset_gets_identity_transforms() {
        let mut base = bumpy_patch(40, 5);
        let centroid = base.centroid().unwrap();
        base = PointCloud::new(base.points().iter().map(|p| p - centroid.coords).collect())
            .unwrap();
        let shapes = vec![base.clone(), base.clone(), base];
        let aligned = gpa(&shapes, &GpaParams::default()).unwrap();
        assert_eq!(aligned.status, GpaStatus::Converged);
        for tf in &aligned.alignment_transforms {
            assert!(rotation_angle_between(&tf.rotation, &Matrix3::identity()) < 1e-9);
            assert!(tf.translation.norm() < 1e-9);
            assert!((tf.scale - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn aligned_centroids_average_to_the_origin() {
        let shapes = jittered_dataset(6, 50, 9);
        let aligned = gpa(&shapes, &GpaParams::default()).unwrap();
        let mut grand = Vector3::zeros();
        for shape in &aligned.shapes {
            grand += shape.centroid().unwrap().coords;
        }
        grand /= aligned.shapes.len() as f64;
        assert!(grand.norm() < 1e-9, "grand centroid {grand:?}");
        // And the reported transforms reproduce the aligned shapes.
        for (shape, (input, tf)) in aligned
            .shapes
            .iter()
            .zip(shapes.iter().zip(&aligned.alignment_transforms))
        {
            for (p, q) in apply_transform(input, tf).points().iter().zip(shape.points()) {
                assert_eq!(p, q);
            }
        }
    }

    #[test]
    fn objective_never_increases_without_scale() {
        let shapes = jittered_dataset(8, 40, 21);
        let aligned = gpa(&shapes, &GpaParams::default()).unwrap();
        assert!(aligned.iterations_used >= 2, "trivial run cannot test monotonicity");
        for pair in aligned.objective_history.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-9 * pair[0].abs().max(1.0),
                "objective rose: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn gpa_runs_are_deterministic() {
        let shapes = jittered_dataset(5, 30, 33);
        let a = gpa(&shapes, &GpaParams::default()).unwrap();
        let b = gpa(&shapes, &GpaParams::default()).unwrap();
        assert_eq!(a.iterations_used, b.iterations_used);
        assert_eq!(a.objective_history, b.objective_history);
        for (x, y) in a.shapes.iter().zip(&b.shapes) {
            assert_eq!(x.points(), y.points());
        }
    }

    #[test]
    fn scaled_copies_collapse_only_when_scale_is_fitted() {
        let base = bumpy_patch(50, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let shapes: Vec<PointCloud> = [1.0, 1.4, 0.7]
            .iter()
            .map(|&s| {
                let scaled =
                    PointCloud::new(base.points().iter().map(|p| Point3::from(p.coords * s)).collect())
                        .unwrap();
                apply_transform(&scaled, &random_rigid(&mut rng))
            })
            .collect();

        let with_scale = gpa(&shapes, &GpaParams { with_scale: true, ..GpaParams::default() })
            .unwrap();
        let stats = deformation_stats(&with_scale);
        assert!(
            stats.per_shape_mean.iter().all(|&d| d < 1e-6),
            "similarity copies should align exactly: {:?}",
            stats.per_shape_mean
        );

        let rigid_only = gpa(&shapes, &GpaParams::default()).unwrap();
        let stats = deformation_stats(&rigid_only);
        assert!(
            stats.per_shape_mean.iter().any(|&d| d > 1.0),
            "size differences must survive rigid-only alignment: {:?}",
            stats.per_shape_mean
        );
    }

    #[test]
    fn mean_shape_matches_brute_force_average() {
        let shapes = jittered_dataset(3, 20, 14);
        let dataset = AlignedDataset {
            shapes: shapes.clone(),
            alignment_transforms: vec![],
            iterations_used: 0,
            status: GpaStatus::Converged,
            objective_history: vec![],
        };
        let mean = mean_shape(&dataset);
        for j in 0..20 {
            let brute = (shapes[0].points()[j].coords
                + shapes[1].points()[j].coords
                + shapes[2].points()[j].coords)
                / 3.0;
            assert!((mean.points()[j].coords - brute).norm() < 1e-12);
        }
    }

    fn offset_dataset() -> AlignedDataset {
        // Integer grid coordinates keep the averaging arithmetic exact,
        // so the expected statistics are exact too.
        let base = PointCloud::new(
            (0..25).map(|i| Point3::new((i % 5) as f64, (i / 5) as f64, 0.0)).collect(),
        )
        .unwrap();
        let shift = |d: f64| {
            PointCloud::new(base.points().iter().map(|p| p + Vector3::new(d, 0.0, 0.0)).collect())
                .unwrap()
        };
        AlignedDataset {
            shapes: vec![shift(1.0), shift(-1.0), base],
            alignment_transforms: vec![],
            iterations_used: 0,
            status: GpaStatus::Converged,
            objective_history: vec![],
        }
    }

    #[test]
    fn deformation_stats_read_off_constructed_offsets() {
        let dataset = offset_dataset();
        let stats = deformation_stats(&dataset);
        // Mean is the base shape, so the two offset shapes sit exactly
        // 1 mm away at every point and the base at 0.
        assert_eq!(stats.per_shape_mean, vec![1.0, 1.0, 0.0]);
        assert!(stats.per_point_mean.iter().all(|&d| (d - 2.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn deformation_stats_match_matrix_marginal_oracle() {
        let shapes = jittered_dataset(4, 15, 27);
        let dataset = AlignedDataset {
            shapes,
            alignment_transforms: vec![],
            iterations_used: 0,
            status: GpaStatus::Converged,
            objective_history: vec![],
        };
        let stats = deformation_stats(&dataset);
        let mean = mean_shape(&dataset);
        let mut matrix = vec![vec![0.0; 15]; 4];
        for (i, shape) in dataset.shapes.iter().enumerate() {
            for j in 0..15 {
                matrix[i][j] = (shape.points()[j] - mean.points()[j]).norm();
            }
        }
        for i in 0..4 {
            let row: f64 = matrix[i].iter().sum::<f64>() / 15.0;
            assert!((stats.per_shape_mean[i] - row).abs() < 1e-12);
        }
        for j in 0..15 {
            let col: f64 = (0..4).map(|i| matrix[i][j]).sum::<f64>() / 4.0;
            assert!((stats.per_point_mean[j] - col).abs() < 1e-12);
        }
        // Both marginals average the same matrix.
        let grand_rows: f64 =
            stats.per_shape_mean.iter().sum::<f64>() / stats.per_shape_mean.len() as f64;
        let grand_cols: f64 =
            stats.per_point_mean.iter().sum::<f64>() / stats.per_point_mean.len() as f64;
        assert!((grand_rows - grand_cols).abs() < 1e-9);
    }

    #[test]
    fn most_different_shape_picks_the_constructed_outlier() {
        let base = bumpy_patch(30, 16);
        let mut shapes = vec![base.clone(); 4];
        shapes[2] = PointCloud::new(
            base.points().iter().map(|p| p + Vector3::new(0.0, 5.0, 0.0)).collect(),
        )
        .unwrap();
        let dataset = AlignedDataset {
            shapes,
            alignment_transforms: vec![],
            iterations_used: 0,
            status: GpaStatus::Converged,
            objective_history: vec![],
        };
        assert_eq!(most_different_shape(&dataset), 2);

        let all_same = AlignedDataset {
            shapes: vec![base.clone(); 3],
            alignment_transforms: vec![],
            iterations_used: 0,
            status: GpaStatus::Converged,
            objective_history: vec![],
        };
        assert_eq!(most_different_shape(&all_same), 0);
    }

    #[test]
    fn most_different_shape_matches_argmax_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..20 {
            let shapes = jittered_dataset(5, 12, rng.random());
            let dataset = AlignedDataset {
                shapes,
                alignment_transforms: vec![],
                iterations_used: 0,
                status: GpaStatus::Converged,
                objective_history: vec![],
            };
            let stats = deformation_stats(&dataset);
            let mut best = 0;
            for (i, &d) in stats.per_shape_mean.iter().enumerate() {
                if d > stats.per_shape_mean[best] {
                    best = i;
                }
            }
            assert_eq!(most_different_shape(&dataset), best);
        }
    }

    #[test]
    fn per_point_statistics_ignore_dataset_pre_rotation() {
        let shapes = jittered_dataset(6, 35, 55);
        let aligned = gpa(&shapes, &GpaParams::default()).unwrap();
        let stats = deformation_stats(&aligned);

        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let motion = random_rigid(&mut rng);
        let rotated: Vec<PointCloud> =
            shapes.iter().map(|s| apply_transform(s, &motion)).collect();
        let aligned_rotated = gpa(&rotated, &GpaParams::default()).unwrap();
        let stats_rotated = deformation_stats(&aligned_rotated);

        for (a, b) in stats.per_point_mean.iter().zip(&stats_rotated.per_point_mean) {
            assert!((a - b).abs() < 1e-6, "per-point deformation changed: {a} vs {b}");
        }
        for (a, b) in stats.per_shape_mean.iter().zip(&stats_rotated.per_shape_mean) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn csv_and_ply_exports_have_expected_layout() {
        let dataset = offset_dataset();
        let stats = deformation_stats(&dataset);
        let per_shape = String::from_utf8(write_per_shape_deformation_csv(&stats)).unwrap();
        assert_eq!(per_shape, "shape,mean_deformation\n0,1\n1,1\n2,0\n");
        let per_point = String::from_utf8(write_per_point_deformation_csv(&stats)).unwrap();
        let mut lines = per_point.lines();
        assert_eq!(lines.next(), Some("point,mean_deformation"));
        assert_eq!(per_point.lines().count(), 26);

        let ply = String::from_utf8(write_deformation_field_ply(&dataset).unwrap()).unwrap();
        assert!(ply.starts_with("ply\nformat ascii 1.0\n"));
        assert!(ply.contains("property double deformation\n"));
        assert!(ply.contains("element vertex 25\n"));
    }
}
