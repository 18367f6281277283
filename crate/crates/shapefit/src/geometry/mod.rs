//! Core geometric types and operations shared by every stage: validated
//! point clouds, rigid transforms, correspondence maps, nearest-neighbor
//! search, normal estimation, and least-squares rigid fitting.

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

mod fit;
mod kdtree;
mod normals;

pub use fit::{fit_rigid_least_squares, fit_similarity_least_squares};
pub(crate) use fit::fit_rigid_weighted;
pub use kdtree::KdTree;
pub use normals::estimate_normals;
pub(crate) use normals::ensure_normals;

/// Tolerance on `|norm - 1|` for stored unit normals.
pub const NORMAL_UNIT_TOL: f64 = 1e-6;
/// Tolerance on orthonormality and determinant of stored rotations.
pub const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("empty point set")]
    EmptyPointSet,
    #[error("non-finite coordinate at point {index}")]
    NonFiniteCoordinate { index: usize },
    #[error("normal count {normals} does not match point count {points}")]
    NormalCountMismatch { normals: usize, points: usize },
    #[error("normal at index {index} has norm {norm} (expected 1 within {NORMAL_UNIT_TOL:e})")]
    NonUnitNormal { index: usize, norm: f64 },
    #[error("label count {labels} does not match point count {points}")]
    LabelCountMismatch { labels: usize, points: usize },
    #[error("rotation is not orthonormal with determinant +1 (deviation {deviation:e})")]
    InvalidRotation { deviation: f64 },
    #[error("scale must be positive and finite, got {scale}")]
    InvalidScale { scale: f64 },
    #[error("non-finite translation")]
    InvalidTranslation,
    #[error("degenerate correspondence set")]
    DegenerateCorrespondences,
    #[error("correspondence lengths differ: {source_len} source vs {target_len} target")]
    CorrespondenceLengthMismatch { source_len: usize, target_len: usize },
    #[error("target index {index} out of bounds for {targets} target points")]
    TargetIndexOutOfBounds { index: usize, targets: usize },
    #[error("outlier target {index} is also an assigned correspondence")]
    OutlierAssignedConflict { index: usize },
    #[error("threshold must be non-negative and finite, got {value}")]
    InvalidThreshold { value: f64 },
    #[error("k must be at least 3 for normal estimation, got {k}")]
    InvalidNeighborhood { k: usize },
    #[error("cloud has {points} points but k = {k} needs at least k + 1")]
    NeighborhoodTooLarge { points: usize, k: usize },
}

/// An unordered set of 3D points, optionally with per-point unit normals
/// and free-form labels.
///
/// Invariants enforced at construction: every coordinate is finite, the
/// normal and label sequences (when present) have the same length as the
/// points, and every stored normal is unit length within
/// [`NORMAL_UNIT_TOL`]. Normals are per-point optional so that estimation
/// can leave degenerate neighborhoods unset without inventing a direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<Point3<f64>>,
    normals: Option<Vec<Option<Vector3<f64>>>>,
    labels: Option<Vec<String>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Result<Self, GeometryError> {
        for (index, p) in points.iter().enumerate() {
            if !p.coords.iter().all(|c| c.is_finite()) {
                return Err(GeometryError::NonFiniteCoordinate { index });
            }
        }
        Ok(Self { points, normals: None, labels: None })
    }

    /// Attaches one unit normal per point.
    pub fn with_normals(self, normals: Vec<Vector3<f64>>) -> Result<Self, GeometryError> {
        self.with_optional_normals(normals.into_iter().map(Some).collect())
    }

    /// Attaches normals where `None` marks points without a reliable one.
    pub fn with_optional_normals(
        mut self,
        normals: Vec<Option<Vector3<f64>>>,
    ) -> Result<Self, GeometryError> {
        if normals.len() != self.points.len() {
            return Err(GeometryError::NormalCountMismatch {
                normals: normals.len(),
                points: self.points.len(),
            });
        }
        for (index, n) in normals.iter().enumerate() {
            if let Some(n) = n {
                let norm = n.norm();
                if !norm.is_finite() || (norm - 1.0).abs() > NORMAL_UNIT_TOL {
                    return Err(GeometryError::NonUnitNormal { index, norm });
                }
            }
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self, GeometryError> {
        if labels.len() != self.points.len() {
            return Err(GeometryError::LabelCountMismatch {
                labels: labels.len(),
                points: self.points.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Internal constructor for values already known to satisfy the
    /// invariants (e.g. outputs of validated transforms).
    pub(crate) fn from_parts_unchecked(
        points: Vec<Point3<f64>>,
        normals: Option<Vec<Option<Vector3<f64>>>>,
        labels: Option<Vec<String>>,
    ) -> Self {
        Self { points, normals, labels }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Option<Vector3<f64>>]> {
        self.normals.as_deref()
    }

    pub fn normal(&self, index: usize) -> Option<Vector3<f64>> {
        self.normals.as_ref().and_then(|ns| ns.get(index).copied().flatten())
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    /// True when every point carries a normal.
    pub fn has_complete_normals(&self) -> bool {
        self.normals.as_ref().is_some_and(|ns| ns.iter().all(Option::is_some))
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn centroid(&self) -> Result<Point3<f64>, GeometryError> {
        if self.points.is_empty() {
            return Err(GeometryError::EmptyPointSet);
        }
        let sum: Vector3<f64> = self.points.iter().map(|p| p.coords).sum();
        Ok(Point3::from(sum / self.points.len() as f64))
    }

    /// Diagonal length of the axis-aligned bounding box.
    pub fn diameter(&self) -> Result<f64, GeometryError> {
        let b = bounding_box(self)?;
        Ok((b.max - b.min).norm())
    }

    /// Keeps the points at `indices` (in the given order), carrying normals
    /// and labels along.
    pub fn select(&self, indices: &[usize]) -> Self {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let normals = self
            .normals
            .as_ref()
            .map(|ns| indices.iter().map(|&i| ns[i]).collect());
        let labels = self
            .labels
            .as_ref()
            .map(|ls| indices.iter().map(|&i| ls[i].clone()).collect());
        Self { points, normals, labels }
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn diagonal(&self) -> Vector3<f64> {
        self.max - self.min
    }
}

/// Smallest axis-aligned box containing the cloud.
pub fn bounding_box(cloud: &PointCloud) -> Result<Aabb, GeometryError> {
    let first = cloud.points().first().ok_or(GeometryError::EmptyPointSet)?;
    let mut min = *first;
    let mut max = *first;
    for p in cloud.points() {
        for a in 0..3 {
            min[a] = min[a].min(p[a]);
            max[a] = max[a].max(p[a]);
        }
    }
    Ok(Aabb { min, max })
}

/// A similarity transform `p -> scale * R * p + t` with a proper rotation.
///
/// `scale` is 1 for strictly rigid motion. Validation requires `R^T R = I`
/// and `det R = 1` within [`ROTATION_TOL`] (max-norm), positive finite
/// scale, and finite translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros(), scale: 1.0 }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        Self::with_scale(rotation, translation, 1.0)
    }

    pub fn with_scale(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        scale: f64,
    ) -> Result<Self, GeometryError> {
        let tf = Self { rotation, translation, scale };
        tf.validate()?;
        Ok(tf)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let gram = self.rotation.transpose() * self.rotation;
        let ortho_dev = (gram - Matrix3::identity()).abs().max();
        let det_dev = (self.rotation.determinant() - 1.0).abs();
        let deviation = ortho_dev.max(det_dev);
        if !deviation.is_finite() || deviation > ROTATION_TOL {
            return Err(GeometryError::InvalidRotation { deviation });
        }
        if !self.scale.is_finite() || self.scale <= 0.0 {
            return Err(GeometryError::InvalidScale { scale: self.scale });
        }
        if !self.translation.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::InvalidTranslation);
        }
        Ok(())
    }

    pub fn apply_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.scale * (self.rotation * p.coords) + self.translation)
    }

    /// Transforms a direction: rotation only, no scale or translation.
    pub fn apply_normal(&self, n: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * n
    }

    /// `self.compose(&inner)` applies `inner` first, then `self`.
    pub fn compose(&self, inner: &Self) -> Self {
        Self {
            rotation: self.rotation * inner.rotation,
            translation: self.scale * (self.rotation * inner.translation) + self.translation,
            scale: self.scale * inner.scale,
        }
    }

    pub fn inverse(&self) -> Self {
        let rotation = self.rotation.transpose();
        Self {
            rotation,
            translation: -(rotation * self.translation) / self.scale,
            scale: 1.0 / self.scale,
        }
    }
}

/// Geodesic angle in radians between two rotation matrices.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let cos = ((a.transpose() * b).trace() - 1.0) / 2.0;
    cos.clamp(-1.0, 1.0).acos()
}

/// Template-to-target assignment produced by a registration stage.
///
/// `assignments[m]` is the target index matched to template point `m`, or
/// `None` when the point is considered missing from the target. Many
/// template points may share one target. `outlier_targets` are target
/// points the stage rejected; they are always disjoint from the assigned
/// set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceMap {
    assignments: Vec<Option<usize>>,
    outlier_targets: BTreeSet<usize>,
    threshold_used: f64,
}

impl CorrespondenceMap {
    pub fn new(
        assignments: Vec<Option<usize>>,
        outlier_targets: BTreeSet<usize>,
        threshold_used: f64,
        target_len: usize,
    ) -> Result<Self, GeometryError> {
        if !(threshold_used >= 0.0) || !threshold_used.is_finite() {
            return Err(GeometryError::InvalidThreshold { value: threshold_used });
        }
        let mut assigned = BTreeSet::new();
        for target in assignments.iter().flatten() {
            if *target >= target_len {
                return Err(GeometryError::TargetIndexOutOfBounds {
                    index: *target,
                    targets: target_len,
                });
            }
            assigned.insert(*target);
        }
        for &t in &outlier_targets {
            if t >= target_len {
                return Err(GeometryError::TargetIndexOutOfBounds { index: t, targets: target_len });
            }
            if assigned.contains(&t) {
                return Err(GeometryError::OutlierAssignedConflict { index: t });
            }
        }
        Ok(Self { assignments, outlier_targets, threshold_used })
    }

    pub fn assignments(&self) -> &[Option<usize>] {
        &self.assignments
    }

    pub fn assignment(&self, template_index: usize) -> Option<usize> {
        self.assignments.get(template_index).copied().flatten()
    }

    pub fn outlier_targets(&self) -> &BTreeSet<usize> {
        &self.outlier_targets
    }

    pub fn threshold_used(&self) -> f64 {
        self.threshold_used
    }

    pub fn template_len(&self) -> usize {
        self.assignments.len()
    }

    /// Target indices that received at least one assignment.
    pub fn assigned_targets(&self) -> BTreeSet<usize> {
        self.assignments.iter().flatten().copied().collect()
    }

    /// Template indices with no assignment.
    pub fn missing_template_indices(&self) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter_map(|(m, a)| a.is_none().then_some(m))
            .collect()
    }

    pub fn assigned_count(&self) -> usize {
        self.assignments.iter().filter(|a| a.is_some()).count()
    }
}

/// Index of and distance to the nearest point of `cloud`, scanning
/// exhaustively. Exact ties resolve to the lowest index.
pub fn nearest_neighbor(
    query: &Point3<f64>,
    cloud: &PointCloud,
) -> Result<(usize, f64), GeometryError> {
    let points = cloud.points();
    if points.is_empty() {
        return Err(GeometryError::EmptyPointSet);
    }
    let mut best = (0usize, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d2 = (p - query).norm_squared();
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    Ok((best.0, best.1.sqrt()))
}

/// Applies `tf` to every point and rotates normals; labels carry over.
pub fn apply_transform(cloud: &PointCloud, tf: &RigidTransform) -> PointCloud {
    let points = cloud.points().iter().map(|p| tf.apply_point(p)).collect();
    let normals = cloud.normals().map(|ns| {
        ns.iter()
            .map(|n| n.map(|n| tf.apply_normal(&n)))
            .collect()
    });
    PointCloud::from_parts_unchecked(points, normals, cloud.labels().map(<[String]>::to_vec))
}

/// Median spacing between each point and its nearest distinct neighbor.
///
/// Used to derive scale-adaptive distance thresholds. Empty or single-point
/// clouds are errors.
pub fn median_neighbor_spacing(cloud: &PointCloud) -> Result<f64, GeometryError> {
    if cloud.len() < 2 {
        return Err(GeometryError::EmptyPointSet);
    }
    let tree = KdTree::build(cloud.points());
    let mut spacings: Vec<f64> = (0..cloud.len())
        .map(|i| {
            // Two nearest: the point itself at distance 0, then its neighbor.
            let nearest = tree.k_nearest(&cloud.points()[i], 2);
            let (_, d) = nearest[nearest.len() - 1];
            d
        })
        .collect();
    spacings.sort_by(|a, b| a.partial_cmp(b).expect("finite spacing"));
    let n = spacings.len();
    Ok(if n % 2 == 1 { spacings[n / 2] } else { (spacings[n / 2 - 1] + spacings[n / 2]) / 2.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cube_corners() -> Vec<Point3<f64>> {
        let mut pts = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    pts.push(Point3::new(x, y, z));
                }
            }
        }
        pts
    }

    #[test]
    fn rejects_non_finite_coordinates() {
        let err = PointCloud::new(vec![Point3::new(0.0, f64::NAN, 0.0)]).unwrap_err();
        assert!(matches!(err, GeometryError::NonFiniteCoordinate { index: 0 }));
    }

    #[test]
    fn rejects_non_unit_normals() {
        let cloud = PointCloud::new(vec![Point3::origin()]).unwrap();
        let err = cloud.with_normals(vec![Vector3::new(0.0, 0.0, 2.0)]).unwrap_err();
        assert!(matches!(err, GeometryError::NonUnitNormal { index: 0, .. }));
    }

    #[test]
    fn rejects_normal_count_mismatch() {
        let cloud = PointCloud::new(vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)]).unwrap();
        let err = cloud.with_normals(vec![Vector3::z()]).unwrap_err();
        assert!(matches!(err, GeometryError::NormalCountMismatch { normals: 1, points: 2 }));
    }

    #[test]
    fn nearest_neighbor_breaks_ties_by_lowest_index() {
        let cloud = PointCloud::new(vec![
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(-1.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
        ])
        .unwrap();
        let (idx, dist) = nearest_neighbor(&Point3::origin(), &cloud).unwrap();
        assert_eq!(idx, 0);
        assert_relative_eq!(dist, 1.0);
    }

    #[test]
    fn nearest_neighbor_rejects_empty_cloud() {
        let cloud = PointCloud::new(vec![]).unwrap();
        let err = nearest_neighbor(&Point3::origin(), &cloud).unwrap_err();
        assert_eq!(err.to_string(), "empty point set");
    }

    #[test]
    fn bounding_box_of_unit_cube() {
        let cloud = PointCloud::new(cube_corners()).unwrap();
        let b = bounding_box(&cloud).unwrap();
        assert_eq!(b.min, Point3::new(0.0, 0.0, 0.0));
        assert_eq!(b.max, Point3::new(1.0, 1.0, 1.0));
        assert!(cloud.points().iter().all(|p| b.contains(p)));
    }

    #[test]
    fn transform_validation_catches_reflection() {
        let mut reflection = Matrix3::identity();
        reflection[(2, 2)] = -1.0;
        let err = RigidTransform::new(reflection, Vector3::zeros()).unwrap_err();
        assert!(matches!(err, GeometryError::InvalidRotation { .. }));
    }

    #[test]
    fn transform_validation_catches_bad_scale() {
        let err = RigidTransform::with_scale(Matrix3::identity(), Vector3::zeros(), 0.0);
        assert!(matches!(err, Err(GeometryError::InvalidScale { .. })));
    }

    #[test]
    fn compose_then_apply_matches_sequential_application() {
        let a = RigidTransform::with_scale(
            nalgebra::Rotation3::from_euler_angles(0.1, -0.4, 0.9).into_inner(),
            Vector3::new(1.0, -2.0, 0.5),
            1.3,
        )
        .unwrap();
        let b = RigidTransform::with_scale(
            nalgebra::Rotation3::from_euler_angles(-0.7, 0.2, 0.3).into_inner(),
            Vector3::new(-0.3, 0.8, 2.0),
            0.7,
        )
        .unwrap();
        let p = Point3::new(0.3, -1.2, 2.5);
        let composed = a.compose(&b).apply_point(&p);
        let sequential = a.apply_point(&b.apply_point(&p));
        assert_relative_eq!(composed, sequential, epsilon = 1e-12);
    }

    #[test]
    fn inverse_undoes_transform() {
        let tf = RigidTransform::with_scale(
            nalgebra::Rotation3::from_euler_angles(0.3, 0.1, -0.2).into_inner(),
            Vector3::new(4.0, -1.0, 2.0),
            2.0,
        )
        .unwrap();
        let p = Point3::new(1.0, 2.0, 3.0);
        let roundtrip = tf.inverse().apply_point(&tf.apply_point(&p));
        assert_relative_eq!(roundtrip, p, epsilon = 1e-12);
    }

    #[test]
    fn correspondence_map_rejects_out_of_bounds_target() {
        let err = CorrespondenceMap::new(vec![Some(5)], BTreeSet::new(), 1.0, 5).unwrap_err();
        assert!(matches!(err, GeometryError::TargetIndexOutOfBounds { index: 5, targets: 5 }));
    }

    #[test]
    fn correspondence_map_rejects_assigned_outlier() {
        let outliers = BTreeSet::from([1usize]);
        let err = CorrespondenceMap::new(vec![Some(1)], outliers, 1.0, 3).unwrap_err();
        assert!(matches!(err, GeometryError::OutlierAssignedConflict { index: 1 }));
    }

    #[test]
    fn select_carries_attributes() {
        let cloud = PointCloud::new(vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(2.0, 0.0, 0.0),
        ])
        .unwrap()
        .with_normals(vec![Vector3::x(), Vector3::y(), Vector3::z()])
        .unwrap()
        .with_labels(vec!["a".into(), "b".into(), "c".into()])
        .unwrap();
        let picked = cloud.select(&[2, 0]);
        assert_eq!(picked.points()[0], Point3::new(2.0, 0.0, 0.0));
        assert_eq!(picked.normal(0), Some(Vector3::z()));
        assert_eq!(picked.labels().unwrap(), ["c".to_string(), "a".to_string()]);
    }

    #[test]
    fn median_spacing_of_unit_grid_is_one() {
        let mut pts = Vec::new();
        for x in 0..4 {
            for y in 0..4 {
                pts.push(Point3::new(x as f64, y as f64, 0.0));
            }
        }
        let cloud = PointCloud::new(pts).unwrap();
        assert_relative_eq!(median_neighbor_spacing(&cloud).unwrap(), 1.0);
    }
}
