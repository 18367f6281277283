//! Controlled degradation of clean point clouds.
//!
//! Starting from a clean, corresponded shape, this module removes points
//! (uniformly or inside a region), injects outliers (over the shape's
//! bounding box or inside a region), and adds Gaussian noise, while
//! recording exactly what happened so that downstream evaluation can
//! recover the true correspondences.
//!
//! Every operation is a pure function of its inputs and a 64-bit seed:
//! the same call produces bit-identical output, so corrupted datasets are
//! reproducible from their configuration alone and independent samples
//! can be generated in parallel with distinct seeds.

use std::collections::BTreeSet;

use nalgebra::{Point3, Vector3};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, PointCloud};

#[derive(Debug, Error)]
pub enum CorruptionError {
    #[error("{name} must be in [0, 1], got {value}")]
    RatioOutOfRange { name: &'static str, value: f64 },
    #[error("outlier ratio must be non-negative and finite, got {0}")]
    InvalidOutlierRatio(f64),
    #[error("noise sigma must be non-negative and finite, got {0}")]
    InvalidNoiseSigma(f64),
    #[error("region selects no points")]
    EmptyRegion,
    #[error("{stage} ratio is {ratio} but no region is configured")]
    MissingRegion { stage: &'static str, ratio: f64 },
    #[error("region index {index} out of bounds for cloud with {points} points")]
    RegionIndexOutOfBounds { index: usize, points: usize },
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A subset of a shape, either by explicit point indices or by a
/// geometric primitive. Index sets are the precise option for a known
/// template; primitives work on any cloud without per-shape data files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegionSpec {
    IndexSet { indices: BTreeSet<usize> },
    Sphere { center: Point3<f64>, radius: f64 },
    Box { min: Point3<f64>, max: Point3<f64> },
}

impl RegionSpec {
    pub fn validate(&self) -> Result<(), CorruptionError> {
        match self {
            RegionSpec::IndexSet { .. } => Ok(()),
            RegionSpec::Sphere { center, radius } => {
                if !center.coords.iter().all(|c| c.is_finite()) {
                    return Err(CorruptionError::InvalidRegion(
                        "sphere center must be finite".to_string(),
                    ));
                }
                if !radius.is_finite() || *radius <= 0.0 {
                    return Err(CorruptionError::InvalidRegion(format!(
                        "sphere radius must be positive, got {radius}"
                    )));
                }
                Ok(())
            }
            RegionSpec::Box { min, max } => {
                let finite = min.coords.iter().chain(max.coords.iter()).all(|c| c.is_finite());
                if !finite {
                    return Err(CorruptionError::InvalidRegion(
                        "box corners must be finite".to_string(),
                    ));
                }
                if (0..3).any(|a| min[a] > max[a]) {
                    return Err(CorruptionError::InvalidRegion(format!(
                        "box min {:?} exceeds max {:?}",
                        min, max
                    )));
                }
                Ok(())
            }
        }
    }

    /// Indices of `cloud` points inside the region, ascending.
    pub fn select(&self, cloud: &PointCloud) -> Result<Vec<usize>, CorruptionError> {
        self.validate()?;
        let points = cloud.points();
        match self {
            RegionSpec::IndexSet { indices } => {
                for &index in indices {
                    if index >= points.len() {
                        return Err(CorruptionError::RegionIndexOutOfBounds {
                            index,
                            points: points.len(),
                        });
                    }
                }
                Ok(indices.iter().copied().collect())
            }
            RegionSpec::Sphere { center, radius } => Ok(points
                .iter()
                .enumerate()
                .filter(|(_, p)| (*p - center).norm() <= *radius)
                .map(|(i, _)| i)
                .collect()),
            RegionSpec::Box { min, max } => Ok(points
                .iter()
                .enumerate()
                .filter(|(_, p)| (0..3).all(|a| p[a] >= min[a] && p[a] <= max[a]))
                .map(|(i, _)| i)
                .collect()),
        }
    }

    /// Draws `count` points uniformly over the region's volume. Index-set
    /// regions have no volume of their own, so they sample over the
    /// bounding box of the selected points.
    fn sample_volume(
        &self,
        cloud: &PointCloud,
        count: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Point3<f64>>, CorruptionError> {
        match self {
            RegionSpec::Sphere { center, radius } => Ok((0..count)
                .map(|_| {
                    let mut direction = Vector3::zeros();
                    loop {
                        for a in 0..3 {
                            direction[a] = rand_distr::StandardNormal.sample(rng);
                        }
                        if direction.norm() > 0.0 {
                            break;
                        }
                    }
                    let u: f64 = rng.random();
                    center + direction.normalize() * (*radius * u.cbrt())
                })
                .collect()),
            RegionSpec::Box { min, max } => Ok(sample_in_box(*min, *max, count, rng)),
            RegionSpec::IndexSet { .. } => {
                let selected = self.select(cloud)?;
                if selected.is_empty() {
                    return Err(CorruptionError::EmptyRegion);
                }
                let points = cloud.points();
                let mut lo = points[selected[0]];
                let mut hi = points[selected[0]];
                for &i in &selected[1..] {
                    for a in 0..3 {
                        lo[a] = lo[a].min(points[i][a]);
                        hi[a] = hi[a].max(points[i][a]);
                    }
                }
                Ok(sample_in_box(lo, hi, count, rng))
            }
        }
    }
}

fn sample_in_box(
    min: Point3<f64>,
    max: Point3<f64>,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Point3<f64>> {
    (0..count)
        .map(|_| {
            Point3::new(
                rng.random_range(min.x..=max.x),
                rng.random_range(min.y..=max.y),
                rng.random_range(min.z..=max.z),
            )
        })
        .collect()
}

/// Full description of one simulated degradation.
///
/// Ratios follow the usual reporting convention: missing-data and
/// outlier counts are fractions of the clean shape's point count, and
/// structured (region-localized) counts are fractions of the points the
/// region selects on the clean shape.
///
/// Fields left out of a parsed config come from [`Self::none`], so a
/// partial `[corruption]` section enables exactly the defects it names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default = "CorruptionConfig::none")]
pub struct CorruptionConfig {
    pub uniform_missing_ratio: f64,
    pub structured_missing_ratio: f64,
    pub uniform_outlier_ratio: f64,
    pub structured_outlier_ratio: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub missing_region: Option<RegionSpec>,
    pub outlier_region: Option<RegionSpec>,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            uniform_missing_ratio: 0.2,
            structured_missing_ratio: 0.8,
            uniform_outlier_ratio: 0.1,
            structured_outlier_ratio: 0.4,
            noise_sigma: 0.0,
            seed: 0,
            missing_region: None,
            outlier_region: None,
        }
    }
}

impl CorruptionConfig {
    /// A configuration that leaves the cloud untouched.
    pub fn none() -> Self {
        Self {
            uniform_missing_ratio: 0.0,
            structured_missing_ratio: 0.0,
            uniform_outlier_ratio: 0.0,
            structured_outlier_ratio: 0.0,
            noise_sigma: 0.0,
            seed: 0,
            missing_region: None,
            outlier_region: None,
        }
    }

    pub fn validate(&self) -> Result<(), CorruptionError> {
        check_ratio("uniform missing ratio", self.uniform_missing_ratio)?;
        check_ratio("structured missing ratio", self.structured_missing_ratio)?;
        check_ratio("uniform outlier ratio", self.uniform_outlier_ratio)?;
        check_ratio("structured outlier ratio", self.structured_outlier_ratio)?;
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(CorruptionError::InvalidNoiseSigma(self.noise_sigma));
        }
        if self.structured_missing_ratio > 0.0 && self.missing_region.is_none() {
            return Err(CorruptionError::MissingRegion {
                stage: "structured missing",
                ratio: self.structured_missing_ratio,
            });
        }
        if self.structured_outlier_ratio > 0.0 && self.outlier_region.is_none() {
            return Err(CorruptionError::MissingRegion {
                stage: "structured outlier",
                ratio: self.structured_outlier_ratio,
            });
        }
        if let Some(region) = &self.missing_region {
            region.validate()?;
        }
        if let Some(region) = &self.outlier_region {
            region.validate()?;
        }
        Ok(())
    }
}

fn check_ratio(name: &'static str, value: f64) -> Result<(), CorruptionError> {
    if !value.is_finite() || !(0.0..=1.0).contains(&value) {
        return Err(CorruptionError::RatioOutOfRange { name, value });
    }
    Ok(())
}

/// Exact record of a corruption run, aligned with the corrupted cloud.
///
/// Kept points come first in the corrupted cloud (in their original
/// relative order), followed by all injected outliers, so
/// `kept_original_index` is a run of `Some` followed by a run of `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionGroundTruth {
    /// For each corrupted-cloud point: its index in the clean cloud, or
    /// `None` for an injected outlier.
    pub kept_original_index: Vec<Option<usize>>,
    /// Clean-cloud indices that were deleted.
    pub removed_indices: BTreeSet<usize>,
    /// Per corrupted-cloud point: the noise displacement applied to it,
    /// or `None` for injected outliers (which receive no noise).
    pub noise_displacements: Vec<Option<Vector3<f64>>>,
    /// Point count of the clean cloud this record refers to.
    pub original_point_count: usize,
}

impl CorruptionGroundTruth {
    /// All-kept record for an untouched cloud.
    pub fn identity(point_count: usize) -> Self {
        Self {
            kept_original_index: (0..point_count).map(Some).collect(),
            removed_indices: BTreeSet::new(),
            noise_displacements: vec![Some(Vector3::zeros()); point_count],
            original_point_count: point_count,
        }
    }

    pub fn kept_count(&self) -> usize {
        self.kept_original_index.iter().filter(|k| k.is_some()).count()
    }

    pub fn outlier_count(&self) -> usize {
        self.kept_original_index.iter().filter(|k| k.is_none()).count()
    }

    pub fn is_injected_outlier(&self, corrupted_index: usize) -> bool {
        matches!(self.kept_original_index.get(corrupted_index), Some(None))
    }

    /// Maps clean-cloud indices to corrupted-cloud indices (`None` for
    /// removed points).
    pub fn corrupted_index_of_original(&self) -> Vec<Option<usize>> {
        let mut map = vec![None; self.original_point_count];
        for (corrupted, original) in self.kept_original_index.iter().enumerate() {
            if let Some(o) = original {
                map[*o] = Some(corrupted);
            }
        }
        map
    }

    /// Checks the record's internal accounting: kept and removed indices
    /// partition the clean cloud, and displacement entries align with
    /// the kept/outlier labeling.
    pub fn validate(&self) -> Result<(), String> {
        if self.noise_displacements.len() != self.kept_original_index.len() {
            return Err(format!(
                "{} displacement entries for {} corrupted points",
                self.noise_displacements.len(),
                self.kept_original_index.len()
            ));
        }
        let mut seen = BTreeSet::new();
        for (i, entry) in self.kept_original_index.iter().enumerate() {
            match entry {
                Some(original) => {
                    if *original >= self.original_point_count {
                        return Err(format!("kept index {original} out of bounds"));
                    }
                    if self.removed_indices.contains(original) {
                        return Err(format!("index {original} both kept and removed"));
                    }
                    if !seen.insert(*original) {
                        return Err(format!("index {original} kept twice"));
                    }
                    if self.noise_displacements[i].is_none() {
                        return Err(format!("kept point {i} lacks a noise displacement"));
                    }
                }
                None => {
                    if self.noise_displacements[i].is_some() {
                        return Err(format!("outlier {i} carries a noise displacement"));
                    }
                }
            }
        }
        if seen.len() + self.removed_indices.len() != self.original_point_count {
            return Err(format!(
                "{} kept + {} removed != {} original points",
                seen.len(),
                self.removed_indices.len(),
                self.original_point_count
            ));
        }
        if let Some(r) = self.removed_indices.iter().next_back() {
            if *r >= self.original_point_count {
                return Err(format!("removed index {r} out of bounds"));
            }
        }
        Ok(())
    }
}

/// Number of points a ratio maps to: round-half-up on the exact product.
fn scaled_count(ratio: f64, basis: usize) -> usize {
    (ratio * basis as f64).round() as usize
}

/// Removes `round(ratio * N)` points chosen uniformly without
/// replacement. Surviving points keep their relative order.
pub fn remove_uniform(
    cloud: &PointCloud,
    ratio: f64,
    seed: u64,
) -> Result<(PointCloud, BTreeSet<usize>), CorruptionError> {
    check_ratio("missing ratio", ratio)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = scaled_count(ratio, cloud.len()).min(cloud.len());
    let removed: BTreeSet<usize> =
        rand::seq::index::sample(&mut rng, cloud.len(), count).into_iter().collect();
    Ok((drop_indices(cloud, &removed), removed))
}

/// Removes `round(ratio * |region ∩ cloud|)` points sampled uniformly
/// from inside the region.
pub fn remove_structured(
    cloud: &PointCloud,
    ratio: f64,
    region: &RegionSpec,
    seed: u64,
) -> Result<(PointCloud, BTreeSet<usize>), CorruptionError> {
    check_ratio("missing ratio", ratio)?;
    let selected = region.select(cloud)?;
    if selected.is_empty() {
        return Err(CorruptionError::EmptyRegion);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = scaled_count(ratio, selected.len()).min(selected.len());
    let removed: BTreeSet<usize> = rand::seq::index::sample(&mut rng, selected.len(), count)
        .into_iter()
        .map(|i| selected[i])
        .collect();
    Ok((drop_indices(cloud, &removed), removed))
}

/// Appends `round(ratio * N)` points drawn uniformly inside the cloud's
/// axis-aligned bounding box. Returns the corrupted cloud and the
/// indices of the appended points.
pub fn add_uniform_outliers(
    cloud: &PointCloud,
    ratio: f64,
    seed: u64,
) -> Result<(PointCloud, Vec<usize>), CorruptionError> {
    if !ratio.is_finite() || ratio < 0.0 {
        return Err(CorruptionError::InvalidOutlierRatio(ratio));
    }
    let count = scaled_count(ratio, cloud.len());
    if count == 0 {
        return Ok((cloud.clone(), Vec::new()));
    }
    let aabb = crate::geometry::bounding_box(cloud)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outliers = sample_in_box(aabb.min, aabb.max, count, &mut rng);
    Ok(append_outliers(cloud, outliers))
}

/// Appends `round(ratio * |region ∩ cloud|)` points drawn uniformly over
/// the region's volume.
pub fn add_structured_outliers(
    cloud: &PointCloud,
    ratio: f64,
    region: &RegionSpec,
    seed: u64,
) -> Result<(PointCloud, Vec<usize>), CorruptionError> {
    if !ratio.is_finite() || ratio < 0.0 {
        return Err(CorruptionError::InvalidOutlierRatio(ratio));
    }
    let selected = region.select(cloud)?;
    if selected.is_empty() {
        return Err(CorruptionError::EmptyRegion);
    }
    let count = scaled_count(ratio, selected.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outliers = region.sample_volume(cloud, count, &mut rng)?;
    Ok(append_outliers(cloud, outliers))
}

/// Perturbs every coordinate with independent zero-mean Gaussian noise.
pub fn add_noise(
    cloud: &PointCloud,
    sigma: f64,
    seed: u64,
) -> Result<(PointCloud, Vec<Vector3<f64>>), CorruptionError> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(CorruptionError::InvalidNoiseSigma(sigma));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    let mut displacements = Vec::with_capacity(cloud.len());
    let points = cloud
        .points()
        .iter()
        .map(|p| {
            let d = Vector3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
            displacements.push(d);
            p + d
        })
        .collect();
    let noisy = PointCloud::from_parts_unchecked(
        points,
        cloud.normals().map(|ns| ns.to_vec()),
        cloud.labels().map(|ls| ls.to_vec()),
    );
    Ok((noisy, displacements))
}

/// Applies a full corruption configuration.
///
/// Stages run in a fixed order: structured missing, uniform missing,
/// noise, structured outliers, uniform outliers. Removal and outlier
/// counts are all computed on the clean cloud (region-relative for the
/// structured stages), so the configured ratios mean the same thing
/// regardless of which stages are enabled. Outliers are appended after
/// the noise stage and therefore receive no noise.
pub fn corrupt(
    cloud: &PointCloud,
    config: &CorruptionConfig,
) -> Result<(PointCloud, CorruptionGroundTruth), CorruptionError> {
    config.validate()?;
    let n = cloud.len();
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let structured_missing_seed = master.next_u64();
    let uniform_missing_seed = master.next_u64();
    let noise_seed = master.next_u64();
    let structured_outlier_seed = master.next_u64();
    let uniform_outlier_seed = master.next_u64();

    // Removal: choose doomed original indices first, then drop them in
    // one pass so surviving points keep their relative order.
    let mut removed = BTreeSet::new();
    if config.structured_missing_ratio > 0.0 {
        let region = config.missing_region.as_ref().expect("validated");
        let selected = region.select(cloud)?;
        if selected.is_empty() {
            return Err(CorruptionError::EmptyRegion);
        }
        let count = scaled_count(config.structured_missing_ratio, selected.len());
        let mut rng = ChaCha8Rng::seed_from_u64(structured_missing_seed);
        removed.extend(
            rand::seq::index::sample(&mut rng, selected.len(), count)
                .into_iter()
                .map(|i| selected[i]),
        );
    }
    if config.uniform_missing_ratio > 0.0 {
        let survivors: Vec<usize> = (0..n).filter(|i| !removed.contains(i)).collect();
        let count = scaled_count(config.uniform_missing_ratio, n).min(survivors.len());
        let mut rng = ChaCha8Rng::seed_from_u64(uniform_missing_seed);
        removed.extend(
            rand::seq::index::sample(&mut rng, survivors.len(), count)
                .into_iter()
                .map(|i| survivors[i]),
        );
    }
    let kept: Vec<usize> = (0..n).filter(|i| !removed.contains(i)).collect();
    let surviving = cloud.select(&kept);

    let (noisy, displacements) = if config.noise_sigma > 0.0 {
        add_noise(&surviving, config.noise_sigma, noise_seed)?
    } else {
        (surviving.clone(), vec![Vector3::zeros(); surviving.len()])
    };

    // Outliers: counts are region-relative on the clean cloud, appended
    // after the kept points.
    let mut outlier_points = Vec::new();
    if config.structured_outlier_ratio > 0.0 {
        let region = config.outlier_region.as_ref().expect("validated");
        let selected = region.select(cloud)?;
        if selected.is_empty() {
            return Err(CorruptionError::EmptyRegion);
        }
        let count = scaled_count(config.structured_outlier_ratio, selected.len());
        let mut rng = ChaCha8Rng::seed_from_u64(structured_outlier_seed);
        outlier_points.extend(region.sample_volume(cloud, count, &mut rng)?);
    }
    if config.uniform_outlier_ratio > 0.0 {
        let count = scaled_count(config.uniform_outlier_ratio, n);
        if count > 0 {
            let aabb = crate::geometry::bounding_box(cloud)?;
            let mut rng = ChaCha8Rng::seed_from_u64(uniform_outlier_seed);
            outlier_points.extend(sample_in_box(aabb.min, aabb.max, count, &mut rng));
        }
    }
    let outlier_total = outlier_points.len();
    let (corrupted, _) = append_outliers(&noisy, outlier_points);

    let mut kept_original_index: Vec<Option<usize>> = kept.iter().copied().map(Some).collect();
    kept_original_index.extend(std::iter::repeat_n(None, outlier_total));
    let mut noise_displacements: Vec<Option<Vector3<f64>>> =
        displacements.into_iter().map(Some).collect();
    noise_displacements.extend(std::iter::repeat_n(None, outlier_total));

    let ground_truth = CorruptionGroundTruth {
        kept_original_index,
        removed_indices: removed,
        noise_displacements,
        original_point_count: n,
    };
    debug_assert!(ground_truth.validate().is_ok());
    Ok((corrupted, ground_truth))
}

/// Drops the given original indices, preserving the order of survivors.
fn drop_indices(cloud: &PointCloud, removed: &BTreeSet<usize>) -> PointCloud {
    let kept: Vec<usize> = (0..cloud.len()).filter(|i| !removed.contains(i)).collect();
    cloud.select(&kept)
}

fn append_outliers(cloud: &PointCloud, outliers: Vec<Point3<f64>>) -> (PointCloud, Vec<usize>) {
    let base = cloud.len();
    let indices: Vec<usize> = (base..base + outliers.len()).collect();
    let mut points = cloud.points().to_vec();
    points.extend(outliers);
    let normals = cloud.normals().map(|ns| {
        let mut ns = ns.to_vec();
        ns.resize(points.len(), None);
        ns
    });
    let labels = cloud.labels().map(|ls| {
        let mut ls = ls.to_vec();
        ls.resize(points.len(), String::new());
        ls
    });
    (PointCloud::from_parts_unchecked(points, normals, labels), indices)
}
