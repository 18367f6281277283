//! Config-driven orchestration: wires corruption simulation, rigid
//! registration, non-rigid refinement, completion, scoring, and model
//! building into reproducible batch runs with per-target reports.
//!
//! One [`PipelineConfig`] (a TOML file) drives every entry point; each
//! reads only the sections it needs, so a config can hold a whole
//! experiment. All randomness derives from the config seed plus the
//! target's position in the run, making reports bit-reproducible.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::completion::{
    gp_complete, ppca_complete, CompletionError, PartialObservation,
};
use crate::corruption::{CorruptionConfig, CorruptionError};
use crate::geometry::{CorrespondenceMap, GeometryError, PointCloud};
use crate::io::{IoError, ShapeModelFile};
use crate::metrics::MetricsError;
use crate::nonrigid::{
    bcpd, cpd_nonrigid, BcpdParams, BcpdResult, CpdParams, CpdResult, NonrigidError,
};
use crate::rigid::{icp, ransip, IcpParams, RansipParams, RigidError, RigidResult};
use crate::stats::GpaParams;

mod dataset;
mod run;

pub use dataset::{
    build_models, crop_cloud, make_simulated_dataset, read_region, DatasetManifest,
    ModelsManifest, SampleEntry,
};
pub use run::{
    run_benchmark, run_pipeline, BenchmarkReport, CompletionSummary, MethodFailure, MethodReport,
    NonrigidSummary, RigidSummary, RunReport, TargetReport, TargetStatus,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("failed to parse configuration: {0}")]
    ConfigSyntax(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    File(#[from] std::io::Error),
    #[error("JSON serialization failed: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Rigid(#[from] RigidError),
    #[error(transparent)]
    Nonrigid(#[from] NonrigidError),
    #[error(transparent)]
    Completion(#[from] CompletionError),
    #[error(transparent)]
    Corruption(#[from] CorruptionError),
    #[error(transparent)]
    Stats(#[from] crate::stats::StatsError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Which rigid solver opens the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RigidMethod {
    Ransip,
    Icp,
}

impl RigidMethod {
    pub fn name(self) -> &'static str {
        match self {
            RigidMethod::Ransip => "ransip",
            RigidMethod::Icp => "icp",
        }
    }
}

/// Which non-rigid solver refines the rigid result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonrigidMethod {
    Bcpd,
    Cpd,
}

impl NonrigidMethod {
    pub fn name(self) -> &'static str {
        match self {
            NonrigidMethod::Bcpd => "bcpd",
            NonrigidMethod::Cpd => "cpd",
        }
    }
}

/// Which completion closes the pipeline. `None` stops after refinement
/// (the deformed template is still written).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompletionMethod {
    Ppca,
    Gp,
    None,
}

impl CompletionMethod {
    pub fn name(self) -> &'static str {
        match self {
            CompletionMethod::Ppca => "ppca",
            CompletionMethod::Gp => "gp",
            CompletionMethod::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RigidStageConfig {
    pub method: RigidMethod,
    pub ransip: RansipParams,
    pub icp: IcpParams,
}

impl Default for RigidStageConfig {
    fn default() -> Self {
        Self {
            method: RigidMethod::Ransip,
            ransip: RansipParams::default(),
            icp: IcpParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NonrigidStageConfig {
    pub method: NonrigidMethod,
    pub bcpd: BcpdParams,
    pub cpd: CpdParams,
}

impl Default for NonrigidStageConfig {
    fn default() -> Self {
        Self {
            method: NonrigidMethod::Bcpd,
            bcpd: BcpdParams::default(),
            cpd: CpdParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompletionStageConfig {
    pub method: CompletionMethod,
    /// Path to a shape-model container file; required unless `method`
    /// is `none`.
    pub model: Option<PathBuf>,
    /// Observation variance (mm^2) for conditioning; `None` lets the
    /// model pick.
    pub observation_noise: Option<f64>,
}

impl Default for CompletionStageConfig {
    fn default() -> Self {
        Self { method: CompletionMethod::None, model: None, observation_noise: None }
    }
}

/// Parameters for `build-models` runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelBuildConfig {
    /// Fraction of the dataset held out of model building, rounded to
    /// the nearest count; held-out names are listed in the manifest.
    pub holdout_fraction: f64,
    pub pca_components: usize,
    /// Width (mm) of the smoothness kernel mixed into the learned
    /// covariance.
    pub gp_sigma: f64,
    /// Weight of that smoothness term; 0 keeps the pure sample
    /// covariance.
    pub gp_amplitude: f64,
    pub gp_rank: usize,
}

impl Default for ModelBuildConfig {
    fn default() -> Self {
        Self {
            holdout_fraction: 0.1,
            pca_components: 10,
            gp_sigma: 5.0,
            gp_amplitude: 1.0,
            gp_rank: 50,
        }
    }
}

/// Pairs of stage choices for `benchmark` runs; empty means the full
/// cross product.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub matrix: Vec<(RigidMethod, NonrigidMethod)>,
}

/// Everything a run needs, usually parsed from a TOML file. Only the
/// sections an entry point uses are validated by it, so one file can
/// carry simulation, pipeline, benchmark, and model-building settings
/// together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Template (reference) shape registered onto every target.
    pub template: Option<PathBuf>,
    /// Explicit target files, processed in the order given.
    pub targets: Vec<PathBuf>,
    /// Directory scanned for additional targets (`.ply`/`.obj`/`.csv`,
    /// sorted by name). `*.clean.*` files are skipped: the simulator
    /// writes those next to its outputs as scoring references.
    pub dataset_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Master seed; target `i` runs with `seed + i`.
    pub seed: u64,
    /// Worker threads for per-target parallelism; 0 means one per core.
    pub workers: usize,
    pub rigid: RigidStageConfig,
    pub nonrigid: NonrigidStageConfig,
    pub completion: CompletionStageConfig,
    /// Used by `simulate` runs. Defaults to no corruption at all, so an
    /// unconfigured simulate run is a passthrough rather than a surprise.
    #[serde(default = "CorruptionConfig::none")]
    pub corruption: CorruptionConfig,
    pub benchmark: BenchmarkConfig,
    pub models: ModelBuildConfig,
    pub gpa: GpaParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            template: None,
            targets: Vec::new(),
            dataset_dir: None,
            output_dir: PathBuf::from("out"),
            seed: 0,
            workers: 1,
            rigid: RigidStageConfig::default(),
            nonrigid: NonrigidStageConfig::default(),
            completion: CompletionStageConfig::default(),
            corruption: CorruptionConfig::none(),
            benchmark: BenchmarkConfig::default(),
            models: ModelBuildConfig::default(),
            gpa: GpaParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        Ok(toml::from_str(text)?)
    }

    /// Reads a config file; relative paths inside it are rebased onto
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)?;
        let mut config = Self::from_toml_str(&text)?;
        if let Some(dir) = path.parent() {
            config.rebase(dir);
        }
        Ok(config)
    }

    /// Prefixes every relative path in the config with `dir`.
    pub fn rebase(&mut self, dir: &Path) {
        let rebase_one = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let Some(p) = self.template.as_mut() {
            rebase_one(p);
        }
        for p in &mut self.targets {
            rebase_one(p);
        }
        if let Some(p) = self.dataset_dir.as_mut() {
            rebase_one(p);
        }
        rebase_one(&mut self.output_dir);
        if let Some(p) = self.completion.model.as_mut() {
            rebase_one(p);
        }
    }

    /// All targets for this run: the explicit list, then the scanned
    /// directory (sorted by name), duplicates removed.
    pub fn resolve_targets(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let mut targets = self.targets.clone();
        if let Some(dir) = &self.dataset_dir {
            let mut scanned = Vec::new();
            for entry in std::fs::read_dir(dir)? {
                let path = entry?.path();
                let Some(ext) = path.extension().and_then(|e| e.to_str()) else { continue };
                if !matches!(ext.to_ascii_lowercase().as_str(), "ply" | "obj" | "csv") {
                    continue;
                }
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                if stem.ends_with(".clean") {
                    continue;
                }
                scanned.push(path);
            }
            scanned.sort();
            targets.extend(scanned);
        }
        let mut seen = std::collections::BTreeSet::new();
        targets.retain(|p| seen.insert(p.clone()));
        if targets.is_empty() {
            return Err(PipelineError::InvalidConfig(
                "no targets: provide `targets` or `dataset_dir`".to_string(),
            ));
        }
        Ok(targets)
    }

    /// The template path, or the configuration error explaining its
    /// absence.
    pub fn require_template(&self) -> Result<&Path, PipelineError> {
        self.template
            .as_deref()
            .ok_or_else(|| PipelineError::InvalidConfig("`template` is required".to_string()))
    }

    /// Seed for the target at `index`; offsetting the master seed keeps
    /// per-target randomness independent of processing order.
    pub fn target_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_add(index as u64)
    }
}

/// Ground truth written next to a simulated target (`<stem>.gt.json`):
/// the corruption record plus the clean source it refers to, so a
/// target directory is self-contained for scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSidecar {
    /// Clean corresponded shape the target was corrupted from, relative
    /// to the sidecar's directory unless absolute.
    pub clean: PathBuf,
    pub ground_truth: crate::corruption::CorruptionGroundTruth,
}

/// `dir/foo.ply` -> `dir/foo.gt.json`.
pub fn sidecar_path_for(target: &Path) -> PathBuf {
    target.with_extension("gt.json")
}

pub fn write_ground_truth(path: &Path, sidecar: &GroundTruthSidecar) -> Result<(), PipelineError> {
    Ok(std::fs::write(path, serde_json::to_vec_pretty(sidecar)?)?)
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruthSidecar, PipelineError> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

/// Runs the configured rigid solver. The RANSIP draw sequence is
/// re-seeded per target so runs do not depend on processing order.
pub fn rigid_stage(
    config: &RigidStageConfig,
    template: &PointCloud,
    target: &PointCloud,
    seed: u64,
) -> Result<RigidResult, RigidError> {
    match config.method {
        RigidMethod::Ransip => {
            let params = RansipParams { seed, ..config.ransip.clone() };
            ransip(template, target, &params)
        }
        RigidMethod::Icp => {
            icp(template, target, &config.icp, &crate::geometry::RigidTransform::identity())
        }
    }
}

/// Result of the configured non-rigid solver, unified over the two
/// algorithms for the pipeline's needs.
#[derive(Debug, Clone)]
pub enum NonrigidOutcome {
    Bcpd(Box<BcpdResult>),
    Cpd(Box<CpdResult>),
}

impl NonrigidOutcome {
    pub fn method(&self) -> &'static str {
        match self {
            NonrigidOutcome::Bcpd(_) => "bcpd",
            NonrigidOutcome::Cpd(_) => "cpd",
        }
    }

    pub fn deformed_template(&self) -> &PointCloud {
        match self {
            NonrigidOutcome::Bcpd(r) => &r.deformed_template,
            NonrigidOutcome::Cpd(r) => &r.deformed_template,
        }
    }

    pub fn correspondences(&self) -> &CorrespondenceMap {
        match self {
            NonrigidOutcome::Bcpd(r) => &r.correspondences,
            NonrigidOutcome::Cpd(r) => &r.correspondences,
        }
    }

    pub fn iterations(&self) -> usize {
        match self {
            NonrigidOutcome::Bcpd(r) => r.iterations,
            NonrigidOutcome::Cpd(r) => r.iterations,
        }
    }

    pub fn sigma2(&self) -> f64 {
        match self {
            NonrigidOutcome::Bcpd(r) => r.sigma2,
            NonrigidOutcome::Cpd(r) => r.sigma2,
        }
    }

    pub fn status_text(&self) -> String {
        match self {
            NonrigidOutcome::Bcpd(r) => r.status.to_string(),
            NonrigidOutcome::Cpd(r) => r.status.to_string(),
        }
    }
}

/// Runs the configured non-rigid solver with the given per-target seed.
pub fn nonrigid_stage(
    config: &NonrigidStageConfig,
    template: &PointCloud,
    target: &PointCloud,
    seed: u64,
) -> Result<NonrigidOutcome, NonrigidError> {
    match config.method {
        NonrigidMethod::Bcpd => {
            let params = BcpdParams { seed, ..config.bcpd.clone() };
            Ok(NonrigidOutcome::Bcpd(Box::new(bcpd(template, target, &params)?)))
        }
        NonrigidMethod::Cpd => {
            let params = CpdParams { seed, ..config.cpd.clone() };
            Ok(NonrigidOutcome::Cpd(Box::new(cpd_nonrigid(template, target, &params)?)))
        }
    }
}

/// Turns registration correspondences into a completion observation:
/// each assigned template index is observed at its matched target
/// position.
pub fn observation_from_correspondences(
    map: &CorrespondenceMap,
    target: &PointCloud,
    observation_noise: Option<f64>,
) -> Result<PartialObservation, CompletionError> {
    let mut indices = Vec::new();
    let mut positions = Vec::new();
    for (m, assignment) in map.assignments().iter().enumerate() {
        if let Some(j) = assignment {
            indices.push(m);
            positions.push(target.points()[*j]);
        }
    }
    PartialObservation::new(indices, positions, observation_noise)
}

/// A completed shape plus how it was produced.
#[derive(Debug, Clone)]
pub struct CompletionOutcome {
    pub shape: PointCloud,
    pub method: &'static str,
    pub status: &'static str,
}

/// Conditions the model on the observation, whichever family the model
/// container holds.
pub fn completion_stage(
    model: &ShapeModelFile,
    observation: &PartialObservation,
) -> Result<CompletionOutcome, CompletionError> {
    let status = if observation.is_empty() { "prior_mean" } else { "posterior" };
    match model {
        ShapeModelFile::Pca(m) => {
            let completed = ppca_complete(m, observation)?;
            Ok(CompletionOutcome { shape: completed.shape, method: "ppca", status })
        }
        ShapeModelFile::Gp(m) => {
            let completed = gp_complete(m, observation)?;
            Ok(CompletionOutcome { shape: completed.shape, method: "gp", status })
        }
    }
}

/// Rebases stage-2 correspondences (built against the outlier-stripped
/// target) onto the original target's indices, and folds the stage-1
/// outlier classification back in.
pub fn remap_correspondences(
    stripped: &CorrespondenceMap,
    kept_target_indices: &[usize],
    original_target_len: usize,
    stage1_outliers: &[usize],
) -> Result<CorrespondenceMap, GeometryError> {
    let assignments: Vec<Option<usize>> = stripped
        .assignments()
        .iter()
        .map(|a| a.map(|k| kept_target_indices[k]))
        .collect();
    let mut outliers: std::collections::BTreeSet<usize> =
        stripped.outlier_targets().iter().map(|&k| kept_target_indices[k]).collect();
    outliers.extend(stage1_outliers.iter().copied());
    CorrespondenceMap::new(assignments, outliers, stripped.threshold_used(), original_target_len)
}

/// A path's file stem, used to name per-sample outputs.
pub fn sample_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| {
        path.to_string_lossy().into_owned()
    })
}

/// Stems shortened for file naming, made unique by suffixing the list
/// position when two paths share a stem.
pub fn unique_sample_names(paths: &[PathBuf]) -> Vec<String> {
    let mut counts = std::collections::BTreeMap::new();
    for path in paths {
        *counts.entry(sample_name(path)).or_insert(0usize) += 1;
    }
    paths
        .iter()
        .enumerate()
        .map(|(i, path)| {
            let stem = sample_name(path);
            if counts[&stem] > 1 {
                format!("{stem}-{i}")
            } else {
                stem
            }
        })
        .collect()
}
