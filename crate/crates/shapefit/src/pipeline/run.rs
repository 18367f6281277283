//! Batch execution: the register-refine-complete pipeline over a target
//! list, and the method-matrix benchmark, both emitting per-target
//! artifacts plus machine-readable reports.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{apply_transform, PointCloud, RigidTransform};
use crate::io::{
    read_model, read_point_cloud, write_correspondence_csv, ShapeModelFile,
};
use crate::metrics::{
    aggregate_scores, score_registration, write_scores_csv, AggregateReport,
    RegistrationScore, ScoreRow,
};
use crate::rigid::classify_points;

use super::{
    completion_stage, nonrigid_stage, observation_from_correspondences, read_ground_truth,
    remap_correspondences, rigid_stage, sample_name, sidecar_path_for, unique_sample_names,
    CompletionMethod, GroundTruthSidecar, NonrigidMethod, NonrigidStageConfig, PipelineConfig,
    PipelineError, RigidMethod, RigidStageConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidSummary {
    pub method: String,
    pub transform: RigidTransform,
    /// ICP: final RMS residual (mm); RANSIP: median inlier normal angle
    /// (radians).
    pub cost: f64,
    pub trials_run: usize,
    pub iterations: usize,
    pub assigned: usize,
    pub outlier_targets: usize,
    pub missing_template: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonrigidSummary {
    pub method: String,
    pub iterations: usize,
    pub sigma2: f64,
    pub status: String,
    pub assigned: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionSummary {
    pub method: String,
    pub status: String,
    pub points: usize,
}

/// Everything recorded about one target. Exactly one of these appears in
/// the run report per input target, whatever happened to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub sample: String,
    pub target: String,
    pub status: TargetStatus,
    /// `stage: message` for the stage that failed, when one did.
    pub error: Option<String>,
    pub rigid: Option<RigidSummary>,
    pub nonrigid: Option<NonrigidSummary>,
    pub completion: Option<CompletionSummary>,
    pub score: Option<RegistrationScore>,
    /// Ground truth was present but could not be scored (e.g. template
    /// and clean shape are not corresponded).
    pub score_error: Option<String>,
    /// Files written for this target, relative to the output directory.
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub template: String,
    pub method: String,
    pub targets: Vec<TargetReport>,
    pub aggregate: Option<AggregateReport>,
}

impl RunReport {
    /// The exit-status rule: a run only counts as failed when no target
    /// survived.
    pub fn all_failed(&self) -> bool {
        self.targets.iter().all(|t| t.status == TargetStatus::Failed)
    }
}

struct RunContext<'a> {
    config: &'a PipelineConfig,
    template: PointCloud,
    model: Option<ShapeModelFile>,
    out_dir: PathBuf,
}

/// Registers, refines, optionally completes, and scores every target.
///
/// Per-target artifacts are written as each stage finishes, so a
/// failure later in the chain never touches what earlier stages already
/// produced. The run report (and `scores.csv` when any target had
/// ground truth) is written last. Failures are recorded per target; the
/// call itself only errors on configuration problems.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunReport, PipelineError> {
    let template_path = config.require_template()?;
    let template = read_point_cloud(template_path)?;
    let targets = config.resolve_targets()?;
    let model = load_completion_model(config)?;
    std::fs::create_dir_all(&config.output_dir)?;

    let method_label = format!(
        "{}+{}",
        config.rigid.method.name(),
        config.nonrigid.method.name()
    );
    let ctx = RunContext { config, template, model, out_dir: config.output_dir.clone() };
    let names = unique_sample_names(&targets);

    let reports: Vec<TargetReport> = with_pool(config.workers, || {
        targets
            .par_iter()
            .enumerate()
            .map(|(index, path)| process_target(&ctx, index, path, &names[index]))
            .collect()
    })?;

    let rows: Vec<ScoreRow> = reports
        .iter()
        .filter_map(|t| {
            t.score.as_ref().map(|score| ScoreRow {
                sample: t.sample.clone(),
                method: method_label.clone(),
                score: score.clone(),
            })
        })
        .collect();
    let aggregate = (!rows.is_empty()).then(|| aggregate_scores(&rows));
    if !rows.is_empty() {
        std::fs::write(ctx.out_dir.join("scores.csv"), write_scores_csv(&rows))?;
    }

    let report = RunReport {
        seed: config.seed,
        template: template_path.to_string_lossy().into_owned(),
        method: method_label,
        targets: reports,
        aggregate,
    };
    write_json(&ctx.out_dir.join("report.json"), &report)?;
    Ok(report)
}

fn load_completion_model(
    config: &PipelineConfig,
) -> Result<Option<ShapeModelFile>, PipelineError> {
    if config.completion.method == CompletionMethod::None {
        return Ok(None);
    }
    let path = config.completion.model.as_ref().ok_or_else(|| {
        PipelineError::InvalidConfig(format!(
            "completion.method is {:?} but completion.model is not set",
            config.completion.method.name()
        ))
    })?;
    let model = read_model(path)?;
    let matches = matches!(
        (&model, config.completion.method),
        (ShapeModelFile::Pca(_), CompletionMethod::Ppca)
            | (ShapeModelFile::Gp(_), CompletionMethod::Gp)
    );
    if !matches {
        return Err(PipelineError::InvalidConfig(format!(
            "completion.method is {} but {} holds a {} model",
            config.completion.method.name(),
            path.display(),
            match model {
                ShapeModelFile::Pca(_) => "ppca",
                ShapeModelFile::Gp(_) => "gp",
            }
        )));
    }
    Ok(Some(model))
}

fn process_target(ctx: &RunContext, index: usize, path: &Path, name: &str) -> TargetReport {
    let mut report = TargetReport {
        sample: name.to_string(),
        target: path.to_string_lossy().into_owned(),
        status: TargetStatus::Ok,
        error: None,
        rigid: None,
        nonrigid: None,
        completion: None,
        score: None,
        score_error: None,
        outputs: Vec::new(),
    };
    if let Err(message) = run_target(ctx, index, path, name, &mut report) {
        report.status = TargetStatus::Failed;
        report.error = Some(message);
    }
    report
}

fn stage<T, E: std::fmt::Display>(name: &str, r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| format!("{name}: {e}"))
}

fn run_target(
    ctx: &RunContext,
    index: usize,
    path: &Path,
    name: &str,
    report: &mut TargetReport,
) -> Result<(), String> {
    let config = ctx.config;
    let target = stage("read target", read_point_cloud(path))?;
    let seed = config.target_seed(index);

    let rigid = stage(
        "rigid registration",
        rigid_stage(&config.rigid, &ctx.template, &target, seed),
    )?;
    report.rigid = Some(RigidSummary {
        method: config.rigid.method.name().to_string(),
        transform: rigid.transform,
        cost: rigid.cost,
        trials_run: rigid.trials_run,
        iterations: rigid.iterations,
        assigned: rigid.correspondences.assigned_count(),
        outlier_targets: rigid.correspondences.outlier_targets().len(),
        missing_template: rigid.correspondences.missing_template_indices().len(),
    });
    let rigid_file = format!("{name}.rigid.json");
    stage(
        "write rigid summary",
        write_json(&ctx.out_dir.join(&rigid_file), report.rigid.as_ref().unwrap()),
    )?;
    report.outputs.push(rigid_file);

    // Refinement sees the template in its registered pose and the
    // target without the points stage 1 called outliers.
    let (kept, stage1_outliers, _) = classify_points(&rigid, &target);
    let posed = apply_transform(&ctx.template, &rigid.transform);
    let stripped = target.select(&kept);
    let refined = stage(
        "non-rigid refinement",
        nonrigid_stage(&config.nonrigid, &posed, &stripped, seed),
    )?;
    let correspondences = stage(
        "correspondence remapping",
        remap_correspondences(
            refined.correspondences(),
            &kept,
            target.len(),
            &stage1_outliers,
        ),
    )?;
    report.nonrigid = Some(NonrigidSummary {
        method: refined.method().to_string(),
        iterations: refined.iterations(),
        sigma2: refined.sigma2(),
        status: refined.status_text(),
        assigned: correspondences.assigned_count(),
    });

    let registered_file = format!("{name}.registered.ply");
    stage(
        "write registered shape",
        crate::io::write_point_cloud(
            &ctx.out_dir.join(&registered_file),
            refined.deformed_template(),
        ),
    )?;
    report.outputs.push(registered_file);
    let csv_file = format!("{name}.correspondences.csv");
    let csv = stage(
        "write correspondences",
        write_correspondence_csv(&correspondences, refined.deformed_template(), &target),
    )?;
    stage("write correspondences", std::fs::write(ctx.out_dir.join(&csv_file), csv))?;
    report.outputs.push(csv_file);

    if let Some(model) = &ctx.model {
        let observation = stage(
            "completion observation",
            observation_from_correspondences(
                &correspondences,
                &target,
                config.completion.observation_noise,
            ),
        )?;
        let completed = stage("completion", completion_stage(model, &observation))?;
        report.completion = Some(CompletionSummary {
            method: completed.method.to_string(),
            status: completed.status.to_string(),
            points: completed.shape.len(),
        });
        let completed_file = format!("{name}.completed.ply");
        stage(
            "write completed shape",
            crate::io::write_point_cloud(&ctx.out_dir.join(&completed_file), &completed.shape),
        )?;
        report.outputs.push(completed_file);
    }

    score_if_ground_truth(ctx, path, &correspondences, report);
    Ok(())
}

/// Scores against a `<stem>.gt.json` sidecar when one exists. Scoring
/// problems are recorded, never escalated: the registration itself
/// succeeded.
fn score_if_ground_truth(
    ctx: &RunContext,
    target_path: &Path,
    correspondences: &crate::geometry::CorrespondenceMap,
    report: &mut TargetReport,
) {
    let sidecar_path = sidecar_path_for(target_path);
    if !sidecar_path.exists() {
        return;
    }
    let result = (|| -> Result<RegistrationScore, String> {
        let sidecar: GroundTruthSidecar =
            stage("read ground truth", read_ground_truth(&sidecar_path))?;
        let clean_path = if sidecar.clean.is_absolute() {
            sidecar.clean.clone()
        } else {
            sidecar_path.parent().unwrap_or(Path::new("")).join(&sidecar.clean)
        };
        let clean = stage("read clean shape", read_point_cloud(&clean_path))?;
        stage(
            "score",
            score_registration(correspondences, &sidecar.ground_truth, &ctx.template, &clean),
        )
    })();
    match result {
        Ok(score) => report.score = Some(score),
        Err(message) => report.score_error = Some(message),
    }
}

fn with_pool<T: Send>(
    workers: usize,
    f: impl FnOnce() -> T + Send,
) -> Result<T, PipelineError> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PipelineError::InvalidConfig(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodFailure {
    pub sample: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub aggregate: Option<AggregateReport>,
    pub failures: Vec<MethodFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub seed: u64,
    pub template: String,
    pub methods: Vec<MethodReport>,
}

/// Scores every stage-method combination on every target.
///
/// All targets must carry ground-truth sidecars, since comparison
/// without scoring is meaningless. Methods run on identical inputs with
/// identical per-target seeds; rows land in `benchmark.csv` and
/// per-method aggregates in `benchmark.json`.
pub fn run_benchmark(config: &PipelineConfig) -> Result<BenchmarkReport, PipelineError> {
    let template_path = config.require_template()?;
    let template = read_point_cloud(template_path)?;
    let targets = config.resolve_targets()?;
    std::fs::create_dir_all(&config.output_dir)?;

    let mut loaded = Vec::new();
    for path in &targets {
        let sidecar_path = sidecar_path_for(path);
        if !sidecar_path.exists() {
            return Err(PipelineError::InvalidConfig(format!(
                "benchmark target {} has no ground truth at {}",
                path.display(),
                sidecar_path.display()
            )));
        }
        let sidecar = read_ground_truth(&sidecar_path)?;
        let clean_path = if sidecar.clean.is_absolute() {
            sidecar.clean.clone()
        } else {
            sidecar_path.parent().unwrap_or(Path::new("")).join(&sidecar.clean)
        };
        loaded.push((
            sample_name(path),
            read_point_cloud(path)?,
            sidecar.ground_truth,
            read_point_cloud(&clean_path)?,
        ));
    }

    let matrix: Vec<(RigidMethod, NonrigidMethod)> = if config.benchmark.matrix.is_empty() {
        use super::NonrigidMethod::{Bcpd, Cpd};
        use RigidMethod::{Icp, Ransip};
        vec![(Icp, Cpd), (Icp, Bcpd), (Ransip, Cpd), (Ransip, Bcpd)]
    } else {
        config.benchmark.matrix.clone()
    };

    let mut all_rows = Vec::new();
    let mut methods = Vec::new();
    for (rigid_method, nonrigid_method) in matrix {
        let label = format!("{}+{}", rigid_method.name(), nonrigid_method.name());
        let rigid_config = RigidStageConfig { method: rigid_method, ..config.rigid.clone() };
        let nonrigid_config =
            NonrigidStageConfig { method: nonrigid_method, ..config.nonrigid.clone() };

        let outcomes: Vec<Result<RegistrationScore, String>> = with_pool(config.workers, || {
            loaded
                .par_iter()
                .enumerate()
                .map(|(index, (_, target, ground_truth, clean))| {
                    let seed = config.target_seed(index);
                    let correspondences = register_and_refine(
                        &rigid_config,
                        &nonrigid_config,
                        &template,
                        target,
                        seed,
                    )?;
                    stage(
                        "score",
                        score_registration(&correspondences, ground_truth, &template, clean),
                    )
                })
                .collect()
        })?;

        let mut failures = Vec::new();
        let mut rows = Vec::new();
        for ((sample, ..), outcome) in loaded.iter().zip(outcomes) {
            match outcome {
                Ok(score) => rows.push(ScoreRow {
                    sample: sample.clone(),
                    method: label.clone(),
                    score,
                }),
                Err(error) => failures.push(MethodFailure { sample: sample.clone(), error }),
            }
        }
        let aggregate = (!rows.is_empty()).then(|| aggregate_scores(&rows));
        all_rows.extend(rows);
        methods.push(MethodReport { method: label, aggregate, failures });
    }

    std::fs::write(config.output_dir.join("benchmark.csv"), write_scores_csv(&all_rows))?;
    let report = BenchmarkReport {
        seed: config.seed,
        template: template_path.to_string_lossy().into_owned(),
        methods,
    };
    write_json(&config.output_dir.join("benchmark.json"), &report)?;
    Ok(report)
}

/// The shared stage-1 + stage-2 chain: returns correspondences indexed
/// against the original (unstripped) target.
fn register_and_refine(
    rigid_config: &RigidStageConfig,
    nonrigid_config: &NonrigidStageConfig,
    template: &PointCloud,
    target: &PointCloud,
    seed: u64,
) -> Result<crate::geometry::CorrespondenceMap, String> {
    let rigid = stage(
        "rigid registration",
        rigid_stage(rigid_config, template, target, seed),
    )?;
    let (kept, stage1_outliers, _) = classify_points(&rigid, target);
    let posed = apply_transform(template, &rigid.transform);
    let stripped = target.select(&kept);
    let refined = stage(
        "non-rigid refinement",
        nonrigid_stage(nonrigid_config, &posed, &stripped, seed),
    )?;
    stage(
        "correspondence remapping",
        remap_correspondences(refined.correspondences(), &kept, target.len(), &stage1_outliers),
    )
}
