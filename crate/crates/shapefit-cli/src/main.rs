//! Command-line frontend for the `shapefit` library.
//!
//! Every subcommand reads the same TOML configuration schema the
//! library's pipeline uses, so one file can drive batch runs and the
//! focused single-stage commands alike. Command-line flags override the
//! file; with no file at all, built-in defaults apply.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use shapefit::completion::PartialObservation;
use shapefit::geometry::{apply_transform, PointCloud};
use shapefit::io::{read_correspondence_csv, read_model, write_correspondence_csv};
use shapefit::pipeline::{
    build_models, completion_stage, crop_cloud, make_simulated_dataset, nonrigid_stage,
    read_region, rigid_stage, run_benchmark, run_pipeline, unique_sample_names, NonrigidMethod,
    NonrigidSummary, PipelineConfig, RigidMethod, RigidSummary, RunReport, TargetStatus,
};
use shapefit::stats::{
    deformation_stats, gpa, mean_shape, most_different_shape, write_deformation_field_ply,
    write_per_point_deformation_csv, write_per_shape_deformation_csv,
};

/// Registration, refinement, and completion for 3D point clouds.
#[derive(Parser)]
#[command(name = "shapefit", version, about)]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Master random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for per-target parallelism; 0 means one per core.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register a template onto targets, refine it non-rigidly, then
    /// optionally complete the shape and score against ground truth.
    Pipeline(TargetArgs),
    /// Run every configured method combination on every target and
    /// tabulate the scores. All targets need ground-truth sidecars.
    Benchmark(TargetArgs),
    /// Corrupt clean clouds into simulated scans with exact ground
    /// truth, ready to serve as pipeline or benchmark targets.
    Simulate(DatasetArgs),
    /// Align a training set and fit the PPCA and GP shape models.
    BuildModels(DatasetArgs),
    /// Keep only the points inside a region.
    Crop(CropArgs),
    /// Rigidly register a template onto targets (no refinement).
    Register(RegisterArgs),
    /// Non-rigidly refine an already-posed template onto targets.
    Refine(RefineArgs),
    /// Predict a full shape from partial correspondences and a model.
    Complete(CompleteArgs),
    /// Align corresponded shapes and report deformation statistics.
    Stats(StatsArgs),
}

#[derive(Args)]
struct TargetArgs {
    /// Template cloud registered onto every target.
    #[arg(long, value_name = "FILE")]
    template: Option<PathBuf>,

    /// Target clouds; given explicitly, they replace the config's
    /// target list and directory scan.
    #[arg(value_name = "TARGET")]
    targets: Vec<PathBuf>,
}

#[derive(Args)]
struct DatasetArgs {
    /// Directory of input clouds.
    #[arg(long, value_name = "DIR")]
    dataset_dir: Option<PathBuf>,
}

#[derive(Args)]
struct CropArgs {
    /// JSON region file: {"kind": "sphere" | "box" | "index_set", ...}.
    #[arg(long, value_name = "FILE")]
    region: PathBuf,

    /// Where to write the cropped cloud (defaults to
    /// "<input stem>.cropped.ply" next to the input).
    #[arg(short = 'o', long, value_name = "FILE")]
    output: Option<PathBuf>,

    /// Input cloud (.ply, .obj, or .csv).
    input: PathBuf,
}

#[derive(Args)]
struct RegisterArgs {
    /// Template cloud registered onto every target.
    #[arg(long, value_name = "FILE")]
    template: Option<PathBuf>,

    /// Rigid solver.
    #[arg(long, value_enum)]
    method: Option<RigidMethodArg>,

    /// Target clouds.
    #[arg(value_name = "TARGET")]
    targets: Vec<PathBuf>,
}

#[derive(Args)]
struct RefineArgs {
    /// Posed template cloud (e.g. the `register` output) deformed onto
    /// every target.
    #[arg(long, value_name = "FILE")]
    template: Option<PathBuf>,

    /// Non-rigid solver.
    #[arg(long, value_enum)]
    method: Option<NonrigidMethodArg>,

    /// Target clouds.
    #[arg(value_name = "TARGET")]
    targets: Vec<PathBuf>,
}

#[derive(Args)]
struct CompleteArgs {
    /// Shape-model container built by `build-models`.
    #[arg(long, value_name = "FILE")]
    model: PathBuf,

    /// Correspondence table from `refine`
    /// (template_index,target_index,distance).
    #[arg(long, value_name = "FILE")]
    correspondences: PathBuf,

    /// Target cloud the correspondences point into.
    #[arg(long, value_name = "FILE")]
    target: PathBuf,

    /// Observation variance handed to the solver; defaults to the
    /// config's value or the model's own noise estimate.
    #[arg(long)]
    noise: Option<f64>,

    /// Where to write the completed shape (defaults to
    /// "<target stem>.completed.ply" next to the target).
    #[arg(short = 'o', long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    /// Also normalize scale while aligning.
    #[arg(long)]
    with_scale: bool,

    /// Corresponded shape clouds (at least two); without them, the
    /// config's targets are used.
    #[arg(value_name = "SHAPE")]
    shapes: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RigidMethodArg {
    Ransip,
    Icp,
}

impl From<RigidMethodArg> for RigidMethod {
    fn from(arg: RigidMethodArg) -> Self {
        match arg {
            RigidMethodArg::Ransip => RigidMethod::Ransip,
            RigidMethodArg::Icp => RigidMethod::Icp,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NonrigidMethodArg {
    Bcpd,
    Cpd,
}

impl From<NonrigidMethodArg> for NonrigidMethod {
    fn from(arg: NonrigidMethodArg) -> Self {
        match arg {
            NonrigidMethodArg::Bcpd => NonrigidMethod::Bcpd,
            NonrigidMethodArg::Cpd => NonrigidMethod::Cpd,
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::Pipeline(args) => cmd_pipeline(config, args),
        Command::Benchmark(args) => cmd_benchmark(config, args),
        Command::Simulate(args) => cmd_simulate(config, args),
        Command::BuildModels(args) => cmd_build_models(config, args),
        Command::Crop(args) => cmd_crop(args),
        Command::Register(args) => cmd_register(config, args),
        Command::Refine(args) => cmd_refine(config, args),
        Command::Complete(args) => cmd_complete(config, args),
        Command::Stats(args) => cmd_stats(config, args),
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)
            .with_context(|| format!("reading {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    Ok(config)
}

fn apply_targets(config: &mut PipelineConfig, args: &TargetArgs) {
    if let Some(template) = &args.template {
        config.template = Some(template.clone());
    }
    if !args.targets.is_empty() {
        config.targets = args.targets.clone();
        config.dataset_dir = None;
    }
}

fn cmd_pipeline(mut config: PipelineConfig, args: TargetArgs) -> Result<ExitCode> {
    apply_targets(&mut config, &args);
    let report = run_pipeline(&config)?;
    print_run_report(&report, &config.output_dir);
    Ok(exit_unless_all_failed(report.all_failed()))
}

fn print_run_report(report: &RunReport, out_dir: &Path) {
    for target in &report.targets {
        match target.status {
            TargetStatus::Ok => {
                let mut line = format!("ok    {}", target.sample);
                if let Some(score) = &target.score {
                    line.push_str(&format!(
                        "  distance {:.4}  matched fraction {:.3}",
                        score.distance_error, score.correspondence_fraction
                    ));
                }
                if let Some(err) = &target.score_error {
                    line.push_str(&format!("  (unscored: {err})"));
                }
                println!("{line}");
            }
            TargetStatus::Failed => println!(
                "FAIL  {}  {}",
                target.sample,
                target.error.as_deref().unwrap_or("unknown error")
            ),
        }
    }
    if let Some(aggregate) = &report.aggregate {
        if let Some(summary) = aggregate.metrics.get("distance_error") {
            println!(
                "median distance error {:.4} over {} scored targets",
                summary.median, summary.count
            );
        }
    }
    println!("report: {}", out_dir.join("report.json").display());
}

fn exit_unless_all_failed(all_failed: bool) -> ExitCode {
    if all_failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn cmd_benchmark(mut config: PipelineConfig, args: TargetArgs) -> Result<ExitCode> {
    apply_targets(&mut config, &args);
    let report = run_benchmark(&config)?;
    for method in &report.methods {
        let distance = method
            .aggregate
            .as_ref()
            .and_then(|a| a.metrics.get("distance_error"));
        match distance {
            Some(summary) => println!(
                "{}: median distance {:.4} over {} targets ({} failed)",
                method.method,
                summary.median,
                summary.count,
                method.failures.len()
            ),
            None => println!(
                "{}: no scored targets ({} failed)",
                method.method,
                method.failures.len()
            ),
        }
        for failure in &method.failures {
            println!("  FAIL {}: {}", failure.sample, failure.error);
        }
    }
    println!("table: {}", config.output_dir.join("benchmark.csv").display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(mut config: PipelineConfig, args: DatasetArgs) -> Result<ExitCode> {
    if let Some(dir) = args.dataset_dir {
        config.dataset_dir = Some(dir);
    }
    let manifest = make_simulated_dataset(&config)?;
    for sample in &manifest.samples {
        match &sample.error {
            None => println!(
                "{}: {} points kept of {} ({} removed, {} outliers injected)",
                sample.name,
                sample.corrupted_points - sample.outliers,
                sample.original_points,
                sample.removed,
                sample.outliers
            ),
            Some(err) => println!("FAIL {}: {err}", sample.name),
        }
    }
    println!("manifest: {}", config.output_dir.join("manifest.json").display());
    let all_failed = manifest.samples.iter().all(|s| s.error.is_some());
    Ok(exit_unless_all_failed(all_failed))
}

fn cmd_build_models(mut config: PipelineConfig, args: DatasetArgs) -> Result<ExitCode> {
    if let Some(dir) = args.dataset_dir {
        config.dataset_dir = Some(dir);
    }
    let manifest = build_models(&config)?;
    println!(
        "aligned {} training shapes ({}), holding out {}",
        manifest.train.len(),
        manifest.gpa_status,
        manifest.holdout.len()
    );
    println!(
        "PPCA model with {} components: {}",
        manifest.pca_components_used,
        config.output_dir.join(&manifest.pca_model).display()
    );
    println!(
        "GP model with rank {}: {}",
        manifest.gp_rank_used,
        config.output_dir.join(&manifest.gp_model).display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_crop(args: CropArgs) -> Result<ExitCode> {
    let region = read_region(&args.region)
        .with_context(|| format!("reading {}", args.region.display()))?;
    let output = args
        .output
        .unwrap_or_else(|| args.input.with_extension("cropped.ply"));
    let kept = crop_cloud(&args.input, &region, &output)
        .with_context(|| format!("cropping {}", args.input.display()))?;
    println!("kept {kept} points: {}", output.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_register(mut config: PipelineConfig, args: RegisterArgs) -> Result<ExitCode> {
    if let Some(method) = args.method {
        config.rigid.method = method.into();
    }
    if let Some(template) = args.template {
        config.template = Some(template);
    }
    if !args.targets.is_empty() {
        config.targets = args.targets;
        config.dataset_dir = None;
    }
    let template = read_cloud(config.require_template()?)?;
    let targets = config.resolve_targets()?;
    let names = unique_sample_names(&targets);
    std::fs::create_dir_all(&config.output_dir)?;

    for (index, (path, name)) in targets.iter().zip(&names).enumerate() {
        let target = read_cloud(path)?;
        let result = rigid_stage(&config.rigid, &template, &target, config.target_seed(index))
            .with_context(|| format!("registering {}", path.display()))?;
        let summary = RigidSummary {
            method: config.rigid.method.name().to_string(),
            transform: result.transform,
            cost: result.cost,
            trials_run: result.trials_run,
            iterations: result.iterations,
            assigned: result.correspondences.assigned_count(),
            outlier_targets: result.correspondences.outlier_targets().len(),
            missing_template: result.correspondences.missing_template_indices().len(),
        };
        write_json(&config.output_dir.join(format!("{name}.rigid.json")), &summary)?;
        let posed = apply_transform(&template, &result.transform);
        write_cloud(&config.output_dir.join(format!("{name}.posed.ply")), &posed)?;
        println!(
            "{name}: {} matched {} of {} template points (cost {:.5})",
            summary.method,
            summary.assigned,
            template.len(),
            summary.cost
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_refine(mut config: PipelineConfig, args: RefineArgs) -> Result<ExitCode> {
    if let Some(method) = args.method {
        config.nonrigid.method = method.into();
    }
    if let Some(template) = args.template {
        config.template = Some(template);
    }
    if !args.targets.is_empty() {
        config.targets = args.targets;
        config.dataset_dir = None;
    }
    let template = read_cloud(config.require_template()?)?;
    let targets = config.resolve_targets()?;
    let names = unique_sample_names(&targets);
    std::fs::create_dir_all(&config.output_dir)?;

    for (index, (path, name)) in targets.iter().zip(&names).enumerate() {
        let target = read_cloud(path)?;
        let outcome =
            nonrigid_stage(&config.nonrigid, &template, &target, config.target_seed(index))
                .with_context(|| format!("refining onto {}", path.display()))?;
        let summary = NonrigidSummary {
            method: outcome.method().to_string(),
            iterations: outcome.iterations(),
            sigma2: outcome.sigma2(),
            status: outcome.status_text(),
            assigned: outcome.correspondences().assigned_count(),
        };
        write_json(&config.output_dir.join(format!("{name}.nonrigid.json")), &summary)?;
        write_cloud(
            &config.output_dir.join(format!("{name}.registered.ply")),
            outcome.deformed_template(),
        )?;
        let csv = write_correspondence_csv(
            outcome.correspondences(),
            outcome.deformed_template(),
            &target,
        )?;
        std::fs::write(config.output_dir.join(format!("{name}.correspondences.csv")), csv)?;
        println!(
            "{name}: {} {} after {} iterations (sigma2 {:.6})",
            summary.method, summary.status, summary.iterations, summary.sigma2
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_complete(config: PipelineConfig, args: CompleteArgs) -> Result<ExitCode> {
    let model = read_model(&args.model)
        .with_context(|| format!("reading {}", args.model.display()))?;
    let target = read_cloud(&args.target)?;
    let bytes = std::fs::read(&args.correspondences)
        .with_context(|| format!("reading {}", args.correspondences.display()))?;
    let rows = read_correspondence_csv(&bytes)
        .with_context(|| format!("parsing {}", args.correspondences.display()))?;

    let mut indices = Vec::new();
    let mut positions = Vec::new();
    for row in &rows {
        let Some(assigned) = row.target_index else { continue };
        let Some(position) = target.points().get(assigned) else {
            bail!(
                "row for template point {} references target point {assigned}, \
                 but {} has only {} points",
                row.template_index,
                args.target.display(),
                target.len()
            );
        };
        indices.push(row.template_index);
        positions.push(*position);
    }
    let noise = args.noise.or(config.completion.observation_noise);
    let observation = PartialObservation::new(indices, positions, noise)?;
    let outcome = completion_stage(&model, &observation)?;

    let output = args
        .output
        .unwrap_or_else(|| args.target.with_extension("completed.ply"));
    write_cloud(&output, &outcome.shape)?;
    println!(
        "{} completion from {} observed points ({}): {}",
        outcome.method,
        observation.len(),
        outcome.status,
        output.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_stats(mut config: PipelineConfig, args: StatsArgs) -> Result<ExitCode> {
    let paths = if args.shapes.is_empty() {
        config.resolve_targets()?
    } else {
        args.shapes
    };
    if paths.len() < 2 {
        bail!("alignment needs at least two shapes, got {}", paths.len());
    }
    let names = unique_sample_names(&paths);
    let shapes: Vec<PointCloud> = paths.iter().map(|p| read_cloud(p)).collect::<Result<_>>()?;
    if args.with_scale {
        config.gpa.with_scale = true;
    }

    let dataset = gpa(&shapes, &config.gpa)?;
    let mean = mean_shape(&dataset);
    let stats = deformation_stats(&dataset);
    let most_different = most_different_shape(&dataset);

    let out = &config.output_dir;
    let aligned_dir = out.join("aligned");
    std::fs::create_dir_all(&aligned_dir)?;
    for (name, shape) in names.iter().zip(&dataset.shapes) {
        write_cloud(&aligned_dir.join(format!("{name}.ply")), shape)?;
    }
    write_cloud(&out.join("mean_shape.ply"), &mean)?;
    std::fs::write(out.join("deformation_field.ply"), write_deformation_field_ply(&dataset)?)?;
    std::fs::write(
        out.join("per_shape_deformation.csv"),
        write_per_shape_deformation_csv(&stats),
    )?;
    std::fs::write(
        out.join("per_point_deformation.csv"),
        write_per_point_deformation_csv(&stats),
    )?;

    #[derive(Serialize)]
    struct StatsReport<'a> {
        shapes: &'a [String],
        iterations_used: usize,
        status: String,
        most_different_shape: &'a str,
        per_shape_mean_deformation: &'a [f64],
    }
    write_json(
        &out.join("stats.json"),
        &StatsReport {
            shapes: &names,
            iterations_used: dataset.iterations_used,
            status: dataset.status.to_string(),
            most_different_shape: &names[most_different],
            per_shape_mean_deformation: &stats.per_shape_mean,
        },
    )?;

    println!(
        "aligned {} shapes in {} iterations ({})",
        dataset.shapes.len(),
        dataset.iterations_used,
        dataset.status
    );
    println!(
        "most different shape: {} (mean deformation {:.4})",
        names[most_different], stats.per_shape_mean[most_different]
    );
    println!("reports: {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn read_cloud(path: &Path) -> Result<PointCloud> {
    shapefit::io::read_point_cloud(path)
        .with_context(|| format!("reading {}", path.display()))
}

fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    shapefit::io::write_point_cloud(path, cloud)
        .with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
