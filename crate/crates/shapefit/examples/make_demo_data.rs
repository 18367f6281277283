//! Writes the bundled demo dataset: a template, simulated scans with
//! ground-truth sidecars, a clean training set, prebuilt shape models,
//! a crop region, and a pipeline configuration wired to all of it.
//!
//! Everything derives from fixed seeds, so rerunning reproduces the
//! same bytes:
//!
//! ```text
//! cargo run -p shapefit --example make_demo_data [-- OUTPUT_DIR]
//! ```

use std::path::PathBuf;

use nalgebra::Point3;

use shapefit::corruption::{corrupt, CorruptionConfig, RegionSpec};
use shapefit::io::{write_point_cloud, write_ply_binary};
use shapefit::pipeline::{
    build_models, sidecar_path_for, write_ground_truth, GroundTruthSidecar, ModelBuildConfig,
    PipelineConfig,
};
use shapefit::synth::PatchFamily;

const CONFIG: &str = r#"# Demo pipeline: register the template onto the simulated scans in
# `targets/`, refine non-rigidly, complete each shape from the bundled
# PPCA model, and score everything against the ground-truth sidecars.
#
#   shapefit pipeline --config assets/config.toml
#
# The [corruption] section drives `shapefit simulate`; point it at the
# clean shapes to grow the scan set:
#
#   shapefit simulate --config assets/config.toml \
#       --dataset-dir assets/training --out more_scans

template = "template.ply"
dataset_dir = "targets"
output_dir = "out"
seed = 7

[rigid]
method = "ransip"

[nonrigid]
method = "bcpd"

[completion]
method = "ppca"
model = "models/pca.sfm"

[corruption]
uniform_missing_ratio = 0.1
structured_missing_ratio = 0.6
uniform_outlier_ratio = 0.08
noise_sigma = 0.05

[corruption.missing_region]
kind = "sphere"
center = [0.0, 0.0, -20.0]
radius = 18.0

# Settings `build-models` used to produce `models/`.
[models]
holdout_fraction = 0.25
pca_components = 4
gp_sigma = 6.0
gp_amplitude = 1.0
gp_rank = 24
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "assets".into()));
    let family = PatchFamily::new(120, 7);

    std::fs::create_dir_all(&root)?;
    write_point_cloud(&root.join("template.ply"), &family.base())?;
    std::fs::write(root.join("template_binary.ply"), write_ply_binary(&family.base()))?;

    // Clean, corresponded shape variants: model-building input.
    let training = root.join("training");
    std::fs::create_dir_all(&training)?;
    for i in 0..8u64 {
        write_point_cloud(&training.join(format!("shape_{i}.ply")), &family.member(i, 1.2))?;
    }

    // Simulated scans: corrupted members plus their ground truth.
    let targets = root.join("targets");
    std::fs::create_dir_all(&targets)?;
    let corruption = CorruptionConfig {
        uniform_missing_ratio: 0.1,
        structured_missing_ratio: 0.6,
        uniform_outlier_ratio: 0.08,
        noise_sigma: 0.05,
        missing_region: Some(RegionSpec::Sphere {
            center: Point3::new(0.0, 0.0, -20.0),
            radius: 18.0,
        }),
        ..CorruptionConfig::none()
    };
    for i in 0..3u64 {
        let clean = family.member(20 + i, 1.2);
        let (scan, ground_truth) =
            corrupt(&clean, &CorruptionConfig { seed: 100 + i, ..corruption.clone() })?;
        let scan_path = targets.join(format!("scan_{i}.ply"));
        write_point_cloud(&scan_path, &scan)?;
        write_point_cloud(&targets.join(format!("scan_{i}.clean.ply")), &clean)?;
        write_ground_truth(
            &sidecar_path_for(&scan_path),
            &GroundTruthSidecar {
                clean: PathBuf::from(format!("scan_{i}.clean.ply")),
                ground_truth,
            },
        )?;
        println!("targets/scan_{i}.ply: {} points", scan.len());
    }

    // Shape models fitted on the training split.
    let mut model_config = PipelineConfig::default();
    model_config.dataset_dir = Some(training);
    model_config.output_dir = root.join("models");
    model_config.seed = 7;
    model_config.models = ModelBuildConfig {
        holdout_fraction: 0.25,
        pca_components: 4,
        gp_sigma: 6.0,
        gp_amplitude: 1.0,
        gp_rank: 24,
    };
    let manifest = build_models(&model_config)?;
    println!(
        "models: PPCA with {} components, GP with rank {} ({} shapes held out)",
        manifest.pca_components_used,
        manifest.gp_rank_used,
        manifest.holdout.len()
    );

    // A region file for the `crop` command.
    let regions = root.join("regions");
    std::fs::create_dir_all(&regions)?;
    let crop = RegionSpec::Sphere { center: Point3::new(0.0, 0.0, -20.0), radius: 18.0 };
    let mut region_bytes = serde_json::to_vec_pretty(&crop)?;
    region_bytes.push(b'\n');
    std::fs::write(regions.join("lower_cap.json"), region_bytes)?;

    // The demo config must stay parseable.
    PipelineConfig::from_toml_str(CONFIG)?;
    std::fs::write(root.join("config.toml"), CONFIG)?;
    println!("wrote {}", root.display());
    Ok(())
}
