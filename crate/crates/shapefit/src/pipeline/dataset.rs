//! Dataset management: corrupting clean corresponded shapes into
//! simulated scan targets, building shape models from a training split,
//! and cropping clouds to a region.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::completion::{build_gp_model, build_pca_model};
use crate::corruption::{corrupt, RegionSpec};
use crate::io::{read_point_cloud, write_model, write_point_cloud, ShapeModelFile};
use crate::pipeline::{
    sidecar_path_for, unique_sample_names, write_ground_truth, GroundTruthSidecar,
    PipelineConfig, PipelineError,
};
use crate::stats::{gpa, mean_shape};

/// One input shape's fate in a `simulate` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub name: String,
    pub input: String,
    /// Written corrupted cloud, unless the input failed to read.
    pub output: Option<String>,
    pub clean: Option<String>,
    pub ground_truth: Option<String>,
    pub seed: u64,
    pub original_points: usize,
    pub corrupted_points: usize,
    pub removed: usize,
    pub outliers: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub samples: Vec<SampleEntry>,
}

/// Corrupts every shape in `dataset_dir` into `output_dir`, writing per
/// sample the corrupted cloud, a copy of its clean source, and the
/// ground-truth sidecar, plus a manifest of the whole run.
///
/// Sample `i` is corrupted with seed `config.seed + i`, so a fixed
/// master seed reproduces the dataset byte for byte. Unreadable inputs
/// become manifest entries with an error, not run failures.
pub fn make_simulated_dataset(config: &PipelineConfig) -> Result<DatasetManifest, PipelineError> {
    let input_dir = config.dataset_dir.as_ref().ok_or_else(|| {
        PipelineError::InvalidConfig("`dataset_dir` is required to simulate".to_string())
    })?;
    let inputs = list_cloud_files(input_dir)?;
    if inputs.is_empty() {
        return Err(PipelineError::InvalidConfig(format!(
            "no point clouds found in {}",
            input_dir.display()
        )));
    }
    std::fs::create_dir_all(&config.output_dir)?;

    let names = unique_sample_names(&inputs);
    let mut samples = Vec::with_capacity(inputs.len());
    for (index, (path, name)) in inputs.iter().zip(&names).enumerate() {
        let seed = config.target_seed(index);
        let mut entry = SampleEntry {
            name: name.clone(),
            input: path.to_string_lossy().into_owned(),
            output: None,
            clean: None,
            ground_truth: None,
            seed,
            original_points: 0,
            corrupted_points: 0,
            removed: 0,
            outliers: 0,
            error: None,
        };
        match simulate_one(config, path, name, seed, &mut entry) {
            Ok(()) => {}
            Err(e) => entry.error = Some(e.to_string()),
        }
        samples.push(entry);
    }

    let manifest = DatasetManifest { seed: config.seed, samples };
    write_json(&config.output_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn simulate_one(
    config: &PipelineConfig,
    path: &Path,
    name: &str,
    seed: u64,
    entry: &mut SampleEntry,
) -> Result<(), PipelineError> {
    let clean = read_point_cloud(path)?;
    entry.original_points = clean.len();
    let corruption = crate::corruption::CorruptionConfig { seed, ..config.corruption.clone() };
    let (corrupted, ground_truth) = corrupt(&clean, &corruption)?;
    entry.corrupted_points = corrupted.len();
    entry.removed = ground_truth.removed_indices.len();
    entry.outliers = ground_truth.outlier_count();

    let out_cloud = config.output_dir.join(format!("{name}.ply"));
    let out_clean = config.output_dir.join(format!("{name}.clean.ply"));
    write_point_cloud(&out_cloud, &corrupted)?;
    write_point_cloud(&out_clean, &clean)?;
    let sidecar_path = sidecar_path_for(&out_cloud);
    write_ground_truth(
        &sidecar_path,
        &GroundTruthSidecar {
            clean: PathBuf::from(format!("{name}.clean.ply")),
            ground_truth,
        },
    )?;
    entry.output = Some(format!("{name}.ply"));
    entry.clean = Some(format!("{name}.clean.ply"));
    entry.ground_truth = Some(format!("{name}.gt.json"));
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelsManifest {
    pub seed: u64,
    pub train: Vec<String>,
    pub holdout: Vec<String>,
    pub pca_model: String,
    pub gp_model: String,
    pub mean_shape: String,
    /// Component counts actually used; requests are capped at the data
    /// rank (train size minus one for PCA, three coordinates per point
    /// for the GP basis).
    pub pca_components_used: usize,
    pub gp_rank_used: usize,
    pub gpa_iterations: usize,
    pub gpa_status: String,
}

/// Aligns the training split with Procrustes iteration and fits both
/// model families on it, writing the containers plus a manifest naming
/// the split.
///
/// The holdout fraction rounds to the nearest count; held-out shapes are
/// listed but untouched, ready to serve as completion test cases. The
/// shuffle is seeded, so the split is a pure function of the config.
pub fn build_models(config: &PipelineConfig) -> Result<ModelsManifest, PipelineError> {
    let input_dir = config.dataset_dir.as_ref().ok_or_else(|| {
        PipelineError::InvalidConfig("`dataset_dir` is required to build models".to_string())
    })?;
    let fraction = config.models.holdout_fraction;
    if !(0.0..1.0).contains(&fraction) {
        return Err(PipelineError::InvalidConfig(format!(
            "holdout_fraction must be in [0, 1), got {fraction}"
        )));
    }
    let inputs = list_cloud_files(input_dir)?;
    let names = unique_sample_names(&inputs);
    let holdout_count = (fraction * inputs.len() as f64).round() as usize;
    if inputs.len() < holdout_count + 2 {
        return Err(PipelineError::InvalidConfig(format!(
            "{} shapes leave fewer than 2 to train on after holding out {}",
            inputs.len(),
            holdout_count
        )));
    }

    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    order.shuffle(&mut rng);
    let mut holdout_set: Vec<usize> = order[..holdout_count].to_vec();
    holdout_set.sort_unstable();
    let is_held: Vec<bool> = {
        let mut mask = vec![false; inputs.len()];
        for &i in &holdout_set {
            mask[i] = true;
        }
        mask
    };

    let mut train_shapes = Vec::new();
    let mut train_names = Vec::new();
    for (i, (path, name)) in inputs.iter().zip(&names).enumerate() {
        if !is_held[i] {
            train_shapes.push(read_point_cloud(path)?);
            train_names.push(name.clone());
        }
    }
    let holdout_names: Vec<String> =
        holdout_set.iter().map(|&i| names[i].clone()).collect();

    let aligned = gpa(&train_shapes, &config.gpa)?;
    let reference = mean_shape(&aligned);
    let pca_components = config.models.pca_components.min(train_shapes.len() - 1).max(1);
    let gp_rank = config.models.gp_rank.min(reference.len() * 3).max(1);

    let pca = build_pca_model(&aligned.shapes, pca_components)?;
    let gp = build_gp_model(
        &aligned.shapes,
        &reference,
        config.models.gp_sigma,
        config.models.gp_amplitude,
        gp_rank,
    )?;

    std::fs::create_dir_all(&config.output_dir)?;
    write_model(&config.output_dir.join("pca.sfm"), &ShapeModelFile::Pca(pca))?;
    write_model(&config.output_dir.join("gp.sfm"), &ShapeModelFile::Gp(gp))?;
    write_point_cloud(&config.output_dir.join("mean_shape.ply"), &reference)?;

    let manifest = ModelsManifest {
        seed: config.seed,
        train: train_names,
        holdout: holdout_names,
        pca_model: "pca.sfm".to_string(),
        gp_model: "gp.sfm".to_string(),
        mean_shape: "mean_shape.ply".to_string(),
        pca_components_used: pca_components,
        gp_rank_used: gp_rank,
        gpa_iterations: aligned.iterations_used,
        gpa_status: aligned.status.to_string(),
    };
    write_json(&config.output_dir.join("models.json"), &manifest)?;
    Ok(manifest)
}

/// Extracts the region's points from `input` into `output` (formats by
/// extension), returning how many points were kept.
pub fn crop_cloud(
    input: &Path,
    region: &RegionSpec,
    output: &Path,
) -> Result<usize, PipelineError> {
    let cloud = read_point_cloud(input)?;
    let indices = region.select(&cloud)?;
    let cropped = cloud.select(&indices);
    if let Some(parent) = output.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_point_cloud(output, &cropped)?;
    Ok(cropped.len())
}

/// Reads a JSON region file (`{"kind": "sphere", ...}`).
pub fn read_region(path: &Path) -> Result<RegionSpec, PipelineError> {
    let region: RegionSpec = serde_json::from_slice(&std::fs::read(path)?)?;
    region.validate().map_err(PipelineError::Corruption)?;
    Ok(region)
}

/// Cloud files in `dir`, sorted by name; `*.clean.*` copies are skipped.
fn list_cloud_files(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut files = Vec::new();
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
        files.push(path);
    }
    files.sort();
    Ok(files)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corruption::CorruptionConfig;
    use crate::io::read_model;
    use crate::pipeline::read_ground_truth;
    use crate::synth::PatchFamily;
    use nalgebra::Point3;

    fn clean_dataset(dir: &Path, count: usize, points: usize) -> PathBuf {
        let data = dir.join("clean");
        std::fs::create_dir(&data).unwrap();
        let family = PatchFamily::new(points, 77);
        for i in 0..count {
            let shape = family.member(i as u64, 1.0);
            write_point_cloud(&data.join(format!("ear_{i:02}.ply")), &shape).unwrap();
        }
        data
    }

    #[test]
    fn simulate_writes_samples_with_reproducible_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let data = clean_dataset(dir.path(), 3, 60);
        let mut config = PipelineConfig::default();
        config.dataset_dir = Some(data);
        config.output_dir = dir.path().join("sim");
        config.seed = 100;
        config.corruption = CorruptionConfig {
            uniform_missing_ratio: 0.2,
            uniform_outlier_ratio: 0.1,
            noise_sigma: 0.1,
            ..CorruptionConfig::none()
        };

        let manifest = make_simulated_dataset(&config).unwrap();
        assert_eq!(manifest.samples.len(), 3);
        for (i, sample) in manifest.samples.iter().enumerate() {
            assert_eq!(sample.seed, 100 + i as u64);
            assert!(sample.error.is_none());
            assert_eq!(sample.original_points, 60);
            // round(0.2 * 60) removed, round(0.1 * 60) injected.
            assert_eq!(sample.removed, 12);
            assert_eq!(sample.outliers, 6);
            assert_eq!(sample.corrupted_points, 60 - 12 + 6);
            let out = config.output_dir.join(sample.output.as_ref().unwrap());
            assert!(out.exists());
            let sidecar = read_ground_truth(
                &config.output_dir.join(sample.ground_truth.as_ref().unwrap()),
            )
            .unwrap();
            assert_eq!(sidecar.ground_truth.removed_indices.len(), 12);
            assert_eq!(sidecar.ground_truth.original_point_count, 60);
        }

        // Same config, fresh run: byte-identical manifest.
        let bytes1 = std::fs::read(config.output_dir.join("manifest.json")).unwrap();
        config.output_dir = dir.path().join("sim2");
        make_simulated_dataset(&config).unwrap();
        let bytes2 = std::fs::read(config.output_dir.join("manifest.json")).unwrap();
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn empty_corruption_config_passes_clouds_through() {
        let dir = tempfile::tempdir().unwrap();
        let data = clean_dataset(dir.path(), 2, 40);
        let mut config = PipelineConfig::default();
        config.dataset_dir = Some(data.clone());
        config.output_dir = dir.path().join("sim");
        config.corruption = CorruptionConfig::none();

        let manifest = make_simulated_dataset(&config).unwrap();
        for sample in &manifest.samples {
            assert_eq!(sample.removed, 0);
            assert_eq!(sample.outliers, 0);
            assert_eq!(sample.corrupted_points, sample.original_points);
        }
        let original = read_point_cloud(&data.join("ear_00.ply")).unwrap();
        let out = read_point_cloud(&config.output_dir.join("ear_00.ply")).unwrap();
        assert_eq!(original.points(), out.points());
    }

    #[test]
    fn unreadable_inputs_become_manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        let data = clean_dataset(dir.path(), 2, 30);
        std::fs::write(data.join("broken.ply"), b"not a ply file").unwrap();
        let mut config = PipelineConfig::default();
        config.dataset_dir = Some(data);
        config.output_dir = dir.path().join("sim");

        let manifest = make_simulated_dataset(&config).unwrap();
        assert_eq!(manifest.samples.len(), 3);
        let broken =
            manifest.samples.iter().find(|s| s.name == "broken").expect("listed");
        assert!(broken.error.is_some());
        assert!(broken.output.is_none());
        assert!(manifest.samples.iter().filter(|s| s.error.is_none()).count() == 2);
    }

    #[test]
    fn build_models_splits_trains_and_writes_containers() {
        let dir = tempfile::tempdir().unwrap();
        let data = clean_dataset(dir.path(), 6, 45);
        let mut config = PipelineConfig::default();
        config.dataset_dir = Some(data);
        config.output_dir = dir.path().join("models");
        config.seed = 5;
        config.models.holdout_fraction = 0.34;
        config.models.pca_components = 3;
        config.models.gp_rank = 12;
        config.models.gp_sigma = 3.0;
        config.models.gp_amplitude = 0.5;

        let manifest = build_models(&config).unwrap();
        // round(0.34 * 6) = 2 held out, 4 trained.
        assert_eq!(manifest.holdout.len(), 2);
        assert_eq!(manifest.train.len(), 4);
        let mut all: Vec<String> =
            manifest.train.iter().chain(&manifest.holdout).cloned().collect();
        all.sort();
        let expected: Vec<String> = (0..6).map(|i| format!("ear_{i:02}")).collect();
        assert_eq!(all, expected);
        assert_eq!(manifest.pca_components_used, 3);
        assert_eq!(manifest.gp_rank_used, 12);

        match read_model(&config.output_dir.join("pca.sfm")).unwrap() {
            ShapeModelFile::Pca(m) => {
                assert_eq!(m.point_count(), 45);
                assert_eq!(m.components(), 3);
            }
            ShapeModelFile::Gp(_) => panic!("pca.sfm holds a gp model"),
        }
        match read_model(&config.output_dir.join("gp.sfm")).unwrap() {
            ShapeModelFile::Gp(m) => assert_eq!(m.rank(), 12),
            ShapeModelFile::Pca(_) => panic!("gp.sfm holds a pca model"),
        }
        assert!(config.output_dir.join("mean_shape.ply").exists());

        // Deterministic split.
        let bytes1 = std::fs::read(config.output_dir.join("models.json")).unwrap();
        config.output_dir = dir.path().join("models2");
        build_models(&config).unwrap();
        let bytes2 = std::fs::read(config.output_dir.join("models.json")).unwrap();
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn holdout_zero_trains_on_everything() {
        let dir = tempfile::tempdir().unwrap();
        let data = clean_dataset(dir.path(), 4, 30);
        let mut config = PipelineConfig::default();
        config.dataset_dir = Some(data);
        config.output_dir = dir.path().join("models");
        config.models.holdout_fraction = 0.0;
        config.models.pca_components = 2;
        config.models.gp_rank = 6;

        let manifest = build_models(&config).unwrap();
        assert!(manifest.holdout.is_empty());
        assert_eq!(manifest.train.len(), 4);
    }

    #[test]
    fn oversized_ranks_are_capped_at_the_data_rank() {
        let dir = tempfile::tempdir().unwrap();
        let data = clean_dataset(dir.path(), 3, 20);
        let mut config = PipelineConfig::default();
        config.dataset_dir = Some(data);
        config.output_dir = dir.path().join("models");
        config.models.holdout_fraction = 0.0;
        config.models.pca_components = 50;
        config.models.gp_rank = 10_000;

        let manifest = build_models(&config).unwrap();
        assert_eq!(manifest.pca_components_used, 2, "3 train shapes carry rank 2");
        assert_eq!(manifest.gp_rank_used, 60, "20 points bound the basis at 60");
    }

    #[test]
    fn too_small_datasets_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let data = clean_dataset(dir.path(), 2, 20);
        let mut config = PipelineConfig::default();
        config.dataset_dir = Some(data);
        config.output_dir = dir.path().join("models");
        config.models.holdout_fraction = 0.4; // rounds to 1, leaving 1
        let err = build_models(&config).unwrap_err();
        assert!(err.to_string().contains("fewer than 2"), "{err}");
    }

    #[test]
    fn crop_extracts_the_region() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = crate::geometry::PointCloud::new(
            (0..10).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect(),
        )
        .unwrap();
        let input = dir.path().join("full.ply");
        write_point_cloud(&input, &cloud).unwrap();
        let region = RegionSpec::Sphere { center: Point3::new(2.0, 0.0, 0.0), radius: 1.5 };
        let output = dir.path().join("cropped.ply");
        let kept = crop_cloud(&input, &region, &output).unwrap();
        assert_eq!(kept, 3);
        let cropped = read_point_cloud(&output).unwrap();
        let xs: Vec<f64> = cropped.points().iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn region_files_parse_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("region.json");
        std::fs::write(
            &path,
            b"{\"kind\": \"sphere\", \"center\": [1.0, 2.0, 3.0], \"radius\": 4.5}",
        )
        .unwrap();
        let region = read_region(&path).unwrap();
        assert_eq!(
            region,
            RegionSpec::Sphere { center: Point3::new(1.0, 2.0, 3.0), radius: 4.5 }
        );
        std::fs::write(&path, b"{\"kind\": \"sphere\", \"center\": [0,0,0], \"radius\": -1}")
            .unwrap();
        assert!(read_region(&path).is_err(), "negative radius must not validate");
    }
}
