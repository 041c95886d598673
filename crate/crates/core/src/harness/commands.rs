//! File-backed commands. Every artifact lives under `ExperimentConfig::output_dir`.
//!
//! ```text
//! manifest.json                 split files with SHA-256 and the data checksum
//! {train,val,test}/NNNNN.scene  scene text format with observations
//! map_model.ckpt, map_loss.csv
//! estimates_<split>.json
//! predictor_<variant>.ckpt, predictor_<variant>_loss.csv
//! metrics_<variant>.{csv,json}, predictions_<variant>.csv
//! ablation.csv
//! render_<split>_<index>.svg
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimator::{DualHeadModel, LossTrace, UncertainMapElement};
use crate::map_model::{emit_dataset, parse_dataset, Dataset};
use crate::metrics::MetricReport;
use crate::predictor::{predict_scenes, predictions_to_csv, train_predictor, PredictorModel, PredictorTrace, Variant};

use super::config::{ExperimentConfig, Split};
use super::pipeline::{
    estimate_split, evaluate_predictor, generate_splits, prediction_scenes, run_ablation, train_map_model, DataSplits, SplitData,
};
use super::svg::render_svg;

pub const MANIFEST: &str = "manifest.json";
pub const MAP_CHECKPOINT: &str = "map_model.ckpt";
pub const ABLATION_CSV: &str = "ablation.csv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub split: Split,
    /// Relative to the dataset directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub master_seed: u64,
    pub config_hash: String,
    pub data_checksum: String,
    pub files: Vec<ManifestEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 over the `path sha256` lines of all entries, in manifest order.
pub fn data_checksum(files: &[ManifestEntry]) -> String {
    let mut s = String::new();
    for f in files {
        writeln!(s, "{} {}", f.path, f.sha256).unwrap();
    }
    sha256_hex(s.as_bytes())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_artifact(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    read_file(path)
}

/// Generate all splits and write them with a manifest.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<Manifest> {
    let data = generate_splits(cfg)?;
    let dir = &cfg.output_dir;
    let mut files = Vec::new();
    for split in Split::ALL {
        let d = data.get(split);
        for (i, (scene, obs)) in d.scenes.iter().zip(&d.observations).enumerate() {
            let path = format!("{}/{i:05}.scene", split.name());
            let text = emit_dataset(&Dataset {
                scene: scene.clone(),
                observations: obs.clone(),
            });
            write_file(&dir.join(&path), &text)?;
            files.push(ManifestEntry {
                split,
                sha256: sha256_hex(text.as_bytes()),
                path,
            });
        }
    }
    let manifest = Manifest {
        version: crate::VERSION.to_string(),
        master_seed: cfg.master_seed,
        config_hash: cfg.hash()?,
        data_checksum: data_checksum(&files),
        files,
    };
    write_file(&dir.join(MANIFEST), &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    Ok(manifest)
}

/// Read a dataset written by [`cmd_gen_data`], checking every file hash.
pub fn load_dataset(dir: &Path) -> Result<(DataSplits, Manifest)> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.exists() {
        return Err(Error::MissingDataset(dir.to_path_buf()));
    }
    let manifest: Manifest = serde_json::from_str(&read_file(&manifest_path)?)?;
    if data_checksum(&manifest.files) != manifest.data_checksum {
        return Err(Error::Inconsistent(format!("{} data checksum does not match its entries", manifest_path.display())));
    }
    let mut data = DataSplits::default();
    for entry in &manifest.files {
        let path = dir.join(&entry.path);
        let text = read_file(&path)?;
        if sha256_hex(text.as_bytes()) != entry.sha256 {
            return Err(Error::Inconsistent(format!("checksum mismatch for {}", path.display())));
        }
        let ds = parse_dataset(&text)?;
        let split: &mut SplitData = data.get_mut(entry.split);
        split.scenes.push(ds.scene);
        split.observations.push(ds.observations);
    }
    Ok((data, manifest))
}

fn load_map_model(dir: &Path) -> Result<DualHeadModel> {
    DualHeadModel::from_checkpoint(&read_artifact(&dir.join(MAP_CHECKPOINT))?)
}

fn predictor_path(dir: &Path, variant: Variant) -> PathBuf {
    dir.join(format!("predictor_{variant}.ckpt"))
}

pub fn cmd_train_map(cfg: &ExperimentConfig) -> Result<LossTrace> {
    cfg.validate()?;
    let (data, _) = load_dataset(&cfg.output_dir)?;
    let (model, trace) = train_map_model(cfg, &data.train)?;
    write_file(&cfg.output_dir.join(MAP_CHECKPOINT), &model.to_checkpoint())?;
    write_file(&cfg.output_dir.join("map_loss.csv"), &trace.to_csv())?;
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEstimate {
    pub scene_id: u64,
    pub elements: Vec<UncertainMapElement>,
}

/// Write the uncertain maps of one split as JSON; returns the file path.
pub fn cmd_estimate(cfg: &ExperimentConfig, split: Split) -> Result<PathBuf> {
    let (data, _) = load_dataset(&cfg.output_dir)?;
    let model = load_map_model(&cfg.output_dir)?;
    let d = data.get(split);
    let maps = estimate_split(&model, d)?;
    let out: Vec<SceneEstimate> = d
        .scenes
        .iter()
        .zip(maps)
        .map(|(s, elements)| SceneEstimate {
            scene_id: s.seed,
            elements,
        })
        .collect();
    let path = cfg.output_dir.join(format!("estimates_{}.json", split.name()));
    write_file(&path, &(serde_json::to_string_pretty(&out)? + "\n"))?;
    Ok(path)
}

/// Train the predictor variant selected by the config's ablation flags.
pub fn cmd_train_pred(cfg: &ExperimentConfig) -> Result<PredictorTrace> {
    cfg.validate()?;
    let (data, _) = load_dataset(&cfg.output_dir)?;
    let map = load_map_model(&cfg.output_dir)?;
    let scenes = prediction_scenes(&data.train, &estimate_split(&map, &data.train)?)?;
    let variant = cfg.variant();
    let (model, trace) = train_predictor(&scenes, variant, &cfg.stage_predictor_train())?;
    write_file(&predictor_path(&cfg.output_dir, variant), &model.to_checkpoint())?;
    write_file(&cfg.output_dir.join(format!("predictor_{variant}_loss.csv")), &trace.to_csv())?;
    Ok(trace)
}

/// Score the trained predictor on the test split.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<MetricReport> {
    let dir = &cfg.output_dir;
    let (data, _) = load_dataset(dir)?;
    let map = load_map_model(dir)?;
    let variant = cfg.variant();
    let model = PredictorModel::from_checkpoint(&read_artifact(&predictor_path(dir, variant))?)?;
    let scenes = prediction_scenes(&data.test, &estimate_split(&map, &data.test)?)?;
    let report = evaluate_predictor(&model, &scenes)?;
    let preds = predict_scenes(&model, &scenes)?;
    write_file(&dir.join(format!("metrics_{variant}.csv")), &report.to_csv())?;
    write_file(&dir.join(format!("metrics_{variant}.json")), &(report.to_json()? + "\n"))?;
    write_file(&dir.join(format!("predictions_{variant}.csv")), &predictions_to_csv(&scenes, &preds)?)?;
    Ok(report)
}

/// Run all four variants on the stored dataset and write the table.
pub fn cmd_ablate(cfg: &ExperimentConfig) -> Result<super::pipeline::AblationTable> {
    cfg.validate()?;
    let (data, manifest) = load_dataset(&cfg.output_dir)?;
    let table = run_ablation(cfg, &data, &manifest.data_checksum)?;
    write_file(&cfg.output_dir.join(ABLATION_CSV), &table.to_csv())?;
    Ok(table)
}

/// Render scene `index` of `split` with its estimated map, plus forecasts
/// when the configured predictor variant has a checkpoint.
pub fn cmd_render(cfg: &ExperimentConfig, split: Split, index: usize) -> Result<PathBuf> {
    let dir = &cfg.output_dir;
    let (data, _) = load_dataset(dir)?;
    let d = data.get(split);
    if index >= d.scenes.len() {
        return Err(Error::domain(format!(
            "scene index {index} out of range for {} split of {} scenes",
            split.name(),
            d.scenes.len()
        )));
    }
    let one = SplitData {
        scenes: vec![d.scenes[index].clone()],
        observations: vec![d.observations[index].clone()],
    };
    let map = load_map_model(dir)?;
    let maps = estimate_split(&map, &one)?;
    let ckpt = predictor_path(dir, cfg.variant());
    let predictions = if ckpt.exists() {
        let model = PredictorModel::from_checkpoint(&read_file(&ckpt)?)?;
        let scenes = prediction_scenes(&one, &maps)?;
        predict_scenes(&model, &scenes)?.pop()
    } else {
        None
    };
    let svg = render_svg(&one.scenes[0], &maps[0], predictions.as_deref())?;
    let path = dir.join(format!("render_{}_{index}.svg", split.name()));
    write_file(&path, &svg)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            train_scenes: 3,
            val_scenes: 1,
            test_scenes: 2,
            output_dir: dir.to_path_buf(),
            ..Default::default()
        }
    }

    #[test]
    fn gen_data_round_trips_and_is_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = cmd_gen_data(&tiny(a.path())).unwrap();
        let mb = cmd_gen_data(&tiny(b.path())).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(ma.files.len(), 6);
        let (data, m) = load_dataset(a.path()).unwrap();
        assert_eq!(m, ma);
        let fresh = generate_splits(&tiny(a.path())).unwrap();
        for split in Split::ALL {
            let (got, want) = (data.get(split), fresh.get(split));
            assert_eq!(got.scenes.len(), want.scenes.len());
            for i in 0..got.scenes.len() {
                let emit = |d: &SplitData| {
                    emit_dataset(&Dataset {
                        scene: d.scenes[i].clone(),
                        observations: d.observations[i].clone(),
                    })
                };
                assert_eq!(emit(got), emit(want));
            }
        }
    }

    #[test]
    fn missing_and_tampered_datasets_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::MissingDataset(_))));
        let m = cmd_gen_data(&tiny(dir.path())).unwrap();
        let victim = dir.path().join(&m.files[0].path);
        let text = fs::read_to_string(&victim).unwrap();
        fs::write(&victim, text.replacen("seed", "# edited\nseed", 1)).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Inconsistent(_))));
    }

    #[test]
    fn commands_need_their_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        assert!(matches!(cmd_ablate(&cfg), Err(Error::MissingDataset(_))));
        cmd_gen_data(&cfg).unwrap();
        assert!(matches!(cmd_estimate(&cfg, Split::Test), Err(Error::MissingArtifact(_))));
    }
}
