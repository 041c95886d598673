//! In-memory experiment stages: data, map estimation, forecasting, scoring.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{self, estimate_uncertain_map, map_samples, DualHeadModel, LossTrace, UncertainMapElement};
use crate::map_model::{Point2, Scene};
use crate::metrics::{evaluate, MetricReport};
use crate::noise_sim::{corrupt_observation, generate_scene, NoiseConfig, Observation};
use crate::predictor::{predict_scenes, tokens_from_map, train_predictor, PredictionScene, PredictorModel, PredictorTrace, Variant};

use super::config::{ExperimentConfig, Split};

/// Scenes of one split with their noisy observations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SplitData {
    pub scenes: Vec<Scene>,
    pub observations: Vec<Vec<Observation>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataSplits {
    pub train: SplitData,
    pub val: SplitData,
    pub test: SplitData,
}

impl DataSplits {
    pub fn get(&self, split: Split) -> &SplitData {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn get_mut(&mut self, split: Split) -> &mut SplitData {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }
}

pub fn generate_split(cfg: &ExperimentConfig, split: Split, noise: &NoiseConfig) -> SplitData {
    let scenes: Vec<Scene> = (0..cfg.scene_count(split))
        .map(|i| generate_scene(cfg.layout_for(i), cfg.scene_seed(split, i)))
        .collect();
    let observations = scenes.iter().map(|s| corrupt_observation(s, noise)).collect();
    SplitData { scenes, observations }
}

/// Ground-truth scenes and corrupted observations for all three splits.
pub fn generate_splits(cfg: &ExperimentConfig) -> Result<DataSplits> {
    cfg.validate()?;
    let noise = cfg.stage_noise();
    Ok(DataSplits {
        train: generate_split(cfg, Split::Train, &noise),
        val: generate_split(cfg, Split::Val, &noise),
        test: generate_split(cfg, Split::Test, &noise),
    })
}

pub fn train_map_model(cfg: &ExperimentConfig, train: &SplitData) -> Result<(DualHeadModel, LossTrace)> {
    let mut samples = Vec::new();
    for (scene, obs) in train.scenes.iter().zip(&train.observations) {
        samples.extend(map_samples(scene, obs)?);
    }
    estimator::train(&samples, &cfg.stage_map_train())
}

/// Uncertain map of every scene in the split.
pub fn estimate_split(model: &DualHeadModel, data: &SplitData) -> Result<Vec<Vec<UncertainMapElement>>> {
    data.scenes
        .iter()
        .zip(&data.observations)
        .map(|(scene, obs)| {
            let ids: Vec<u64> = scene.elements.iter().map(|e| e.id).collect();
            estimate_uncertain_map(model, obs, &ids)
        })
        .collect()
}

pub fn prediction_scenes(data: &SplitData, maps: &[Vec<UncertainMapElement>]) -> Result<Vec<PredictionScene>> {
    if data.scenes.len() != maps.len() {
        return Err(Error::LengthMismatch {
            expected: data.scenes.len(),
            actual: maps.len(),
        });
    }
    Ok(data
        .scenes
        .iter()
        .zip(maps)
        .map(|(s, m)| PredictionScene {
            scene_id: s.seed,
            tokens: tokens_from_map(m),
            agents: s.agents.clone(),
        })
        .collect())
}

/// Vertex-averaged uncertainty of a set of estimated maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySummary {
    pub mean_beta: f64,
    /// Mean over vertices and classes of Δc.
    pub mean_delta_c: f64,
    pub vertices: usize,
}

pub fn summarize_uncertainty(maps: &[Vec<UncertainMapElement>]) -> Result<UncertaintySummary> {
    let mut n = 0usize;
    let mut beta = 0.0;
    let mut dc = 0.0;
    for v in maps.iter().flatten().flat_map(|e| &e.vertices) {
        n += 1;
        beta += v.beta;
        dc += v.delta_c.iter().sum::<f64>() / v.delta_c.len() as f64;
    }
    if n == 0 {
        return Err(Error::Empty("no estimated vertices".into()));
    }
    Ok(UncertaintySummary {
        mean_beta: beta / n as f64,
        mean_delta_c: dc / n as f64,
        vertices: n,
    })
}

/// Corrupt `scenes` afresh with `noise` and summarize what `model` makes of them.
pub fn uncertainty_under_noise(model: &DualHeadModel, scenes: &[Scene], noise: &NoiseConfig) -> Result<UncertaintySummary> {
    noise.validate()?;
    let data = SplitData {
        scenes: scenes.to_vec(),
        observations: scenes.iter().map(|s| corrupt_observation(s, noise)).collect(),
    };
    summarize_uncertainty(&estimate_split(model, &data)?)
}

pub fn evaluate_predictor(model: &PredictorModel, scenes: &[PredictionScene]) -> Result<MetricReport> {
    let preds: Vec<_> = predict_scenes(model, scenes)?.into_iter().flatten().collect();
    let gts: Vec<Vec<Point2>> = scenes
        .iter()
        .flat_map(|s| s.agents.iter().map(|a| a.future.samples.clone()))
        .collect();
    evaluate(&preds, &gts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub report: MetricReport,
}

/// Four predictor variants trained and scored on identical data and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub config_hash: String,
    pub data_checksum: String,
    pub version: String,
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&MetricReport> {
        self.rows.iter().find(|r| r.variant == v).map(|r| &r.report)
    }

    /// CSV table preceded by a `#` provenance block.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# config_hash {}", self.config_hash).unwrap();
        writeln!(out, "# data_checksum {}", self.data_checksum).unwrap();
        writeln!(out, "# version {}", self.version).unwrap();
        writeln!(out, "variant,unc_pos,unc_sem,min_ade,min_fde,miss_rate,n_agents").unwrap();
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{}",
                r.variant,
                r.variant.uses_beta() as u8,
                r.variant.uses_delta_c() as u8,
                r.report.csv_row()
            )
            .unwrap();
        }
        out
    }
}

/// Estimated maps ready for the forecasting stage.
pub struct MapStage {
    pub model: DualHeadModel,
    pub trace: LossTrace,
    pub train: Vec<PredictionScene>,
    pub test: Vec<PredictionScene>,
}

pub fn run_map_stage(cfg: &ExperimentConfig, data: &DataSplits) -> Result<MapStage> {
    let (model, trace) = train_map_model(cfg, &data.train)?;
    let train = prediction_scenes(&data.train, &estimate_split(&model, &data.train)?)?;
    let test = prediction_scenes(&data.test, &estimate_split(&model, &data.test)?)?;
    Ok(MapStage {
        model,
        trace,
        train,
        test,
    })
}

pub fn run_variant(cfg: &ExperimentConfig, stage: &MapStage, variant: Variant) -> Result<(PredictorModel, PredictorTrace, MetricReport)> {
    let (model, trace) = train_predictor(&stage.train, variant, &cfg.stage_predictor_train())?;
    let report = evaluate_predictor(&model, &stage.test)?;
    Ok((model, trace, report))
}

pub fn run_ablation(cfg: &ExperimentConfig, data: &DataSplits, data_checksum: &str) -> Result<AblationTable> {
    let stage = run_map_stage(cfg, data)?;
    let mut rows = Vec::with_capacity(Variant::ALL.len());
    for variant in Variant::ALL {
        let (_, _, report) = run_variant(cfg, &stage, variant)?;
        rows.push(AblationRow { variant, report });
    }
    Ok(AblationTable {
        rows,
        config_hash: cfg.hash()?,
        data_checksum: data_checksum.to_string(),
        version: crate::VERSION.to_string(),
    })
}
