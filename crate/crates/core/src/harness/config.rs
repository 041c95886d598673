use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimator::TrainConfig;
use crate::nn::OptimizerKind;
use crate::noise_sim::{Layout, NoiseConfig};
use crate::predictor::{PredictorTrainConfig, Variant};
use crate::rng::{sub_seed, Stream};

/// Everything one experiment needs. Nested `seed` fields are ignored: every
/// stage seed is derived from `master_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    /// Layouts cycled over scene indices.
    pub layouts: Vec<Layout>,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub test_scenes: usize,
    pub noise: NoiseConfig,
    pub map_train: TrainConfig,
    pub predictor_train: PredictorTrainConfig,
    pub unc_pos: bool,
    pub unc_sem: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 7,
            layouts: Layout::ALL.to_vec(),
            train_scenes: 160,
            val_scenes: 20,
            test_scenes: 60,
            noise: NoiseConfig::default(),
            map_train: TrainConfig {
                learning_rate: 1e-3,
                epochs: 60,
                optimizer: OptimizerKind::Adam,
                ..TrainConfig::default()
            },
            predictor_train: PredictorTrainConfig::default(),
            unc_pos: true,
            unc_sem: true,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, n) in [
            ("train_scenes", self.train_scenes),
            ("val_scenes", self.val_scenes),
            ("test_scenes", self.test_scenes),
        ] {
            if n == 0 {
                return Err(Error::config(field, "scene count must be positive"));
            }
        }
        if self.layouts.is_empty() {
            return Err(Error::config("layouts", "at least one layout is required"));
        }
        self.noise.validate()?;
        self.map_train.validate()?;
        self.predictor_train.validate()?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn variant(&self) -> Variant {
        Variant::from_flags(self.unc_pos, self.unc_sem)
    }

    pub fn scene_count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_scenes,
            Split::Val => self.val_scenes,
            Split::Test => self.test_scenes,
        }
    }

    /// Generator seed of scene `index` in `split`.
    pub fn scene_seed(&self, split: Split, index: usize) -> u64 {
        sub_seed(self.master_seed, Stream::SceneGen, ((split as u64) << 32) | index as u64)
    }

    pub fn layout_for(&self, index: usize) -> Layout {
        self.layouts[index % self.layouts.len()]
    }

    /// Noise config with the corruption seed taken from the master seed.
    pub fn stage_noise(&self) -> NoiseConfig {
        NoiseConfig {
            seed: sub_seed(self.master_seed, Stream::Corruption, 0),
            ..self.noise.clone()
        }
    }

    pub fn stage_map_train(&self) -> TrainConfig {
        TrainConfig {
            seed: sub_seed(self.master_seed, Stream::MapInit, 0),
            ..self.map_train.clone()
        }
    }

    pub fn stage_predictor_train(&self) -> PredictorTrainConfig {
        PredictorTrainConfig {
            seed: sub_seed(self.master_seed, Stream::PredInit, 0),
            ..self.predictor_train.clone()
        }
    }

    /// SHA-256 of the canonical TOML serialization, ignoring `output_dir`.
    pub fn hash(&self) -> Result<String> {
        let canonical = ExperimentConfig {
            output_dir: PathBuf::new(),
            ..self.clone()
        };
        Ok(hex::encode(Sha256::digest(canonical.to_toml()?.as_bytes())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
        let moved = ExperimentConfig {
            output_dir: "elsewhere".into(),
            ..cfg.clone()
        };
        assert_eq!(moved.hash().unwrap(), cfg.hash().unwrap());
        let reseeded = ExperimentConfig { master_seed: 1, ..cfg };
        assert_ne!(reseeded.hash().unwrap(), moved.hash().unwrap());
    }

    #[test]
    fn zero_scene_count_names_the_field() {
        let cfg = ExperimentConfig {
            val_scenes: 0,
            ..Default::default()
        };
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "val_scenes"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let cfg = ExperimentConfig::from_toml("master_seed = 3\ntrain_scenes = 5\n[noise]\npos_scale_b = 0.1\n").unwrap();
        assert_eq!(cfg.train_scenes, 5);
        assert_eq!(cfg.noise.pos_scale_b, 0.1);
        assert_eq!(cfg.test_scenes, ExperimentConfig::default().test_scenes);
        assert!(ExperimentConfig::from_toml("bogus = 1\n").is_err());
    }

    #[test]
    fn stage_seeds_follow_the_master_seed() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            master_seed: 8,
            ..a.clone()
        };
        assert_ne!(a.stage_noise().seed, b.stage_noise().seed);
        assert_ne!(a.stage_map_train().seed, a.stage_predictor_train().seed);
        assert_ne!(a.scene_seed(Split::Train, 0), a.scene_seed(Split::Test, 0));
    }
}
