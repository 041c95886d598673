//! Fixtures shared by the benchmarks.

use uncmap_core::estimator::{estimate_uncertain_map, DualHeadModel, UncertainMapElement};
use uncmap_core::map_model::Scene;
use uncmap_core::noise_sim::{corrupt_observation, generate_scene, Layout, NoiseConfig, Observation};
use uncmap_core::predictor::{tokens_from_map, MapToken, PredictorModel, Variant};

pub struct Fixture {
    pub scene: Scene,
    pub observations: Vec<Observation>,
    pub map: Vec<UncertainMapElement>,
    pub tokens: Vec<MapToken>,
    pub estimator: DualHeadModel,
    pub predictor: PredictorModel,
}

/// An intersection scene with untrained but seeded models.
pub fn fixture() -> Fixture {
    let scene = generate_scene(Layout::Intersection, 11);
    let observations = corrupt_observation(&scene, &NoiseConfig::default());
    let estimator = DualHeadModel::init(1, 0.1);
    let ids: Vec<u64> = scene.elements.iter().map(|e| e.id).collect();
    let map = estimate_uncertain_map(&estimator, &observations, &ids).expect("fixture ids come from the scene");
    let tokens = tokens_from_map(&map);
    Fixture {
        scene,
        observations,
        map,
        tokens,
        estimator,
        predictor: PredictorModel::init(2, Variant::Both),
    }
}
