use std::path::PathBuf;

use uncmap_core::estimator::{estimate_uncertain_map, DualHeadModel};
use uncmap_core::harness::svg::render_svg;
use uncmap_core::noise_sim::{corrupt_observation, generate_scene, Layout, NoiseConfig};
use uncmap_core::predictor::{predict, tokens_from_map, PredictorModel, Variant};

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/intersection_seed3.svg")
}

fn render_fixed_scene() -> String {
    let scene = generate_scene(Layout::Intersection, 3);
    let obs = corrupt_observation(&scene, &NoiseConfig::default());
    let ids: Vec<u64> = scene.elements.iter().map(|e| e.id).collect();
    let map = estimate_uncertain_map(&DualHeadModel::init(5, 0.1), &obs, &ids).unwrap();
    let tokens = tokens_from_map(&map);
    let predictor = PredictorModel::init(6, Variant::Both);
    let preds: Vec<_> = scene
        .agents
        .iter()
        .map(|a| predict(&predictor, &a.history.samples, &tokens).unwrap())
        .collect();
    render_svg(&scene, &map, Some(&preds)).unwrap()
}

#[test]
fn fixed_scene_matches_golden_svg() {
    let golden = std::fs::read_to_string(golden_path()).expect("golden SVG is checked in");
    assert!(render_fixed_scene() == golden, "rendered SVG differs from {}", golden_path().display());
}

/// Rewrites the golden file; run with `--ignored` after an intended change.
#[test]
#[ignore]
fn regenerate_golden_svg() {
    std::fs::write(golden_path(), render_fixed_scene()).unwrap();
}
