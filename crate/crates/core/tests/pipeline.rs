use uncmap_core::harness::{
    cmd_ablate, cmd_estimate, cmd_eval, cmd_gen_data, cmd_render, cmd_train_map, cmd_train_pred, generate_splits, load_dataset,
    run_map_stage, run_variant, ExperimentConfig, Split,
};
use uncmap_core::predictor::Variant;
use uncmap_core::Error;

fn small(dir: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        master_seed: 21,
        train_scenes: 12,
        val_scenes: 2,
        test_scenes: 4,
        output_dir: dir.to_path_buf(),
        ..Default::default()
    };
    cfg.map_train.epochs = 4;
    cfg.predictor_train.epochs = 3;
    cfg
}

#[test]
fn pos_only_ignores_delta_c_bit_for_bit() {
    let cfg = small(std::path::Path::new("unused"));
    let data = generate_splits(&cfg).unwrap();
    let stage = run_map_stage(&cfg, &data).unwrap();
    let mut scrambled = run_map_stage(&cfg, &data).unwrap();
    for scene in scrambled.train.iter_mut().chain(scrambled.test.iter_mut()) {
        for (i, t) in scene.tokens.iter_mut().enumerate() {
            t.delta_c = [0.9, 0.1 * (i % 7) as f64, 0.5, 0.0];
        }
    }
    let (m1, trace1, r1) = run_variant(&cfg, &stage, Variant::PosOnly).unwrap();
    let (m2, trace2, r2) = run_variant(&cfg, &scrambled, Variant::PosOnly).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(trace1, trace2);
    assert_eq!(r1, r2);
    let (_, _, both) = run_variant(&cfg, &scrambled, Variant::Both).unwrap();
    assert_ne!(both, r1);
}

#[test]
fn file_commands_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    assert!(matches!(cmd_ablate(&cfg), Err(Error::MissingDataset(_))));
    let manifest = cmd_gen_data(&cfg).unwrap();
    assert_eq!(manifest.files.len(), 18);
    let (data, _) = load_dataset(dir.path()).unwrap();
    assert_eq!(
        (data.train.scenes.len(), data.val.scenes.len(), data.test.scenes.len()),
        (12, 2, 4)
    );

    let trace = cmd_train_map(&cfg).unwrap();
    assert_eq!(trace.0.len(), 5);
    let est = cmd_estimate(&cfg, Split::Test).unwrap();
    assert!(std::fs::read_to_string(est).unwrap().contains("\"delta_c\""));
    cmd_train_pred(&cfg).unwrap();
    let report = cmd_eval(&cfg).unwrap();
    assert!(report.n_agents > 0 && report.min_ade.is_finite());
    for name in ["metrics_both.csv", "metrics_both.json", "predictions_both.csv", "map_loss.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let svg = std::fs::read_to_string(cmd_render(&cfg, Split::Test, 1).unwrap()).unwrap();
    assert!(svg.contains("<ellipse") && svg.contains("#17becf"));

    let table = cmd_ablate(&cfg).unwrap();
    let csv = table.to_csv();
    assert!(csv.contains(&format!("# data_checksum {}", manifest.data_checksum)));
    assert!(csv.contains(&format!("# config_hash {}", cfg.hash().unwrap())));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 5);
    for v in Variant::ALL {
        assert!(table.row(v).is_some());
    }
}
