//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use uncmap_core::harness::verify::{
    estimator_grad_error, fusion_errors, kl_oracle_gap, metric_cases, predictor_grad_error, FUSION_PAIRS, GRAD_MODELS, KL_PAIRS,
    PROPORTIONALITY_GRID, PROPORTIONALITY_SAMPLES,
};
use uncmap_core::harness::{
    cmd_ablate, cmd_gen_data, generate_splits, run_ablation, train_map_model, uncertainty_under_noise, ExperimentConfig,
};
use uncmap_core::noise_sim::confusion_with_flip;
use uncmap_core::predictor::Variant;
use uncmap_core::uncertainty::{verify_proportionality, Probe};

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed <= Duration::from_secs(limit_s)
}

fn kl_oracle() -> Outcome {
    let t = Instant::now();
    let gap = kl_oracle_gap(0, KL_PAIRS, false);
    let el = t.elapsed();
    Outcome {
        passed: gap <= 1e-6 && within(el, 5),
        detail: format!("max |closed − quadrature| = {gap:.3e} over {KL_PAIRS} pairs (≤ 1e-6), {:.2}s (< 5s)", el.as_secs_f64()),
    }
}

fn proportionality() -> Outcome {
    let t = Instant::now();
    let fit = verify_proportionality(Probe::Linear { x: 1.0 }, 0.0, &PROPORTIONALITY_GRID, PROPORTIONALITY_SAMPLES, 0).expect("valid grid");
    let el = t.elapsed();
    let expected = 2.0 / std::f64::consts::PI.sqrt();
    let rel = (fit.slope / expected - 1.0).abs();
    Outcome {
        passed: fit.correlation > 0.99 && rel <= 0.02 && within(el, 30),
        detail: format!(
            "correlation {:.6} (> 0.99), slope {:.4} vs {expected:.4} ({:.2}% off, ≤ 2%), {:.2}s (< 30s)",
            fit.correlation,
            fit.slope,
            100.0 * rel,
            el.as_secs_f64()
        ),
    }
}

fn fusion() -> Outcome {
    let (simplex, range, agree) = fusion_errors(0, FUSION_PAIRS);
    Outcome {
        passed: simplex <= 1e-12 && range == 0.0 && agree == 0.0,
        detail: format!(
            "{FUSION_PAIRS} pairs: simplex error {simplex:.2e} (≤ 1e-12), Δc outside [0,1] by {range:e}, agreement Δc max {agree:e}"
        ),
    }
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let est = estimator_grad_error(0, GRAD_MODELS).expect("grad check runs");
    let pred = predictor_grad_error(0, GRAD_MODELS).expect("grad check runs");
    let el = t.elapsed();
    Outcome {
        passed: est < 1e-4 && pred < 1e-4 && within(el, 60),
        detail: format!(
            "max relative error: dual-head {est:.3e}, predictor {pred:.3e} over {GRAD_MODELS} models each (< 1e-4), {:.1}s (< 60s)",
            el.as_secs_f64()
        ),
    }
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        v.iter()
            .map(|x| {
                let below = v.iter().filter(|y| *y < x).count() as f64;
                let ties = v.iter().filter(|y| *y == x).count() as f64;
                below + 0.5 * (ties - 1.0)
            })
            .collect()
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// One estimator trained at the reference noise, evaluated on the test
/// scenes re-corrupted at each grid point.
fn noise_monotonicity() -> Outcome {
    let t = Instant::now();
    let mut cfg = ExperimentConfig::default();
    cfg.noise.pos_scale_b = 0.2;
    cfg.noise.confusion = confusion_with_flip(0.1);
    let data = generate_splits(&cfg).expect("data");
    let (model, _) = train_map_model(&cfg, &data.train).expect("training");
    let base = cfg.stage_noise();

    let grid_b = [0.05, 0.1, 0.2, 0.4];
    let betas: Vec<f64> = grid_b
        .iter()
        .map(|&b| {
            let mut n = base.clone();
            n.pos_scale_b = b;
            uncertainty_under_noise(&model, &data.test.scenes, &n).expect("estimate").mean_beta
        })
        .collect();
    let grid_eps = [0.0, 0.1, 0.3];
    let dcs: Vec<f64> = grid_eps
        .iter()
        .map(|&e| {
            let mut n = base.clone();
            n.confusion = confusion_with_flip(e);
            uncertainty_under_noise(&model, &data.test.scenes, &n).expect("estimate").mean_delta_c
        })
        .collect();
    let el = t.elapsed();
    let monotone = betas.windows(2).all(|w| w[1] >= w[0]);
    let rho = spearman(&grid_b, &betas);
    let strict = dcs.windows(2).all(|w| w[1] > w[0]);
    Outcome {
        passed: monotone && rho > 0.8 && strict && within(el, 300),
        detail: format!(
            "mean β over b {grid_b:?}: {:?} (non-decreasing {monotone}, Spearman {rho:.3} > 0.8); mean Δc over ε {grid_eps:?}: {:?} (strictly increasing {strict}); {:.0}s (< 300s)",
            betas.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
            dcs.iter().map(|v| format!("{v:.5}")).collect::<Vec<_>>(),
            el.as_secs_f64()
        ),
    }
}

fn ablation_ordering() -> Outcome {
    let t = Instant::now();
    let seeds = [1u64, 2, 3];
    let mut mean = [0.0; 4];
    for &seed in &seeds {
        let mut cfg = ExperimentConfig {
            master_seed: seed,
            ..Default::default()
        };
        cfg.noise.pos_scale_b = 0.3;
        cfg.noise.confusion = confusion_with_flip(0.2);
        let data = generate_splits(&cfg).expect("data");
        let table = run_ablation(&cfg, &data, "in-memory").expect("ablation");
        for (i, v) in Variant::ALL.into_iter().enumerate() {
            mean[i] += table.row(v).expect("row").min_ade / seeds.len() as f64;
        }
    }
    let el = t.elapsed();
    let [base, pos, sem, both] = mean;
    let c1 = both <= pos;
    let c2 = sem <= base;
    let c3 = both <= 0.98 * base;
    Outcome {
        passed: c1 && c2 && c3 && within(el, 600),
        detail: format!(
            "mean minADE over seeds {seeds:?}: baseline {base:.4}, pos_only {pos:.4}, sem_only {sem:.4}, both {both:.4}; \
             both ≤ pos_only {c1}, sem_only ≤ baseline {c2}, both ≤ 0.98·baseline {c3} (both/baseline = {:+.2}%); {:.0}s (< 600s)",
            100.0 * (both / base - 1.0),
            el.as_secs_f64()
        ),
    }
}

fn metric_units() -> Outcome {
    let (ade, fde, at_two, past_two) = metric_cases().expect("metric cases");
    Outcome {
        passed: ade == 1.0 && fde == 5.0 && !at_two && past_two,
        detail: format!("constant offset ADE {ade} (= 1.0), 3-4-5 FDE {fde} (= 5.0), miss at 2.0 m {at_two}, miss just past 2.0 m {past_two}"),
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut cfg = ExperimentConfig {
        master_seed: 11,
        train_scenes: 24,
        val_scenes: 4,
        test_scenes: 8,
        output_dir: dir.path().to_path_buf(),
        ..Default::default()
    };
    cfg.map_train.epochs = 8;
    cfg.predictor_train.epochs = 6;
    cmd_gen_data(&cfg).expect("gen-data");
    let csv = dir.path().join(uncmap_core::harness::ABLATION_CSV);
    cmd_ablate(&cfg).expect("ablate");
    let first = std::fs::read(&csv).expect("first table");
    cmd_ablate(&cfg).expect("ablate");
    let second = std::fs::read(&csv).expect("second table");
    Outcome {
        passed: first == second && !first.is_empty(),
        detail: format!("two ablate runs with master seed {}: {} bytes each, identical {}", cfg.master_seed, first.len(), first == second),
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("1 laplace-kl oracle agreement", kl_oracle),
        ("2 proportionality", proportionality),
        ("3 semantic fusion exactness", fusion),
        ("4 gradient correctness", gradients),
        ("5 noise to uncertainty monotonicity", noise_monotonicity),
        ("6 directional ablation", ablation_ordering),
        ("7 metric unit cases", metric_units),
        ("8 ablate determinism", determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let o = run();
        println!("{} criterion {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        failed += (!o.passed) as usize;
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
