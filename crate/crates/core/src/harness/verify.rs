//! Self-check suite: closed forms against independent oracles, and analytic
//! gradients against finite differences.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::estimator::{grad_check, DualHeadModel, MapSample};
use crate::map_model::{normalize_to_bev, AgentTrack, PerceptionRange, Point2, FUTURE_LEN, NUM_CLASSES};
use crate::metrics::{is_miss, min_ade, min_fde};
use crate::nn::Layered;
use crate::noise_sim::{generate_scene, Layout, CONTEXT_WIDTH};
use crate::oracle::laplace_kl_by_quadrature;
use crate::predictor::{predictor_grad_check, MapToken, PredictionScene, PredictionSet, PredictorModel, Variant};
use crate::rng::{rng_from, sample_normal, sub_seed, StageRng, Stream};
use crate::uncertainty::{laplace_kl, semantic_fuse, verify_proportionality, ClassScores, Probe};

pub const KL_PAIRS: usize = 200;
pub const KL_TOLERANCE: f64 = 1e-6;
pub const PROPORTIONALITY_GRID: [f64; 4] = [0.05, 0.1, 0.2, 0.4];
pub const PROPORTIONALITY_SAMPLES: usize = 100_000;
pub const MIN_CORRELATION: f64 = 0.99;
pub const SLOPE_RELATIVE_TOLERANCE: f64 = 0.02;
pub const FUSION_PAIRS: usize = 10_000;
pub const FUSION_TOLERANCE: f64 = 1e-12;
pub const GRAD_MODELS: usize = 20;
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_EPSILON: f64 = 1e-5;
pub const PREDICTOR_GRAD_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Test hook: negate the closed-form KL so the oracle check must fail.
    pub flip_kl_sign: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    /// Human-readable bound the observed value is held to.
    pub tolerance: String,
    pub observed: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(s, "{tag} {:<28} observed {:<12.4e} tolerance {}", c.name, c.observed, c.tolerance).unwrap();
        }
        let n_ok = self.checks.iter().filter(|c| c.passed).count();
        writeln!(s, "{n_ok}/{} checks passed", self.checks.len()).unwrap();
        s
    }

    fn push(&mut self, name: &str, tolerance: String, observed: f64, passed: bool) {
        self.checks.push(Check {
            name: name.to_string(),
            tolerance,
            observed,
            passed,
        });
    }
}

pub fn stage_rng(seed: u64, index: u64) -> StageRng {
    rng_from(sub_seed(seed, Stream::Verify, index))
}

/// Largest |closed form − quadrature| over random Laplace pairs.
pub fn kl_oracle_gap(seed: u64, pairs: usize, flip_sign: bool) -> f64 {
    let mut rng = stage_rng(seed, 1000);
    let sign = if flip_sign { -1.0 } else { 1.0 };
    (0..pairs)
        .map(|_| {
            let p = (rng.random_range(-5.0..=5.0), rng.random_range(0.1..=5.0));
            let q = (p.0 + rng.random_range(-10.0..=10.0), rng.random_range(0.1..=5.0));
            let closed = sign * laplace_kl(p, q).expect("scales are positive");
            (closed - laplace_kl_by_quadrature(p, q)).abs()
        })
        .fold(0.0, f64::max)
}

fn random_simplex<R: Rng>(rng: &mut R) -> [f64; NUM_CLASSES] {
    let mut c = [0.0; NUM_CLASSES];
    for v in &mut c {
        *v = -(1.0 - rng.random::<f64>()).ln();
    }
    let s: f64 = c.iter().sum();
    c.map(|v| v / s)
}

/// Worst simplex deviation of c̄, worst excursion of Δc outside [0, 1] and
/// largest Δc on agreeing pairs.
pub fn fusion_errors(seed: u64, pairs: usize) -> (f64, f64, f64) {
    let mut rng = stage_rng(seed, 2000);
    let (mut simplex, mut range, mut agree) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..pairs {
        let a = ClassScores(random_simplex(&mut rng));
        let b = ClassScores(random_simplex(&mut rng));
        let f = semantic_fuse(&a, &b).expect("valid scores");
        simplex = simplex.max((f.c_bar.iter().sum::<f64>() - 1.0).abs());
        simplex = simplex.max(f.c_bar.iter().map(|&v| (-v).max(0.0)).fold(0.0, f64::max));
        range = range.max(f.delta_c.iter().map(|&d| (-d).max(d - 1.0).max(0.0)).fold(0.0, f64::max));
        let same = semantic_fuse(&a, &a).expect("valid scores");
        agree = agree.max(same.delta_c.iter().copied().fold(0.0, f64::max));
    }
    (simplex, range, agree)
}

fn random_params(rng: &mut StageRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| sample_normal(rng, 0.3)).collect()
}

fn random_map_samples(rng: &mut StageRng, n: usize) -> Vec<MapSample> {
    (0..n)
        .map(|_| {
            let mut context = [0.0; CONTEXT_WIDTH];
            for c in &mut context[..6] {
                *c = rng.random_range(-1.0..1.0);
            }
            let class = rng.random_range(0..NUM_CLASSES);
            context[6 + class] = 1.0;
            MapSample {
                context,
                target: Point2::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)),
                class,
            }
        })
        .collect()
}

/// Worst estimator grad-check error over `models` random dual-head models.
pub fn estimator_grad_error(seed: u64, models: usize) -> crate::Result<f64> {
    let mut worst = 0.0f64;
    for k in 0..models {
        let mut rng = stage_rng(seed, 3000 + k as u64);
        let mut m = DualHeadModel::zeros(0.1);
        let p = random_params(&mut rng, m.param_count());
        m.set_flat_params(&p);
        let samples = random_map_samples(&mut rng, 4);
        worst = worst.max(grad_check(&m, &samples, GRAD_EPSILON, 0.03)?.max_relative_error);
    }
    Ok(worst)
}

/// A generated scene with ground-truth tokens carrying random uncertainty.
pub fn random_prediction_scene(rng: &mut StageRng, seed: u64) -> PredictionScene {
    let scene = generate_scene(Layout::Curve, seed);
    let range = PerceptionRange::default();
    let tokens = scene
        .elements
        .iter()
        .flat_map(|e| e.points.iter())
        .step_by(3)
        .filter_map(|p| normalize_to_bev(*p, range).ok())
        .map(|mu| {
            let mut delta_c = [0.0; NUM_CLASSES];
            for d in &mut delta_c {
                *d = rng.random_range(0.0..0.5);
            }
            MapToken {
                mu,
                beta: rng.random_range(0.0..2.0),
                c_bar: random_simplex(rng),
                delta_c,
            }
        })
        .collect();
    let agents: Vec<AgentTrack> = scene.agents.into_iter().take(1).collect();
    PredictionScene {
        scene_id: seed,
        tokens,
        agents,
    }
}

/// Random predictor with every weight drawn from N(0, 1/fan_in) and biases
/// from N(0, 0.1²).
pub fn random_predictor(rng: &mut StageRng, variant: Variant) -> PredictorModel {
    let mut m = PredictorModel::zeros(variant);
    for layer in m.layers_mut() {
        let sd = 1.0 / (layer.in_dim as f64).sqrt();
        layer.w.iter_mut().for_each(|w| *w = sample_normal(rng, sd));
        layer.b.iter_mut().for_each(|b| *b = sample_normal(rng, 0.1));
    }
    m
}

/// Worst predictor grad-check error over `models` random predictors.
pub fn predictor_grad_error(seed: u64, models: usize) -> crate::Result<f64> {
    let mut worst = 0.0f64;
    for k in 0..models {
        let mut rng = stage_rng(seed, 4000 + k as u64);
        let m = random_predictor(&mut rng, Variant::ALL[k % Variant::ALL.len()]);
        let scene = random_prediction_scene(&mut rng, k as u64);
        worst = worst.max(predictor_grad_check(&m, &[scene], PREDICTOR_GRAD_EPSILON)?.max_relative_error);
    }
    Ok(worst)
}

fn straight(offset: Point2, len: usize) -> Vec<Point2> {
    (1..=len).map(|t| Point2::new(t as f64, 0.0) + offset).collect()
}

/// Hand-built metric cases: `(constant-offset ADE, 3-4-5 FDE, miss at 2.0 m, miss at 2.0 m + 1e-9)`.
pub fn metric_cases() -> crate::Result<(f64, f64, bool, bool)> {
    let gt = straight(Point2::ZERO, FUTURE_LEN);
    let one = |modes: Vec<Vec<Point2>>| PredictionSet {
        scores: vec![1.0 / modes.len() as f64; modes.len()],
        modes,
    };
    let offset = one(vec![straight(Point2::new(0.0, 1.0), FUTURE_LEN)]);
    let mut end = gt.clone();
    end[FUTURE_LEN - 1] = end[FUTURE_LEN - 1] + Point2::new(3.0, 4.0);
    let fde_case = one(vec![end]);
    let at_two = one(vec![straight(Point2::new(0.0, 2.0), FUTURE_LEN)]);
    let past_two = one(vec![straight(Point2::new(0.0, 2.0 + 1e-9), FUTURE_LEN)]);
    Ok((
        min_ade(&offset, &gt)?,
        min_fde(&fde_case, &gt)?,
        is_miss(&at_two, &gt)?,
        is_miss(&past_two, &gt)?,
    ))
}

/// Run every check. Failures are reported, never raised.
pub fn run_verify(opts: VerifyOptions) -> VerifyReport {
    let mut r = VerifyReport::default();
    let seed = opts.seed;

    let gap = kl_oracle_gap(seed, KL_PAIRS, opts.flip_kl_sign);
    r.push("laplace_kl_vs_quadrature", format!("max abs error ≤ {KL_TOLERANCE:e} over {KL_PAIRS} pairs"), gap, gap <= KL_TOLERANCE);

    let expected = 2.0 / std::f64::consts::PI.sqrt();
    match verify_proportionality(Probe::Linear { x: 1.0 }, 0.0, &PROPORTIONALITY_GRID, PROPORTIONALITY_SAMPLES, seed) {
        Ok(fit) => {
            r.push("proportionality_correlation", format!("> {MIN_CORRELATION}"), fit.correlation, fit.correlation > MIN_CORRELATION);
            let rel = (fit.slope / expected - 1.0).abs();
            r.push(
                "proportionality_slope",
                format!("within {}% of 2/√π = {expected:.4}", SLOPE_RELATIVE_TOLERANCE * 100.0),
                fit.slope,
                rel <= SLOPE_RELATIVE_TOLERANCE,
            );
        }
        Err(_) => r.push("proportionality_correlation", format!("> {MIN_CORRELATION}"), f64::NAN, false),
    }
    match verify_proportionality(Probe::Sigmoid { x: 1.0 }, 0.0, &PROPORTIONALITY_GRID, PROPORTIONALITY_SAMPLES, seed) {
        Ok(fit) => r.push("proportionality_sigmoid", format!("correlation > {MIN_CORRELATION}"), fit.correlation, fit.correlation > MIN_CORRELATION),
        Err(_) => r.push("proportionality_sigmoid", format!("correlation > {MIN_CORRELATION}"), f64::NAN, false),
    }

    let (simplex, range, agree) = fusion_errors(seed, FUSION_PAIRS);
    r.push("fusion_mean_on_simplex", format!("≤ {FUSION_TOLERANCE:e} over {FUSION_PAIRS} pairs"), simplex, simplex <= FUSION_TOLERANCE);
    r.push("fusion_delta_in_unit_box", "excursion = 0".into(), range, range == 0.0);
    r.push("fusion_agreement_is_zero", "max Δc = 0 exactly".into(), agree, agree == 0.0);

    let est = estimator_grad_error(seed, GRAD_MODELS).unwrap_or(f64::NAN);
    r.push("estimator_grad_check", format!("relative error < {GRAD_TOLERANCE:e} over {GRAD_MODELS} models"), est, est < GRAD_TOLERANCE);
    let pred = predictor_grad_error(seed, GRAD_MODELS).unwrap_or(f64::NAN);
    r.push("predictor_grad_check", format!("relative error < {GRAD_TOLERANCE:e} over {GRAD_MODELS} models"), pred, pred < GRAD_TOLERANCE);

    match metric_cases() {
        Ok((ade, fde, at_two, past_two)) => {
            r.push("metric_constant_offset_ade", "= 1.0 exactly".into(), ade, ade == 1.0);
            r.push("metric_345_fde", "= 5.0 exactly".into(), fde, fde == 5.0);
            r.push("metric_strict_miss_threshold", "2.0 m is a hit, beyond is a miss".into(), at_two as u8 as f64, !at_two && past_two);
        }
        Err(_) => r.push("metric_cases", "computable".into(), f64::NAN, false),
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flipped_kl_fails_the_oracle() {
        assert!(kl_oracle_gap(0, 20, false) <= KL_TOLERANCE);
        assert!(kl_oracle_gap(0, 20, true) > KL_TOLERANCE);
    }

    #[test]
    fn fusion_and_metric_checks_hold() {
        let (s, r, a) = fusion_errors(1, 500);
        assert!(s <= FUSION_TOLERANCE);
        assert_eq!(r, 0.0);
        assert_eq!(a, 0.0);
        assert_eq!(metric_cases().unwrap(), (1.0, 5.0, false, true));
    }

    #[test]
    fn report_text_lists_tolerances() {
        let mut r = VerifyReport::default();
        r.push("x", "≤ 1e-6".into(), 0.5, false);
        let t = r.to_text();
        assert!(t.contains("FAIL x") && t.contains("≤ 1e-6") && t.contains("0/1"));
        assert!(!r.passed());
    }
}
