//! Dual-head per-vertex map estimator.
//!
//! A two-layer tanh encoder (10 → 32 → 32) feeds two affine heads with the
//! same output layout `[mu_x, mu_y, log_b_x, log_b_y, logits × 4]`:
//! the primary head reads the deep tap (layer 2), the auxiliary head reads
//! the shallow tap (layer 1) through a dropout mask. Disagreement between
//! the heads becomes positional (Laplace KL) and semantic (squared score
//! difference) uncertainty.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map_model::{ElementClass, MapElement, PerceptionRange, Point2, Scene, NUM_CLASSES};
use crate::nn::{cross_entropy, softmax, tanh_backward, Dense, Layered, Optimizer, OptimizerKind};
use crate::noise_sim::{Observation, CONTEXT_WIDTH};
use crate::oracle::{central_difference, relative_error};
use crate::rng::{rng_from, sub_seed, Stream};
use crate::uncertainty::{positional_uncertainty, semantic_fuse, ClassScores, LaplacePoint};

pub const HIDDEN: usize = 32;
pub const HEAD_OUT: usize = 4 + NUM_CLASSES;

#[derive(Debug, Clone, PartialEq)]
pub struct DualHeadModel {
    pub enc1: Dense,
    pub enc2: Dense,
    pub primary: Dense,
    pub aux: Dense,
    pub dropout_rate: f64,
}

impl Layered for DualHeadModel {
    fn layers(&self) -> Vec<(&'static str, &Dense)> {
        vec![
            ("encoder1", &self.enc1),
            ("encoder2", &self.enc2),
            ("primary", &self.primary),
            ("auxiliary", &self.aux),
        ]
    }

    fn layers_mut(&mut self) -> Vec<&mut Dense> {
        vec![&mut self.enc1, &mut self.enc2, &mut self.primary, &mut self.aux]
    }
}

impl DualHeadModel {
    pub fn zeros(dropout_rate: f64) -> Self {
        Self {
            enc1: Dense::zeros(CONTEXT_WIDTH, HIDDEN),
            enc2: Dense::zeros(HIDDEN, HIDDEN),
            primary: Dense::zeros(HIDDEN, HEAD_OUT),
            aux: Dense::zeros(HIDDEN, HEAD_OUT),
            dropout_rate,
        }
    }

    /// Random init; both heads start with the location outputs biased to the
    /// box center and the scales to `initial_b` (normalized units).
    pub fn init(seed: u64, dropout_rate: f64) -> Self {
        let mut rng = rng_from(sub_seed(seed, Stream::MapInit, 0));
        let mut m = Self {
            enc1: Dense::init(CONTEXT_WIDTH, HIDDEN, 1.0, &mut rng),
            enc2: Dense::init(HIDDEN, HIDDEN, 1.0, &mut rng),
            primary: Dense::init(HIDDEN, HEAD_OUT, 0.1, &mut rng),
            aux: Dense::init(HIDDEN, HEAD_OUT, 0.1, &mut rng),
            dropout_rate,
        };
        for head in [&mut m.primary, &mut m.aux] {
            head.b[0] = 0.5;
            head.b[1] = 0.5;
            head.b[2] = INITIAL_LOG_B;
            head.b[3] = INITIAL_LOG_B;
        }
        m
    }

    pub fn to_checkpoint(&self) -> String {
        let mut text = crate::nn::write_checkpoint("dual_head", self);
        text.insert_str(text.len() - "end\n".len(), &format!("dropout {:.16e}\n", self.dropout_rate));
        text
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let (body, dropout) = split_dropout_line(text)?;
        let mut m = Self::zeros(dropout);
        crate::nn::read_checkpoint(&body, "dual_head", &mut m)?;
        Ok(m)
    }
}

/// ln(0.05): a 5 % of the box scale prior on the Laplace spread.
const INITIAL_LOG_B: f64 = -2.995_732_273_553_991;

fn split_dropout_line(text: &str) -> Result<(String, f64)> {
    let mut dropout = None;
    let mut body = String::with_capacity(text.len());
    for (i, line) in text.lines().enumerate() {
        if let Some(rest) = line.strip_prefix("dropout ") {
            dropout = Some(
                rest.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(i + 1, "bad dropout value"))?,
            );
        } else {
            body.push_str(line);
            body.push('\n');
        }
    }
    let dropout = dropout.ok_or_else(|| Error::parse(0, "checkpoint lacks a `dropout` line"))?;
    Ok((body, dropout))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadOutput {
    pub point: LaplacePoint,
    pub scores: ClassScores,
    /// Raw head output `[mu_x, mu_y, log_b_x, log_b_y, logits…]`.
    pub raw: [f64; HEAD_OUT],
}

impl HeadOutput {
    fn from_raw(raw: [f64; HEAD_OUT]) -> Self {
        let mut scores = [0.0; NUM_CLASSES];
        softmax(&raw[4..], &mut scores);
        HeadOutput {
            point: LaplacePoint {
                mu: Point2::new(raw[0], raw[1]),
                b: Point2::new(raw[2].exp(), raw[3].exp()),
            },
            scores: ClassScores(scores),
            raw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexPrediction {
    pub primary: HeadOutput,
    pub auxiliary: HeadOutput,
}

/// Per-vertex activations kept for the backward pass.
struct Cache {
    h1: [f64; HIDDEN],
    h2: [f64; HIDDEN],
    dropped: [f64; HIDDEN],
    mask: [f64; HIDDEN],
    primary: [f64; HEAD_OUT],
    aux: [f64; HEAD_OUT],
}

fn draw_mask<R: Rng>(rate: f64, rng: &mut R) -> [f64; HIDDEN] {
    let keep = 1.0 / (1.0 - rate);
    let mut mask = [0.0; HIDDEN];
    for m in &mut mask {
        *m = if rng.random::<f64>() < rate { 0.0 } else { keep };
    }
    mask
}

fn forward_one(model: &DualHeadModel, x: &[f64], mask: Option<&[f64; HIDDEN]>) -> Cache {
    let mut c = Cache {
        h1: [0.0; HIDDEN],
        h2: [0.0; HIDDEN],
        dropped: [0.0; HIDDEN],
        mask: [1.0; HIDDEN],
        primary: [0.0; HEAD_OUT],
        aux: [0.0; HEAD_OUT],
    };
    model.enc1.forward(x, &mut c.h1);
    crate::nn::tanh_inplace(&mut c.h1);
    model.enc2.forward(&c.h1, &mut c.h2);
    crate::nn::tanh_inplace(&mut c.h2);
    model.primary.forward(&c.h2, &mut c.primary);
    if let Some(mask) = mask {
        c.mask = *mask;
    }
    for i in 0..HIDDEN {
        c.dropped[i] = c.h1[i] * c.mask[i];
    }
    model.aux.forward(&c.dropped, &mut c.aux);
    c
}

/// Run both heads over a batch of context vectors.
///
/// In `Train` mode the auxiliary path applies a fresh dropout mask per vertex,
/// drawn from `seed`, with inverted scaling 1/(1−r). `Eval` is deterministic
/// and ignores `seed`.
pub fn forward<X: AsRef<[f64]>>(
    model: &DualHeadModel,
    contexts: &[X],
    mode: Mode,
    seed: u64,
) -> Result<Vec<VertexPrediction>> {
    if !model.all_finite() {
        return Err(Error::NonFinite("estimator parameters".into()));
    }
    let mut rng = rng_from(seed);
    contexts
        .iter()
        .map(|x| {
            let x = x.as_ref();
            if x.len() != CONTEXT_WIDTH {
                return Err(Error::LengthMismatch {
                    expected: CONTEXT_WIDTH,
                    actual: x.len(),
                });
            }
            let mask = (mode == Mode::Train).then(|| draw_mask(model.dropout_rate, &mut rng));
            let c = forward_one(model, x, mask.as_ref());
            Ok(VertexPrediction {
                primary: HeadOutput::from_raw(c.primary),
                auxiliary: HeadOutput::from_raw(c.aux),
            })
        })
        .collect()
}

/// One supervised vertex: context, true normalized position, true class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapSample {
    pub context: [f64; CONTEXT_WIDTH],
    pub target: Point2,
    pub class: usize,
}

/// Pair every observation with its ground-truth vertex.
pub fn map_samples(scene: &Scene, observations: &[Observation]) -> Result<Vec<MapSample>> {
    let range = PerceptionRange::default();
    let by_id: HashMap<u64, &MapElement> = scene.elements.iter().map(|e| (e.id, e)).collect();
    observations
        .iter()
        .map(|o| {
            let e = by_id.get(&o.element_id).ok_or(Error::UnknownElement(o.element_id))?;
            let p = e.points.get(o.vertex_index).ok_or_else(|| {
                Error::domain(format!("element {} has no vertex {}", o.element_id, o.vertex_index))
            })?;
            Ok(MapSample {
                context: o.context,
                target: crate::map_model::normalize_to_bev(*p, range)?,
                class: e.class.index(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// `regression_weight · regression + classification`, averaged over vertices.
    pub total: f64,
    /// Laplace NLL summed over heads and axes, averaged over vertices.
    pub regression: f64,
    /// Cross-entropy summed over heads, averaged over vertices.
    pub classification: f64,
}

/// Per-axis Laplace negative log-likelihood `ln(2b) + |t − mu| / b`.
pub fn laplace_nll(target: f64, mu: f64, b: f64) -> f64 {
    (2.0 * b).ln() + (target - mu).abs() / b
}

/// Loss of already-computed head outputs against targets.
pub fn loss(outputs: &[VertexPrediction], targets: &[MapSample], regression_weight: f64) -> Result<LossBreakdown> {
    if outputs.len() != targets.len() {
        return Err(Error::LengthMismatch {
            expected: outputs.len(),
            actual: targets.len(),
        });
    }
    if outputs.is_empty() {
        return Err(Error::Empty("loss over zero vertices".into()));
    }
    let mut reg = 0.0;
    let mut cls = 0.0;
    for (o, t) in outputs.iter().zip(targets) {
        if !t.target.is_finite() {
            return Err(Error::NonFinite("loss target".into()));
        }
        if t.class >= NUM_CLASSES {
            return Err(Error::domain(format!("class index {} out of range", t.class)));
        }
        for head in [&o.primary, &o.auxiliary] {
            reg += laplace_nll(t.target.x, head.raw[0], head.raw[2].exp())
                + laplace_nll(t.target.y, head.raw[1], head.raw[3].exp());
            cls += cross_entropy(&head.raw[4..], t.class);
        }
    }
    let n = outputs.len() as f64;
    let (reg, cls) = (reg / n, cls / n);
    Ok(LossBreakdown {
        total: regression_weight * reg + cls,
        regression: reg,
        classification: cls,
    })
}

/// Which regression terms to drop, indexed `[vertex][head][axis]`.
type KinkMask = Vec<[[bool; 2]; 2]>;

/// Head-output gradient of the per-vertex loss; returns the vertex loss.
fn head_grad(
    out: &[f64; HEAD_OUT],
    t: &MapSample,
    w: f64,
    skip: [bool; 2],
    scale: f64,
    d: &mut [f64; HEAD_OUT],
) -> (f64, f64) {
    let target = [t.target.x, t.target.y];
    let mut reg = 0.0;
    for a in 0..2 {
        if skip[a] {
            continue;
        }
        let inv_b = (-out[2 + a]).exp();
        let r = target[a] - out[a];
        reg += std::f64::consts::LN_2 + out[2 + a] + r.abs() * inv_b;
        let sign = if r > 0.0 {
            1.0
        } else if r < 0.0 {
            -1.0
        } else {
            0.0
        };
        d[a] = scale * w * (-sign * inv_b);
        d[2 + a] = scale * w * (1.0 - r.abs() * inv_b);
    }
    let mut p = [0.0; NUM_CLASSES];
    softmax(&out[4..], &mut p);
    for k in 0..NUM_CLASSES {
        d[4 + k] = scale * (p[k] - if k == t.class { 1.0 } else { 0.0 });
    }
    (reg, cross_entropy(&out[4..], t.class))
}

/// Mean loss over `batch` and its gradient, accumulated into `grad`.
fn loss_and_grad(
    model: &DualHeadModel,
    batch: &[MapSample],
    masks: Option<&[[f64; HIDDEN]]>,
    regression_weight: f64,
    kinks: Option<&KinkMask>,
    grad: &mut DualHeadModel,
) -> LossBreakdown {
    let scale = 1.0 / batch.len() as f64;
    let mut reg = 0.0;
    let mut cls = 0.0;
    for (i, s) in batch.iter().enumerate() {
        let c = forward_one(model, &s.context, masks.map(|m| &m[i]));
        let skip = kinks.map_or([[false; 2]; 2], |k| k[i]);
        let mut dp = [0.0; HEAD_OUT];
        let mut da = [0.0; HEAD_OUT];
        let (r1, c1) = head_grad(&c.primary, s, regression_weight, skip[0], scale, &mut dp);
        let (r2, c2) = head_grad(&c.aux, s, regression_weight, skip[1], scale, &mut da);
        reg += r1 + r2;
        cls += c1 + c2;

        let mut dh2 = [0.0; HIDDEN];
        model.primary.backward(&c.h2, &dp, &mut grad.primary, Some(&mut dh2));
        let mut ddrop = [0.0; HIDDEN];
        model.aux.backward(&c.dropped, &da, &mut grad.aux, Some(&mut ddrop));
        tanh_backward(&c.h2, &mut dh2);
        let mut dh1 = [0.0; HIDDEN];
        model.enc2.backward(&c.h1, &dh2, &mut grad.enc2, Some(&mut dh1));
        for k in 0..HIDDEN {
            dh1[k] += ddrop[k] * c.mask[k];
        }
        tanh_backward(&c.h1, &mut dh1);
        model.enc1.backward(&s.context, &dh1, &mut grad.enc1, None);
    }
    LossBreakdown {
        total: scale * (regression_weight * reg + cls),
        regression: scale * reg,
        classification: scale * cls,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub regression_loss_weight: f64,
    pub grad_norm_clip: f64,
    pub dropout_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0e-4,
            regression_loss_weight: 0.03,
            grad_norm_clip: 3.0,
            dropout_rate: 0.1,
            epochs: 30,
            batch_size: 64,
            seed: 0,
            optimizer: OptimizerKind::Momentum,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be non-negative and finite"));
        }
        if self.regression_loss_weight.is_nan() || self.regression_loss_weight <= 0.0 {
            return Err(Error::config("regression_loss_weight", "must be positive"));
        }
        if self.grad_norm_clip.is_nan() || self.grad_norm_clip <= 0.0 {
            return Err(Error::config("grad_norm_clip", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout_rate", "must lie in [0, 1)"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub regression: f64,
    pub classification: f64,
}

/// Full-dataset eval-mode loss after each epoch; epoch 0 is the initial model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTrace(pub Vec<EpochLoss>);

impl LossTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,total,regression,classification\n");
        for e in &self.0 {
            writeln!(out, "{},{:.17e},{:.17e},{:.17e}", e.epoch, e.total, e.regression, e.classification).unwrap();
        }
        out
    }

    pub fn initial(&self) -> Option<&EpochLoss> {
        self.0.first()
    }

    pub fn last(&self) -> Option<&EpochLoss> {
        self.0.last()
    }
}

fn eval_loss(model: &DualHeadModel, data: &[MapSample], w: f64) -> LossBreakdown {
    let mut scratch = DualHeadModel::zeros(model.dropout_rate);
    let mut acc = LossBreakdown::default();
    let n = data.len() as f64;
    for chunk in data.chunks(256) {
        let l = loss_and_grad(model, chunk, None, w, None, &mut scratch);
        let f = chunk.len() as f64 / n;
        acc.total += f * l.total;
        acc.regression += f * l.regression;
        acc.classification += f * l.classification;
    }
    acc
}

/// Mini-batch training with global gradient-norm clipping.
pub fn train(data: &[MapSample], cfg: &TrainConfig) -> Result<(DualHeadModel, LossTrace)> {
    let model = DualHeadModel::init(cfg.seed, cfg.dropout_rate);
    train_from(model, data, cfg)
}

pub fn train_from(mut model: DualHeadModel, data: &[MapSample], cfg: &TrainConfig) -> Result<(DualHeadModel, LossTrace)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    model.dropout_rate = cfg.dropout_rate;
    let w = cfg.regression_loss_weight;
    let mut trace = vec![];
    let first = eval_loss(&model, data, w);
    trace.push(EpochLoss {
        epoch: 0,
        total: first.total,
        regression: first.regression,
        classification: first.classification,
    });
    let mut params = model.flat_params();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.grad_norm_clip, params.len());
    let mut grad = DualHeadModel::zeros(cfg.dropout_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut masks = Vec::with_capacity(cfg.batch_size);
    for epoch in 1..=cfg.epochs {
        let mut rng = rng_from(sub_seed(cfg.seed, Stream::MapTrain, epoch as u64));
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| data[i]));
            masks.clear();
            masks.extend(idx.iter().map(|_| draw_mask(cfg.dropout_rate, &mut rng)));
            grad.set_flat_params(&vec![0.0; params.len()]);
            let l = loss_and_grad(&model, &batch, Some(&masks), w, None, &mut grad);
            if !l.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    message: format!("mini-batch loss became {}", l.total),
                });
            }
            let mut g = grad.flat_params();
            opt.step(&mut params, &mut g);
            model.set_flat_params(&params);
        }
        let l = eval_loss(&model, data, w);
        if !l.total.is_finite() {
            return Err(Error::Diverged {
                epoch,
                message: format!("training loss became {}", l.total),
            });
        }
        trace.push(EpochLoss {
            epoch,
            total: l.total,
            regression: l.regression,
            classification: l.classification,
        });
    }
    Ok((model, LossTrace(trace)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub parameters_checked: usize,
    /// Regression terms excluded because their residual sat within 10ε of the kink.
    pub masked_terms: usize,
    /// L2 norm of the analytic gradient of the (kink-masked) loss.
    pub gradient_norm: f64,
    /// Analytic and numeric gradients, for sign checks.
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compare the analytic gradient against central differences for every
/// parameter, with dropout disabled.
///
/// The Laplace NLL has a kink at zero residual. Any (vertex, head, axis) term
/// whose residual magnitude is below `10 · epsilon` at the unperturbed point
/// is removed from the loss for both gradients.
pub fn grad_check(model: &DualHeadModel, samples: &[MapSample], epsilon: f64, regression_weight: f64) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::domain(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    if samples.is_empty() {
        return Err(Error::Empty("grad-check sample".into()));
    }
    let mut kinks: KinkMask = Vec::with_capacity(samples.len());
    let mut masked = 0;
    for s in samples {
        let c = forward_one(model, &s.context, None);
        let mut k = [[false; 2]; 2];
        for (h, out) in [&c.primary, &c.aux].into_iter().enumerate() {
            for a in 0..2 {
                let t = if a == 0 { s.target.x } else { s.target.y };
                if (t - out[a]).abs() < 10.0 * epsilon {
                    k[h][a] = true;
                    masked += 1;
                }
            }
        }
        kinks.push(k);
    }
    let mut grad = DualHeadModel::zeros(model.dropout_rate);
    loss_and_grad(model, samples, None, regression_weight, Some(&kinks), &mut grad);
    let analytic = grad.flat_params();
    let base = model.flat_params();
    let mut probe = model.clone();
    let mut scratch = DualHeadModel::zeros(model.dropout_rate);
    let numeric = central_difference(
        &mut |p: &[f64]| {
            probe.set_flat_params(p);
            loss_and_grad(&probe, samples, None, regression_weight, Some(&kinks), &mut scratch).total
        },
        &base,
        epsilon,
    );
    let max_relative_error = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_relative_error,
        parameters_checked: analytic.len(),
        masked_terms: masked,
        gradient_norm: analytic.iter().map(|g| g * g).sum::<f64>().sqrt(),
        analytic,
        numeric,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertainVertex {
    pub vertex_index: usize,
    /// Primary-head location, normalized BEV.
    pub mu: Point2,
    pub beta: f64,
    pub c_bar: [f64; NUM_CLASSES],
    pub delta_c: [f64; NUM_CLASSES],
}

/// A map element as seen through the estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertainMapElement {
    pub id: u64,
    /// Argmax of the vertex-mean fused scores.
    pub class: ElementClass,
    pub vertices: Vec<UncertainVertex>,
    pub mean_beta: f64,
    pub c_bar: [f64; NUM_CLASSES],
    pub delta_c: [f64; NUM_CLASSES],
}

/// Run the trained estimator in eval mode and fuse both heads per vertex,
/// grouped by element in `element_ids` order. Elements without surviving
/// observations are omitted.
pub fn estimate_uncertain_map(
    model: &DualHeadModel,
    observations: &[Observation],
    element_ids: &[u64],
) -> Result<Vec<UncertainMapElement>> {
    let slot: HashMap<u64, usize> = element_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut groups: Vec<Vec<UncertainVertex>> = vec![Vec::new(); element_ids.len()];
    let contexts: Vec<&[f64]> = observations.iter().map(|o| &o.context[..]).collect();
    let preds = forward(model, &contexts, Mode::Eval, 0)?;
    for (o, p) in observations.iter().zip(&preds) {
        let i = *slot.get(&o.element_id).ok_or(Error::UnknownElement(o.element_id))?;
        let beta = positional_uncertainty(&p.primary.point, &p.auxiliary.point)?.beta;
        let fused = semantic_fuse(&p.primary.scores, &p.auxiliary.scores)?;
        groups[i].push(UncertainVertex {
            vertex_index: o.vertex_index,
            mu: p.primary.point.mu,
            beta,
            c_bar: fused.c_bar,
            delta_c: fused.delta_c,
        });
    }
    Ok(element_ids
        .iter()
        .zip(groups)
        .filter(|(_, v)| !v.is_empty())
        .map(|(&id, vertices)| {
            let n = vertices.len() as f64;
            let mean_beta = vertices.iter().map(|v| v.beta).sum::<f64>() / n;
            let mut c_bar = [0.0; NUM_CLASSES];
            let mut delta_c = [0.0; NUM_CLASSES];
            for v in &vertices {
                for k in 0..NUM_CLASSES {
                    c_bar[k] += v.c_bar[k] / n;
                    delta_c[k] += v.delta_c[k] / n;
                }
            }
            let class = ElementClass::from_index(ClassScores(c_bar).argmax()).unwrap();
            UncertainMapElement {
                id,
                class,
                vertices,
                mean_beta,
                c_bar,
                delta_c,
            }
        })
        .collect())
}
