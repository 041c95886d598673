//! Multimodal trajectory forecaster conditioned on an uncertainty-aware map.
//!
//! Map vertices enter as tokens `[mu, beta, c_bar, delta_c]` expressed in the
//! agent's frame, are embedded one by one (11 → 32, tanh) and max-pooled. The
//! flattened agent-relative history goes through an affine + tanh encoder.
//! Both codes feed a tanh hidden layer whose affine read-out gives, per mode,
//! 30 step displacements added to the last observed velocity, plus one logit.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::UncertainMapElement;
use crate::map_model::{denormalize_from_bev, AgentTrack, PerceptionRange, Point2, FUTURE_LEN, HISTORY_LEN, NUM_CLASSES};
use crate::nn::{cross_entropy, softmax, tanh_backward, tanh_inplace, Dense, Layered, Optimizer, OptimizerKind};
use crate::oracle::{relative_error, richardson_difference};
use crate::rng::{rng_from, sub_seed, Stream};

pub const NUM_MODES: usize = 6;
pub const TOKEN_WIDTH: usize = 2 + 1 + 2 * NUM_CLASSES;
pub const MAP_EMBED: usize = 32;
pub const HISTORY_EMBED: usize = 32;
pub const PRED_HIDDEN: usize = 32;
const HISTORY_FEATURES: usize = 2 * HISTORY_LEN;
const TRAJ_OUT: usize = NUM_MODES * FUTURE_LEN * 2;
const OUT_WIDTH: usize = TRAJ_OUT + NUM_MODES;

/// Metres per unit of network input.
pub const POSITION_SCALE: f64 = 10.0;

/// One map vertex as seen by the forecaster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapToken {
    /// Normalized BEV position.
    pub mu: Point2,
    pub beta: f64,
    pub c_bar: [f64; NUM_CLASSES],
    pub delta_c: [f64; NUM_CLASSES],
}

impl MapToken {
    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::NonFinite("token position".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::domain(format!("token beta {} must be finite and ≥ 0", self.beta)));
        }
        crate::uncertainty::ClassScores(self.c_bar).validate()?;
        if self.delta_c.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return Err(Error::domain(format!("token delta_c {:?} outside [0, 1]", self.delta_c)));
        }
        Ok(())
    }
}

/// One token per estimated vertex, in element then vertex order.
pub fn tokens_from_map(elements: &[UncertainMapElement]) -> Vec<MapToken> {
    elements
        .iter()
        .flat_map(|e| {
            e.vertices.iter().map(|v| MapToken {
                mu: v.mu,
                beta: v.beta,
                c_bar: v.c_bar,
                delta_c: v.delta_c,
            })
        })
        .collect()
}

/// Which uncertainty channels reach the network; masked channels are zeroed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// β and Δc zeroed.
    Baseline,
    /// Δc zeroed.
    PosOnly,
    /// β zeroed.
    SemOnly,
    #[default]
    Both,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::PosOnly, Variant::SemOnly, Variant::Both];

    pub fn from_flags(unc_pos: bool, unc_sem: bool) -> Self {
        match (unc_pos, unc_sem) {
            (false, false) => Variant::Baseline,
            (true, false) => Variant::PosOnly,
            (false, true) => Variant::SemOnly,
            (true, true) => Variant::Both,
        }
    }

    pub fn uses_beta(self) -> bool {
        matches!(self, Variant::PosOnly | Variant::Both)
    }

    pub fn uses_delta_c(self) -> bool {
        matches!(self, Variant::SemOnly | Variant::Both)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::PosOnly => "pos_only",
            Variant::SemOnly => "sem_only",
            Variant::Both => "both",
        }
    }

    pub fn mask(self, t: &MapToken) -> MapToken {
        MapToken {
            beta: if self.uses_beta() { t.beta } else { 0.0 },
            delta_c: if self.uses_delta_c() { t.delta_c } else { [0.0; NUM_CLASSES] },
            ..*t
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::domain(format!("unknown variant `{s}`")))
    }
}

/// Forecast for one agent: modes in ego-frame metres and their scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub modes: Vec<Vec<Point2>>,
    pub scores: Vec<f64>,
}

impl PredictionSet {
    pub fn validate(&self) -> Result<()> {
        if self.modes.len() != NUM_MODES {
            return Err(Error::LengthMismatch {
                expected: NUM_MODES,
                actual: self.modes.len(),
            });
        }
        if self.scores.len() != self.modes.len() {
            return Err(Error::LengthMismatch {
                expected: self.modes.len(),
                actual: self.scores.len(),
            });
        }
        for m in &self.modes {
            if m.len() != FUTURE_LEN {
                return Err(Error::LengthMismatch {
                    expected: FUTURE_LEN,
                    actual: m.len(),
                });
            }
            if m.iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFinite("predicted trajectory".into()));
            }
        }
        let sum: f64 = self.scores.iter().sum();
        if self.scores.iter().any(|s| s.is_nan() || *s < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("mode scores {:?} are not on the simplex", self.scores)));
        }
        Ok(())
    }
}

/// Agent-centred frame: origin at the last observed position, x along the
/// direction of travel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentFrame {
    pub origin: Point2,
    pub heading: f64,
}

impl AgentFrame {
    pub const IDENTITY: AgentFrame = AgentFrame {
        origin: Point2::ZERO,
        heading: 0.0,
    };

    pub fn from_history(history: &[Point2]) -> Self {
        let last = history[history.len() - 1];
        let mut heading = 0.0;
        for back in [history.len().saturating_sub(2), 0] {
            let d = last - history[back];
            if d.norm() > 1e-3 {
                heading = d.y.atan2(d.x);
                break;
            }
        }
        AgentFrame { origin: last, heading }
    }

    pub fn to_local(&self, p: Point2) -> Point2 {
        (p - self.origin).rotate(-self.heading)
    }

    pub fn to_world(&self, q: Point2) -> Point2 {
        q.rotate(self.heading) + self.origin
    }
}

fn token_features(t: &MapToken, frame: &AgentFrame, range: PerceptionRange) -> [f64; TOKEN_WIDTH] {
    let local = frame.to_local(denormalize_from_bev(t.mu, range)) * (1.0 / POSITION_SCALE);
    let mut f = [0.0; TOKEN_WIDTH];
    f[0] = local.x;
    f[1] = local.y;
    f[2] = t.beta.ln_1p();
    f[3..3 + NUM_CLASSES].copy_from_slice(&t.c_bar);
    f[3 + NUM_CLASSES..].copy_from_slice(&t.delta_c);
    f
}

fn history_features(history: &[Point2], frame: &AgentFrame) -> [f64; HISTORY_FEATURES] {
    let mut f = [0.0; HISTORY_FEATURES];
    for (i, p) in history.iter().enumerate() {
        let q = frame.to_local(*p) * (1.0 / POSITION_SCALE);
        f[2 * i] = q.x;
        f[2 * i + 1] = q.y;
    }
    f
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    pub token: Dense,
    pub history: Dense,
    pub hidden: Dense,
    pub output: Dense,
    pub variant: Variant,
}

impl Layered for PredictorModel {
    fn layers(&self) -> Vec<(&'static str, &Dense)> {
        vec![
            ("token", &self.token),
            ("history", &self.history),
            ("hidden", &self.hidden),
            ("output", &self.output),
        ]
    }

    fn layers_mut(&mut self) -> Vec<&mut Dense> {
        vec![&mut self.token, &mut self.history, &mut self.hidden, &mut self.output]
    }
}

impl PredictorModel {
    pub fn zeros(variant: Variant) -> Self {
        Self {
            token: Dense::zeros(TOKEN_WIDTH, MAP_EMBED),
            history: Dense::zeros(HISTORY_FEATURES, HISTORY_EMBED),
            hidden: Dense::zeros(HISTORY_EMBED + MAP_EMBED, PRED_HIDDEN),
            output: Dense::zeros(PRED_HIDDEN, OUT_WIDTH),
            variant,
        }
    }

    pub fn init(seed: u64, variant: Variant) -> Self {
        let mut rng = rng_from(sub_seed(seed, Stream::PredInit, 0));
        Self {
            token: Dense::init(TOKEN_WIDTH, MAP_EMBED, 1.0, &mut rng),
            history: Dense::init(HISTORY_FEATURES, HISTORY_EMBED, 1.0, &mut rng),
            hidden: Dense::init(HISTORY_EMBED + MAP_EMBED, PRED_HIDDEN, 1.0, &mut rng),
            output: Dense::init(PRED_HIDDEN, OUT_WIDTH, 0.1, &mut rng),
            variant,
        }
    }

    pub fn to_checkpoint(&self) -> String {
        let mut text = crate::nn::write_checkpoint("predictor", self);
        text.insert_str(text.len() - "end\n".len(), &format!("variant {}\n", self.variant));
        text
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut variant = None;
        let mut body = String::with_capacity(text.len());
        for line in text.lines() {
            match line.strip_prefix("variant ") {
                Some(v) => variant = Some(v.trim().parse::<Variant>()?),
                None => {
                    body.push_str(line);
                    body.push('\n');
                }
            }
        }
        let variant = variant.ok_or_else(|| Error::parse(0, "checkpoint lacks a `variant` line"))?;
        let mut m = Self::zeros(variant);
        crate::nn::read_checkpoint(&body, "predictor", &mut m)?;
        Ok(m)
    }

    fn features(&self, tokens: &[MapToken], frame: &AgentFrame) -> Vec<[f64; TOKEN_WIDTH]> {
        let range = PerceptionRange::default();
        tokens
            .iter()
            .map(|t| token_features(&self.variant.mask(t), frame, range))
            .filter(|f| in_window(f[0] * POSITION_SCALE, f[1] * POSITION_SCALE))
            .collect()
    }
}

/// Tokens farther than this behind the agent are ignored, metres.
pub const WINDOW_BEHIND: f64 = 10.0;
/// Reach of the token window ahead of the agent, metres.
pub const WINDOW_AHEAD: f64 = 40.0;
/// Lateral half-width of the token window, metres.
pub const WINDOW_SIDE: f64 = 10.0;

fn in_window(x: f64, y: f64) -> bool {
    (-WINDOW_BEHIND..=WINDOW_AHEAD).contains(&x) && y.abs() <= WINDOW_SIDE
}

/// Max-pooled token embedding; zeros when there are no tokens.
pub fn encode_map(model: &PredictorModel, tokens: &[MapToken], frame: &AgentFrame) -> [f64; MAP_EMBED] {
    let feats = model.features(tokens, frame);
    pool(model, &feats).0
}

fn pool(model: &PredictorModel, feats: &[[f64; TOKEN_WIDTH]]) -> ([f64; MAP_EMBED], [usize; MAP_EMBED]) {
    let mut best = [f64::NEG_INFINITY; MAP_EMBED];
    let mut arg = [0usize; MAP_EMBED];
    let mut e = [0.0; MAP_EMBED];
    for (i, f) in feats.iter().enumerate() {
        model.token.forward(f, &mut e);
        tanh_inplace(&mut e);
        for j in 0..MAP_EMBED {
            if e[j] > best[j] {
                best[j] = e[j];
                arg[j] = i;
            }
        }
    }
    if feats.is_empty() {
        best = [0.0; MAP_EMBED];
    }
    (best, arg)
}

/// Inputs of one forward pass, already in the agent frame.
struct Prepared {
    frame: AgentFrame,
    tokens: Vec<[f64; TOKEN_WIDTH]>,
    history: [f64; HISTORY_FEATURES],
    /// Last observed step displacement, agent frame, metres.
    velocity: Point2,
}

fn prepare(model: &PredictorModel, history: &[Point2], tokens: &[MapToken]) -> Result<Prepared> {
    if history.len() != HISTORY_LEN {
        return Err(Error::LengthMismatch {
            expected: HISTORY_LEN,
            actual: history.len(),
        });
    }
    if history.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("agent history".into()));
    }
    let frame = AgentFrame::from_history(history);
    let velocity = (history[HISTORY_LEN - 1] - history[HISTORY_LEN - 2]).rotate(-frame.heading);
    Ok(Prepared {
        frame,
        tokens: model.features(tokens, &frame),
        history: history_features(history, &frame),
        velocity,
    })
}

struct Activations {
    pooled: [f64; MAP_EMBED],
    argmax: [usize; MAP_EMBED],
    h: [f64; HISTORY_EMBED],
    cat: [f64; HISTORY_EMBED + MAP_EMBED],
    z: [f64; PRED_HIDDEN],
    out: Vec<f64>,
}

/// Pool with the winning token of every channel given.
fn pool_fixed(model: &PredictorModel, feats: &[[f64; TOKEN_WIDTH]], argmax: &[usize; MAP_EMBED]) -> [f64; MAP_EMBED] {
    let mut out = [0.0; MAP_EMBED];
    if feats.is_empty() {
        return out;
    }
    let mut e = [0.0; MAP_EMBED];
    for (j, o) in out.iter_mut().enumerate() {
        model.token.forward(&feats[argmax[j]], &mut e);
        *o = e[j].tanh();
    }
    out
}

fn run(model: &PredictorModel, p: &Prepared, fixed: Option<&Selection>) -> Activations {
    let (pooled, argmax) = match fixed {
        Some(sel) => (pool_fixed(model, &p.tokens, &sel.argmax), sel.argmax),
        None => pool(model, &p.tokens),
    };
    let mut h = [0.0; HISTORY_EMBED];
    model.history.forward(&p.history, &mut h);
    tanh_inplace(&mut h);
    let mut cat = [0.0; HISTORY_EMBED + MAP_EMBED];
    cat[..HISTORY_EMBED].copy_from_slice(&h);
    cat[HISTORY_EMBED..].copy_from_slice(&pooled);
    let mut z = [0.0; PRED_HIDDEN];
    model.hidden.forward(&cat, &mut z);
    tanh_inplace(&mut z);
    let mut out = vec![0.0; OUT_WIDTH];
    model.output.forward(&z, &mut out);
    Activations {
        pooled,
        argmax,
        h,
        cat,
        z,
        out,
    }
}

/// Local-frame positions of every mode, `[mode][step]`.
fn local_modes(out: &[f64], velocity: Point2) -> Vec<Vec<Point2>> {
    (0..NUM_MODES)
        .map(|k| {
            let mut pos = Point2::ZERO;
            (0..FUTURE_LEN)
                .map(|t| {
                    let i = 2 * (k * FUTURE_LEN + t);
                    pos = pos + velocity + Point2::new(out[i], out[i + 1]);
                    pos
                })
                .collect()
        })
        .collect()
}

/// Six-mode forecast for one agent. Deterministic.
pub fn predict(model: &PredictorModel, history: &[Point2], tokens: &[MapToken]) -> Result<PredictionSet> {
    if !model.all_finite() {
        return Err(Error::NonFinite("predictor parameters".into()));
    }
    let p = prepare(model, history, tokens)?;
    let a = run(model, &p, None);
    let modes = local_modes(&a.out, p.velocity)
        .into_iter()
        .map(|m| m.into_iter().map(|q| p.frame.to_world(q)).collect())
        .collect();
    let mut scores = vec![0.0; NUM_MODES];
    softmax(&a.out[TRAJ_OUT..], &mut scores);
    Ok(PredictionSet { modes, scores })
}

/// Five heading perturbations and a slowed copy of constant-velocity motion.
pub fn constant_velocity_baseline(history: &[Point2]) -> Result<PredictionSet> {
    if history.len() < 2 {
        return Err(Error::LengthMismatch {
            expected: 2,
            actual: history.len(),
        });
    }
    if history.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("agent history".into()));
    }
    let last = history[history.len() - 1];
    let v = last - history[history.len() - 2];
    let deg = std::f64::consts::PI / 180.0;
    let steps = [
        v,
        v.rotate(10.0 * deg),
        v.rotate(-10.0 * deg),
        v.rotate(20.0 * deg),
        v.rotate(-20.0 * deg),
        v * 0.8,
    ];
    let modes = steps
        .iter()
        .map(|&s| (1..=FUTURE_LEN).map(|t| last + s * t as f64).collect())
        .collect();
    Ok(PredictionSet {
        modes,
        scores: vec![1.0 / NUM_MODES as f64; NUM_MODES],
    })
}

/// Agents of one scene sharing one estimated map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionScene {
    pub scene_id: u64,
    pub tokens: Vec<MapToken>,
    pub agents: Vec<AgentTrack>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictorLoss {
    pub total: f64,
    /// Mean squared displacement of the best mode, m².
    pub trajectory: f64,
    pub classification: f64,
}

struct Sample {
    prepared: Prepared,
    /// Ground-truth future, agent frame.
    target: Vec<Point2>,
}

fn prepare_samples(model: &PredictorModel, scenes: &[PredictionScene]) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for s in scenes {
        for t in &s.tokens {
            t.validate()?;
        }
        for a in &s.agents {
            if a.future.samples.len() != FUTURE_LEN {
                return Err(Error::LengthMismatch {
                    expected: FUTURE_LEN,
                    actual: a.future.samples.len(),
                });
            }
            let prepared = prepare(model, &a.history.samples, &s.tokens)?;
            let target = a.future.samples.iter().map(|p| prepared.frame.to_local(*p)).collect();
            out.push(Sample { prepared, target });
        }
    }
    Ok(out)
}

/// Discrete choices of one forward pass: the winning mode and the winning
/// token of every pooled channel.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Selection {
    best: usize,
    argmax: [usize; MAP_EMBED],
}

/// Winner-takes-all loss of one sample; accumulates `scale ·` its gradient.
/// With `fixed`, the discrete choices are taken from it instead of recomputed.
fn sample_loss(
    model: &PredictorModel,
    s: &Sample,
    scale: f64,
    grad: Option<&mut PredictorModel>,
    fixed: Option<&Selection>,
) -> (f64, f64, Selection) {
    let a = run(model, &s.prepared, fixed);
    let modes = local_modes(&a.out, s.prepared.velocity);
    let errs: Vec<f64> = modes
        .iter()
        .map(|m| {
            m.iter()
                .zip(&s.target)
                .map(|(p, g)| (*p - *g).dot(*p - *g))
                .sum::<f64>()
                / FUTURE_LEN as f64
        })
        .collect();
    let best = match fixed {
        Some(sel) => sel.best,
        None => (0..NUM_MODES).fold(0, |b, k| if errs[k] < errs[b] { k } else { b }),
    };
    let ce = cross_entropy(&a.out[TRAJ_OUT..], best);
    let sel = Selection { best, argmax: a.argmax };
    let Some(grad) = grad else {
        return (errs[best], ce, sel);
    };

    let mut d_out = vec![0.0; OUT_WIDTH];
    let mut acc = Point2::ZERO;
    for t in (0..FUTURE_LEN).rev() {
        acc = acc + (modes[best][t] - s.target[t]) * (2.0 / FUTURE_LEN as f64);
        let i = 2 * (best * FUTURE_LEN + t);
        d_out[i] = scale * acc.x;
        d_out[i + 1] = scale * acc.y;
    }
    let mut p = [0.0; NUM_MODES];
    softmax(&a.out[TRAJ_OUT..], &mut p);
    for k in 0..NUM_MODES {
        d_out[TRAJ_OUT + k] = scale * (p[k] - if k == best { 1.0 } else { 0.0 });
    }

    let mut dz = [0.0; PRED_HIDDEN];
    model.output.backward(&a.z, &d_out, &mut grad.output, Some(&mut dz));
    tanh_backward(&a.z, &mut dz);
    let mut dcat = [0.0; HISTORY_EMBED + MAP_EMBED];
    model.hidden.backward(&a.cat, &dz, &mut grad.hidden, Some(&mut dcat));
    let mut dh = [0.0; HISTORY_EMBED];
    dh.copy_from_slice(&dcat[..HISTORY_EMBED]);
    tanh_backward(&a.h, &mut dh);
    model.history.backward(&s.prepared.history, &dh, &mut grad.history, None);
    if !s.prepared.tokens.is_empty() {
        let dm = &dcat[HISTORY_EMBED..];
        let mut seen: Vec<usize> = a.argmax.to_vec();
        seen.sort_unstable();
        seen.dedup();
        for i in seen {
            let mut de = [0.0; MAP_EMBED];
            let mut e = [0.0; MAP_EMBED];
            for j in 0..MAP_EMBED {
                if a.argmax[j] == i {
                    de[j] = dm[j];
                    e[j] = a.pooled[j];
                }
            }
            tanh_backward(&e, &mut de);
            model.token.backward(&s.prepared.tokens[i], &de, &mut grad.token, None);
        }
    }
    (errs[best], ce, sel)
}

fn batch_loss(model: &PredictorModel, batch: &[&Sample], grad: Option<&mut PredictorModel>) -> PredictorLoss {
    batch_loss_with(model, batch, grad, None).0
}

fn batch_loss_with(
    model: &PredictorModel,
    batch: &[&Sample],
    mut grad: Option<&mut PredictorModel>,
    fixed: Option<&[Selection]>,
) -> (PredictorLoss, Vec<Selection>) {
    let scale = 1.0 / batch.len() as f64;
    let mut traj = 0.0;
    let mut cls = 0.0;
    let mut sels = Vec::with_capacity(batch.len());
    for (i, s) in batch.iter().enumerate() {
        let (t, c, sel) = sample_loss(model, s, scale, grad.as_deref_mut(), fixed.map(|f| &f[i]));
        sels.push(sel);
        traj += t;
        cls += c;
    }
    let loss = PredictorLoss {
        total: scale * (traj + cls),
        trajectory: scale * traj,
        classification: scale * cls,
    };
    (loss, sels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorTrainConfig {
    pub learning_rate: f64,
    pub grad_norm_clip: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for PredictorTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0e-3,
            grad_norm_clip: 3.0,
            epochs: 40,
            batch_size: 32,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl PredictorTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be non-negative and finite"));
        }
        if self.grad_norm_clip.is_nan() || self.grad_norm_clip <= 0.0 {
            return Err(Error::config("grad_norm_clip", "must be positive"));
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
pub struct PredictorEpoch {
    pub epoch: usize,
    pub total: f64,
    pub trajectory: f64,
    pub classification: f64,
}

/// Full-dataset loss after each epoch; epoch 0 is the initial model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictorTrace(pub Vec<PredictorEpoch>);

impl PredictorTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,total,trajectory,classification\n");
        for e in &self.0 {
            writeln!(out, "{},{:.17e},{:.17e},{:.17e}", e.epoch, e.total, e.trajectory, e.classification).unwrap();
        }
        out
    }
}

fn full_loss(model: &PredictorModel, samples: &[Sample]) -> PredictorLoss {
    let refs: Vec<&Sample> = samples.iter().collect();
    batch_loss(model, &refs, None)
}

/// Mini-batch winner-takes-all training.
pub fn train_predictor(
    scenes: &[PredictionScene],
    variant: Variant,
    cfg: &PredictorTrainConfig,
) -> Result<(PredictorModel, PredictorTrace)> {
    cfg.validate()?;
    let mut model = PredictorModel::init(cfg.seed, variant);
    let samples = prepare_samples(&model, scenes)?;
    if samples.is_empty() {
        return Err(Error::Empty("predictor training set has no agents".into()));
    }
    let record = |epoch, l: PredictorLoss| -> Result<PredictorEpoch> {
        if !l.total.is_finite() {
            return Err(Error::Diverged {
                epoch,
                message: format!("predictor loss became {}", l.total),
            });
        }
        Ok(PredictorEpoch {
            epoch,
            total: l.total,
            trajectory: l.trajectory,
            classification: l.classification,
        })
    };
    let mut trace = vec![record(0, full_loss(&model, &samples))?];
    let mut params = model.flat_params();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.grad_norm_clip, params.len());
    let mut grad = PredictorModel::zeros(variant);
    let zero = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 1..=cfg.epochs {
        let mut rng = rng_from(sub_seed(cfg.seed, Stream::PredTrain, epoch as u64));
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
            grad.set_flat_params(&zero);
            let l = batch_loss(&model, &batch, Some(&mut grad));
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
        trace.push(record(epoch, full_loss(&model, &samples))?);
    }
    Ok((model, PredictorTrace(trace)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorGradCheck {
    pub max_relative_error: f64,
    pub parameters_checked: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Central-difference check of the winner-takes-all gradient over every
/// parameter.
///
/// The loss has kinks where the best mode or a pooling winner changes. Both
/// gradients are taken with those discrete choices held at their values at
/// the unperturbed parameters, so the checked function is smooth. The
/// numeric side is a Richardson-extrapolated central difference.
pub fn predictor_grad_check(model: &PredictorModel, scenes: &[PredictionScene], epsilon: f64) -> Result<PredictorGradCheck> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::domain(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let samples = prepare_samples(model, scenes)?;
    if samples.is_empty() {
        return Err(Error::Empty("grad-check sample".into()));
    }
    let refs: Vec<&Sample> = samples.iter().collect();
    let (_, held) = batch_loss_with(model, &refs, None, None);
    let mut grad = PredictorModel::zeros(model.variant);
    batch_loss_with(model, &refs, Some(&mut grad), Some(&held));
    let analytic = grad.flat_params();
    let mut probe = model.clone();
    let numeric = richardson_difference(
        &mut |p: &[f64]| {
            probe.set_flat_params(p);
            batch_loss_with(&probe, &refs, None, Some(&held)).0.total
        },
        &model.flat_params(),
        epsilon,
    );
    let max_relative_error = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max);
    Ok(PredictorGradCheck {
        max_relative_error,
        parameters_checked: analytic.len(),
        analytic,
        numeric,
    })
}

/// Forecast every agent of every scene, in input order.
pub fn predict_scenes(model: &PredictorModel, scenes: &[PredictionScene]) -> Result<Vec<Vec<PredictionSet>>> {
    scenes
        .iter()
        .map(|s| {
            s.agents
                .iter()
                .map(|a| predict(model, &a.history.samples, &s.tokens))
                .collect()
        })
        .collect()
}

/// `scene_id,agent_id,mode,step,x,y,score` rows.
pub fn predictions_to_csv(scenes: &[PredictionScene], predictions: &[Vec<PredictionSet>]) -> Result<String> {
    if scenes.len() != predictions.len() {
        return Err(Error::LengthMismatch {
            expected: scenes.len(),
            actual: predictions.len(),
        });
    }
    let mut out = String::from("scene_id,agent_id,mode,step,x,y,score\n");
    for (s, preds) in scenes.iter().zip(predictions) {
        if s.agents.len() != preds.len() {
            return Err(Error::LengthMismatch {
                expected: s.agents.len(),
                actual: preds.len(),
            });
        }
        for (a, p) in s.agents.iter().zip(preds) {
            for (k, mode) in p.modes.iter().enumerate() {
                for (t, q) in mode.iter().enumerate() {
                    writeln!(
                        out,
                        "{},{},{},{},{:.6},{:.6},{:.9}",
                        s.scene_id,
                        a.id,
                        k,
                        t + 1,
                        q.x,
                        q.y,
                        p.scores[k]
                    )
                    .unwrap();
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map_model::Trajectory;
    use crate::rng::sample_normal;
    use rand::Rng;

    fn random_token<R: Rng>(rng: &mut R) -> MapToken {
        let mut c = [0.0; NUM_CLASSES];
        for v in &mut c {
            *v = rng.random_range(0.01..1.0);
        }
        let s: f64 = c.iter().sum();
        c.iter_mut().for_each(|v| *v /= s);
        let mut d = [0.0; NUM_CLASSES];
        for v in &mut d {
            *v = rng.random_range(0.0..0.5);
        }
        MapToken {
            mu: Point2::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)),
            beta: rng.random_range(0.0..2.0),
            c_bar: c,
            delta_c: d,
        }
    }

    fn random_model(seed: u64, variant: Variant) -> PredictorModel {
        let mut m = PredictorModel::zeros(variant);
        let mut rng = rng_from(seed);
        let p: Vec<f64> = (0..m.param_count()).map(|_| sample_normal(&mut rng, 0.3)).collect();
        m.set_flat_params(&p);
        m
    }

    fn straight_history(speed: f64, heading: f64) -> Vec<Point2> {
        let dir = Point2::new(heading.cos(), heading.sin());
        (0..HISTORY_LEN).map(|i| Point2::new(-5.0, 2.0) + dir * (speed * 0.1 * i as f64)).collect()
    }

    fn random_scene(seed: u64, n_tokens: usize, n_agents: usize) -> PredictionScene {
        let mut rng = rng_from(seed);
        let tokens = (0..n_tokens).map(|_| random_token(&mut rng)).collect();
        let agents = (0..n_agents as u64)
            .map(|id| {
                let h = straight_history(rng.random_range(1.0..10.0), rng.random_range(-3.0..3.0));
                let last = h[HISTORY_LEN - 1];
                let future = (1..=FUTURE_LEN)
                    .map(|t| last + Point2::new(0.5 * t as f64, 0.02 * (t * t) as f64))
                    .collect();
                AgentTrack {
                    id,
                    history: Trajectory { agent_id: id, samples: h },
                    future: Trajectory {
                        agent_id: id,
                        samples: future,
                    },
                }
            })
            .collect();
        PredictionScene {
            scene_id: seed,
            tokens,
            agents,
        }
    }

    #[test]
    fn zero_model_on_stationary_history_stays_put() {
        let m = PredictorModel::zeros(Variant::Both);
        let h = vec![Point2::ZERO; HISTORY_LEN];
        let p = predict(&m, &h, &[]).unwrap();
        p.validate().unwrap();
        assert!(p.modes.iter().flatten().all(|q| *q == Point2::ZERO));
        assert!(p.scores.iter().all(|s| (*s - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn predict_is_deterministic_and_valid() {
        let m = random_model(1, Variant::Both);
        let s = random_scene(2, 12, 3);
        for a in &s.agents {
            let p1 = predict(&m, &a.history.samples, &s.tokens).unwrap();
            p1.validate().unwrap();
            assert_eq!(p1, predict(&m, &a.history.samples, &s.tokens).unwrap());
        }
        let mut bad = s.agents[0].history.samples.clone();
        bad[3].x = f64::NAN;
        assert!(predict(&m, &bad, &s.tokens).is_err());
    }

    #[test]
    fn encode_map_is_permutation_invariant() {
        let m = random_model(3, Variant::Both);
        let mut rng = rng_from(4);
        let frame = AgentFrame {
            origin: Point2::new(3.0, -1.0),
            heading: 0.4,
        };
        for _ in 0..20 {
            let n = rng.random_range(1..20);
            let mut toks: Vec<MapToken> = (0..n).map(|_| random_token(&mut rng)).collect();
            let a = encode_map(&m, &toks, &frame);
            toks.shuffle(&mut rng);
            assert_eq!(a, encode_map(&m, &toks, &frame));
        }
        assert_eq!(encode_map(&m, &[], &frame), [0.0; MAP_EMBED]);
    }

    #[test]
    fn encode_map_single_token_and_beta_sensitivity() {
        let m = random_model(5, Variant::Both);
        let mut rng = rng_from(6);
        let t = random_token(&mut rng);
        let f = token_features(&t, &AgentFrame::IDENTITY, PerceptionRange::default());
        let mut e = [0.0; MAP_EMBED];
        m.token.forward(&f, &mut e);
        tanh_inplace(&mut e);
        assert_eq!(encode_map(&m, &[t], &AgentFrame::IDENTITY), e);

        let doubled = MapToken { beta: 2.0 * t.beta, ..t };
        let a = encode_map(&m, &[t], &AgentFrame::IDENTITY);
        let b = encode_map(&m, &[doubled], &AgentFrame::IDENTITY);
        let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(diff > 0.0);
    }

    #[test]
    fn masked_variants_ignore_masked_channels() {
        let mut rng = rng_from(7);
        let s = random_scene(8, 15, 2);
        for v in Variant::ALL {
            let m = random_model(9, v);
            let mut perturbed = s.clone();
            for t in &mut perturbed.tokens {
                t.beta = rng.random_range(0.0..5.0);
                for d in &mut t.delta_c {
                    *d = rng.random_range(0.0..1.0);
                }
            }
            let h = &s.agents[0].history.samples;
            let same = predict(&m, h, &s.tokens).unwrap() == predict(&m, h, &perturbed.tokens).unwrap();
            assert_eq!(same, v == Variant::Baseline, "{v}");
        }
        // Perturbing only the masked channel leaves the output unchanged.
        let pos = random_model(9, Variant::PosOnly);
        let mut only_dc = s.clone();
        only_dc.tokens.iter_mut().for_each(|t| t.delta_c = [0.9; 4]);
        let h = &s.agents[0].history.samples;
        assert_eq!(predict(&pos, h, &s.tokens).unwrap(), predict(&pos, h, &only_dc.tokens).unwrap());
        let sem = random_model(9, Variant::SemOnly);
        let mut only_beta = s.clone();
        only_beta.tokens.iter_mut().for_each(|t| t.beta = 7.0);
        assert_eq!(predict(&sem, h, &s.tokens).unwrap(), predict(&sem, h, &only_beta.tokens).unwrap());
    }

    #[test]
    fn constant_velocity_examples() {
        let h: Vec<Point2> = (0..HISTORY_LEN).map(|i| Point2::new(0.1 * i as f64, 0.0)).collect();
        let p = constant_velocity_baseline(&h).unwrap();
        p.validate().unwrap();
        let end = p.modes[0][FUTURE_LEN - 1];
        assert!((end.x - (h[HISTORY_LEN - 1].x + 3.0)).abs() < 1e-12 && end.y.abs() < 1e-12);

        let still = vec![Point2::new(4.0, 1.0); 5];
        let p = constant_velocity_baseline(&still).unwrap();
        assert!(p.modes.iter().flatten().all(|q| *q == Point2::new(4.0, 1.0)));
        assert!(constant_velocity_baseline(&still[..1]).is_err());
    }

    #[test]
    fn constant_velocity_on_a_circle_matches_closed_form() {
        let r: f64 = 20.0;
        let phi: f64 = 0.02;
        let on = |a: f64| Point2::new(r * a.cos(), r * a.sin());
        let h: Vec<Point2> = (0..HISTORY_LEN).map(|i| on(phi * i as f64)).collect();
        let a_last = phi * (HISTORY_LEN - 1) as f64;
        let arc_end = on(a_last + phi * FUTURE_LEN as f64);
        // Chord of the last step: length 2R sin(φ/2), direction a_last − φ/2 + π/2.
        let chord_len = 2.0 * r * (phi / 2.0).sin();
        let chord_dir = a_last - phi / 2.0 + std::f64::consts::FRAC_PI_2;
        let deg = std::f64::consts::PI / 180.0;
        let expected = [(0.0, 1.0), (10.0, 1.0), (-10.0, 1.0), (20.0, 1.0), (-20.0, 1.0), (0.0, 0.8)]
            .iter()
            .map(|&(d, f)| {
                let a = chord_dir + d * deg;
                let end = on(a_last) + Point2::new(a.cos(), a.sin()) * (FUTURE_LEN as f64 * f * chord_len);
                end.distance(arc_end)
            })
            .fold(f64::INFINITY, f64::min);
        let p = constant_velocity_baseline(&h).unwrap();
        let got = p
            .modes
            .iter()
            .map(|m| m[FUTURE_LEN - 1].distance(arc_end))
            .fold(f64::INFINITY, f64::min);
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
        // Mode 1 leaves the arc.
        assert!(p.modes[0][FUTURE_LEN - 1].distance(arc_end) > 1.0);
    }

    #[test]
    fn grad_check_on_random_predictors() {
        for seed in 0..3 {
            let m = random_model(20 + seed, Variant::Both);
            let s = random_scene(30 + seed, 6, 2);
            let r = predictor_grad_check(&m, &[s], 1e-5).unwrap();
            assert!(r.max_relative_error < 1e-4, "seed {seed}: {}", r.max_relative_error);
        }
    }

    #[test]
    fn zero_learning_rate_and_determinism() {
        let scenes: Vec<_> = (0..3).map(|i| random_scene(40 + i, 10, 3)).collect();
        let cfg = PredictorTrainConfig {
            learning_rate: 0.0,
            epochs: 2,
            ..Default::default()
        };
        let (m, _) = train_predictor(&scenes, Variant::Both, &cfg).unwrap();
        assert_eq!(m, PredictorModel::init(0, Variant::Both));

        let cfg = PredictorTrainConfig {
            epochs: 3,
            seed: 5,
            ..Default::default()
        };
        let (m1, t1) = train_predictor(&scenes, Variant::Both, &cfg).unwrap();
        let (m2, t2) = train_predictor(&scenes, Variant::Both, &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(t1.to_csv(), t2.to_csv());
        assert!(t1.0.last().unwrap().total < t1.0[0].total);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = random_model(50, Variant::SemOnly);
        assert_eq!(PredictorModel::from_checkpoint(&m.to_checkpoint()).unwrap(), m);
    }

    #[test]
    fn prediction_csv_layout() {
        let s = random_scene(60, 3, 1);
        let m = PredictorModel::zeros(Variant::Both);
        let preds = predict_scenes(&m, std::slice::from_ref(&s)).unwrap();
        let csv = predictions_to_csv(std::slice::from_ref(&s), &preds).unwrap();
        assert_eq!(csv.lines().count(), 1 + NUM_MODES * FUTURE_LEN);
        assert!(csv.starts_with("scene_id,agent_id,mode,step,x,y,score\n60,0,0,1,"));
    }
}
