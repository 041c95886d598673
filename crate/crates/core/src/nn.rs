//! Minimal dense-layer machinery shared by the map estimator and the
//! trajectory predictor: affine layers with hand-written backward passes,
//! gradient-norm clipping, SGD with momentum and Adam, and a plain-text
//! checkpoint format.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{sample_normal, StageRng};

/// Affine layer `y = W x + b` with `W` stored row-major as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
        }
    }

    /// Normal init with std `gain / √in_dim`, zero bias.
    pub fn init(in_dim: usize, out_dim: usize, gain: f64, rng: &mut StageRng) -> Self {
        let std = gain / (in_dim as f64).sqrt();
        let mut layer = Self::zeros(in_dim, out_dim);
        for w in &mut layer.w {
            *w = sample_normal(rng, std);
        }
        layer
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn forward(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for (o, (row, &bias)) in out.iter_mut().zip(self.w.chunks_exact(self.in_dim).zip(&self.b)) {
            *o = bias + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Accumulate parameter gradients into `grad` and, if requested, add the
    /// input gradient into `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense, dx: Option<&mut [f64]>) {
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.b[o] += g;
            let row = &mut grad.w[o * self.in_dim..(o + 1) * self.in_dim];
            for (r, v) in row.iter_mut().zip(x) {
                *r += g * v;
            }
        }
        if let Some(dx) = dx {
            for (o, &g) in dy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
                for (d, w) in dx.iter_mut().zip(row) {
                    *d += g * w;
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(&self.b).all(|v| v.is_finite())
    }
}

/// A model made of named dense layers, in a fixed order.
pub trait Layered {
    fn layers(&self) -> Vec<(&'static str, &Dense)>;
    fn layers_mut(&mut self) -> Vec<&mut Dense>;

    fn param_count(&self) -> usize {
        self.layers().iter().map(|(_, l)| l.param_count()).sum()
    }

    /// All parameters flattened layer by layer, weights before biases.
    fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (_, l) in self.layers() {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    fn set_flat_params(&mut self, flat: &[f64]) {
        let mut at = 0;
        for l in self.layers_mut() {
            let nw = l.w.len();
            l.w.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        assert_eq!(at, flat.len(), "flat parameter length mismatch");
    }

    fn all_finite(&self) -> bool {
        self.layers().iter().all(|(_, l)| l.is_finite())
    }
}

pub fn tanh_inplace(v: &mut [f64]) {
    for x in v {
        *x = x.tanh();
    }
}

/// Multiply an upstream gradient by tanh' given the activation values.
pub fn tanh_backward(activation: &[f64], grad: &mut [f64]) {
    for (g, a) in grad.iter_mut().zip(activation) {
        *g *= 1.0 - a * a;
    }
}

pub fn softmax(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// `-ln softmax(logits)[target]`, computed stably.
pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    lse - logits[target]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Heavy-ball SGD, v ← μ v + g, θ ← θ − lr v, with μ = 0.9.
    #[default]
    Momentum,
    Adam,
}

/// Optimizer state over a flattened parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    clip: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

pub const MOMENTUM: f64 = 0.9;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, clip: f64, n_params: usize) -> Self {
        Self {
            kind,
            lr,
            clip,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// Clip `grad` to global L2 norm `clip` in place and apply one update.
    /// Returns the pre-clip gradient norm.
    pub fn step(&mut self, params: &mut [f64], grad: &mut [f64]) -> f64 {
        let norm = clip_grad_norm(grad, self.clip);
        self.t += 1;
        match self.kind {
            OptimizerKind::Momentum => {
                for ((p, g), m) in params.iter_mut().zip(grad.iter()).zip(&mut self.m) {
                    *m = MOMENTUM * *m + g;
                    *p -= self.lr * *m;
                }
            }
            OptimizerKind::Adam => {
                let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
                for (((p, g), m), v) in params.iter_mut().zip(grad.iter()).zip(&mut self.m).zip(&mut self.v) {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *p -= self.lr * mh / (vh.sqrt() + ADAM_EPS);
                }
            }
        }
        norm
    }
}

/// Rescale `grad` so its L2 norm is at most `max_norm`; returns the original norm.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= s;
        }
    }
    norm
}

/// Plain-text checkpoint: a header naming the model, then per layer its name,
/// shape and row-major weights followed by biases, 17 significant digits.
///
/// ```text
/// uncmap-checkpoint 1 <model>
/// layer <name> <out_dim> <in_dim>
/// w <v> <v> ...        # out_dim × in_dim values
/// b <v> ...            # out_dim values
/// end
/// ```
pub fn write_checkpoint(model_name: &str, model: &impl Layered) -> String {
    let mut out = format!("uncmap-checkpoint 1 {model_name}\n");
    for (name, l) in model.layers() {
        writeln!(out, "layer {name} {} {}", l.out_dim, l.in_dim).unwrap();
        out.push('w');
        for v in &l.w {
            write!(out, " {v:.16e}").unwrap();
        }
        out.push_str("\nb");
        for v in &l.b {
            write!(out, " {v:.16e}").unwrap();
        }
        out.push('\n');
    }
    out.push_str("end\n");
    out
}

/// Load parameters from a checkpoint into `model`, whose layer names and
/// shapes must match.
pub fn read_checkpoint(text: &str, model_name: &str, model: &mut impl Layered) -> Result<()> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let header = format!("uncmap-checkpoint 1 {model_name}");
    match lines.next() {
        Some((_, l)) if l.trim() == header => {}
        _ => return Err(Error::parse(1, format!("expected header `{header}`"))),
    }
    let expected: Vec<(&'static str, usize, usize)> = model
        .layers()
        .iter()
        .map(|(n, l)| (*n, l.out_dim, l.in_dim))
        .collect();
    let mut values = Vec::with_capacity(model.param_count());
    for (name, out_dim, in_dim) in expected {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| Error::parse(0, format!("missing layer `{name}`")))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 || toks[0] != "layer" || toks[1] != name {
            return Err(Error::parse(ln + 1, format!("expected `layer {name} ...`")));
        }
        if toks[2] != out_dim.to_string() || toks[3] != in_dim.to_string() {
            return Err(Error::parse(
                ln + 1,
                format!("layer `{name}` has shape {}×{}, expected {out_dim}×{in_dim}", toks[2], toks[3]),
            ));
        }
        for (tag, count) in [("w", out_dim * in_dim), ("b", out_dim)] {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("layer `{name}` truncated")))?;
            let mut toks = line.split_whitespace();
            if toks.next() != Some(tag) {
                return Err(Error::parse(ln + 1, format!("expected `{tag}` row")));
            }
            let row: Vec<f64> = toks
                .map(|t| t.parse::<f64>().map_err(|_| Error::parse(ln + 1, format!("bad value `{t}`"))))
                .collect::<Result<_>>()?;
            if row.len() != count {
                return Err(Error::parse(
                    ln + 1,
                    format!("`{tag}` row of `{name}` has {} values, expected {count}", row.len()),
                ));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("checkpoint layer `{name}`")));
            }
            values.extend(row);
        }
    }
    match lines.next() {
        Some((_, l)) if l.trim() == "end" => {}
        _ => return Err(Error::parse(0, "missing `end`")),
    }
    model.set_flat_params(&values);
    Ok(())
}
