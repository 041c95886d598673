//! Uncertainty mathematics for the dual-head map estimator.
//!
//! Positional uncertainty is the KL divergence between the per-axis Laplace
//! laws emitted by the primary and auxiliary heads, summed over both axes.
//! Semantic uncertainty is the componentwise squared difference of the two
//! heads' class scores; their mean is the fused confidence. All divergences
//! are in nats.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map_model::{Point2, NUM_CLASSES};
use crate::rng::{rng_from, sample_normal, sub_seed, Stream};

const SIMPLEX_TOL: f64 = 1e-6;

/// Per-vertex Laplace position law: location `mu` (normalized BEV) and
/// per-axis scale `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplacePoint {
    pub mu: Point2,
    pub b: Point2,
}

impl LaplacePoint {
    pub fn new(mu: Point2, b: Point2) -> Result<Self> {
        let p = Self { mu, b };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::domain("Laplace location must be finite"));
        }
        if !(self.b.x > 0.0 && self.b.y > 0.0 && self.b.is_finite()) {
            return Err(Error::domain(format!(
                "Laplace scales must be positive and finite, got ({}, {})",
                self.b.x, self.b.y
            )));
        }
        Ok(())
    }
}

/// Class-probability vector on the simplex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores(pub [f64; NUM_CLASSES]);

impl ClassScores {
    pub fn new(c: [f64; NUM_CLASSES]) -> Result<Self> {
        let s = Self(c);
        s.validate()?;
        Ok(s)
    }

    pub fn uniform() -> Self {
        Self([1.0 / NUM_CLASSES as f64; NUM_CLASSES])
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|&p| !p.is_finite() || p < -SIMPLEX_TOL) {
            return Err(Error::domain(format!("scores {:?} have a negative or non-finite entry", self.0)));
        }
        let sum: f64 = self.0.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::domain(format!("scores {:?} sum to {sum}, not 1", self.0)));
        }
        Ok(())
    }

    pub fn argmax(&self) -> usize {
        self.0
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
            .0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemanticFusion {
    pub c_bar: [f64; NUM_CLASSES],
    pub delta_c: [f64; NUM_CLASSES],
}

/// Per-vertex positional uncertainty in nats.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
pub struct PositionalUncertainty {
    pub beta: f64,
}

/// KL(p ‖ q) between two 1-D Laplace laws `(location, scale)`.
pub fn laplace_kl(p: (f64, f64), q: (f64, f64)) -> Result<f64> {
    let (mu1, b1) = p;
    let (mu2, b2) = q;
    if !(b1 > 0.0 && b2 > 0.0 && b1.is_finite() && b2.is_finite()) {
        return Err(Error::domain(format!("Laplace scales must be positive, got {b1} and {b2}")));
    }
    if !(mu1.is_finite() && mu2.is_finite()) {
        return Err(Error::domain("Laplace locations must be finite"));
    }
    let d = (mu1 - mu2).abs();
    let r = b1 / b2;
    // ln(b2/b1) + r - 1 is written as (r - 1 - ln r) so identical scales give an exact zero.
    let kl = (r - 1.0 - r.ln()) + d / b2 + r * ((-d / b1).exp_m1());
    Ok(kl.max(0.0))
}

/// Which divergence [`positional_uncertainty_with`] computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalMethod {
    /// KL(primary ‖ auxiliary) between the per-axis Laplace laws, summed over axes.
    #[default]
    LaplaceKl,
    /// Mean over axes of `mu · ln(mu / mu_aux)`, treating the location vectors
    /// themselves as unnormalized densities. Defined only for strictly positive
    /// coordinates; kept for comparison.
    LiteralElementwise,
}

pub fn positional_uncertainty(primary: &LaplacePoint, aux: &LaplacePoint) -> Result<PositionalUncertainty> {
    primary.validate()?;
    aux.validate()?;
    let beta = laplace_kl((primary.mu.x, primary.b.x), (aux.mu.x, aux.b.x))?
        + laplace_kl((primary.mu.y, primary.b.y), (aux.mu.y, aux.b.y))?;
    Ok(PositionalUncertainty { beta })
}

pub fn literal_elementwise_divergence(mu: Point2, mu_aux: Point2) -> Result<f64> {
    if !(mu.x > 0.0 && mu.y > 0.0 && mu_aux.x > 0.0 && mu_aux.y > 0.0) {
        return Err(Error::domain(
            "elementwise divergence needs strictly positive normalized coordinates",
        ));
    }
    Ok(0.5 * (mu.x * (mu.x / mu_aux.x).ln() + mu.y * (mu.y / mu_aux.y).ln()))
}

pub fn positional_uncertainty_with(
    method: PositionalMethod,
    primary: &LaplacePoint,
    aux: &LaplacePoint,
) -> Result<f64> {
    match method {
        PositionalMethod::LaplaceKl => positional_uncertainty(primary, aux).map(|p| p.beta),
        PositionalMethod::LiteralElementwise => literal_elementwise_divergence(primary.mu, aux.mu),
    }
}

/// Mean score and squared-difference uncertainty of two class-score vectors.
pub fn semantic_fuse(c: &ClassScores, c_aux: &ClassScores) -> Result<SemanticFusion> {
    c.validate()?;
    c_aux.validate()?;
    let mut c_bar = [0.0; NUM_CLASSES];
    let mut delta_c = [0.0; NUM_CLASSES];
    for k in 0..NUM_CLASSES {
        c_bar[k] = 0.5 * (c.0[k] + c_aux.0[k]);
        let d = c.0[k] - c_aux.0[k];
        delta_c[k] = (d * d).min(1.0);
    }
    Ok(SemanticFusion { c_bar, delta_c })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    L1,
    #[default]
    L2,
}

/// Norm of the gap between the two heads' outputs.
pub fn prediction_difference(p_main: &[f64], p_aux: &[f64], norm: Norm) -> Result<f64> {
    if p_main.len() != p_aux.len() {
        return Err(Error::LengthMismatch {
            expected: p_main.len(),
            actual: p_aux.len(),
        });
    }
    let diffs = p_main.iter().zip(p_aux).map(|(a, b)| a - b);
    Ok(match norm {
        Norm::L1 => diffs.map(f64::abs).sum(),
        Norm::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
    })
}

/// Scalar model used to probe how head disagreement scales with parameter spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Probe {
    /// p(θ) = θ·x
    Linear { x: f64 },
    /// p(θ) = σ(θ·x)
    Sigmoid { x: f64 },
}

impl Probe {
    pub fn eval(&self, theta: f64) -> f64 {
        match *self {
            Probe::Linear { x } => theta * x,
            Probe::Sigmoid { x } => 1.0 / (1.0 + (-theta * x).exp()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionalityFit {
    /// `(sigma, mean D)` for every grid point, in grid order.
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub correlation: f64,
}

impl ProportionalityFit {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sigma,mean_d\n");
        for (s, d) in &self.points {
            writeln!(out, "{s},{d}").unwrap();
        }
        out
    }
}

/// Monte-Carlo check that the mean head disagreement grows linearly with the
/// standard deviation of the parameter law.
///
/// For each σ in the grid, `n_samples` pairs θ_main, θ_aux are drawn i.i.d.
/// from N(θ₀, σ²) and D = |p(θ_main) − p(θ_aux)| is averaged. The mean-D
/// curve is then fitted by least squares against σ.
pub fn verify_proportionality(
    probe: Probe,
    theta0: f64,
    sigma_grid: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<ProportionalityFit> {
    if sigma_grid.len() < 4 {
        return Err(Error::domain("sigma grid needs at least 4 points"));
    }
    if n_samples < 10_000 {
        return Err(Error::domain("need at least 10^4 samples per grid point"));
    }
    if sigma_grid.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::domain("sigma grid entries must be finite and non-negative"));
    }
    if sigma_grid.iter().all(|&s| s == sigma_grid[0]) {
        return Err(Error::domain("degenerate sigma grid: all entries equal"));
    }
    let points: Vec<(f64, f64)> = sigma_grid
        .iter()
        .enumerate()
        .map(|(i, &sigma)| {
            let mut rng = rng_from(sub_seed(seed, Stream::Verify, i as u64));
            let mut acc = 0.0;
            for _ in 0..n_samples {
                let main = theta0 + sample_normal(&mut rng, sigma);
                let aux = theta0 + sample_normal(&mut rng, sigma);
                acc += (probe.eval(main) - probe.eval(aux)).abs();
            }
            (sigma, acc / n_samples as f64)
        })
        .collect();
    let (slope, intercept, correlation) = linear_fit(&points);
    Ok(ProportionalityFit {
        points,
        slope,
        intercept,
        correlation,
    })
}

/// Ordinary least squares of y on x plus Pearson correlation.
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let correlation = if syy > 0.0 { sxy / (sxx * syy).sqrt() } else { 0.0 };
    (slope, intercept, correlation)
}
