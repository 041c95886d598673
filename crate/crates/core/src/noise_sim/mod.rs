//! Synthetic scenes and the noisy per-vertex observations that stand in for
//! a camera/BEV perception stack.

mod layouts;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map_model::{
    normalize_unchecked, validate_scene, ElementClass, EgoPose, PerceptionRange, Point2, Scene,
    NUM_CLASSES,
};
use crate::rng::{rng_from, sample_laplace, sample_normal, sub_seed, Stream};

pub use layouts::{LANE_WIDTH, MAX_SPEED, MIN_SPEED, VERTEX_SPACING};

/// Width of the per-vertex estimator input: noisy position (2), offsets to the
/// previous and next observed vertex (2 + 2), observed-class one-hot (4).
pub const CONTEXT_WIDTH: usize = 10;

/// Neighbor offsets are normalized-BEV deltas multiplied by this gain so they
/// sit on the same order of magnitude as the positions.
pub const CONTEXT_OFFSET_GAIN: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Straight,
    Curve,
    Intersection,
    Parking,
}

impl Layout {
    pub const ALL: [Layout; 4] = [
        Layout::Straight,
        Layout::Curve,
        Layout::Intersection,
        Layout::Parking,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Layout::Straight => "straight",
            Layout::Curve => "curve",
            Layout::Intersection => "intersection",
            Layout::Parking => "parking",
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::UnknownLayout(s.to_string()))
    }
}

/// Build a deterministic ground-truth scene for `(layout, seed)`.
pub fn generate_scene(layout: Layout, seed: u64) -> Scene {
    let mut rng = rng_from(sub_seed(seed, Stream::SceneGen, layout as u64));
    let range = PerceptionRange::default();
    let (builder, speed_cap) = match layout {
        Layout::Straight => (layouts::straight(&mut rng), MAX_SPEED),
        Layout::Curve => (layouts::curve(&mut rng), MAX_SPEED),
        Layout::Intersection => (layouts::intersection(&mut rng), 9.0),
        Layout::Parking => (layouts::parking(&mut rng), 5.0),
    };
    let n_agents = rng.random_range(3..=6);
    let (elements, agents) = builder.finish(&mut rng, range, n_agents, speed_cap);
    Scene {
        seed,
        ego_pose: EgoPose::default(),
        elements,
        agents,
    }
}

/// Parse-and-generate convenience for string layout tags.
pub fn generate_scene_by_name(layout: &str, seed: u64) -> Result<Scene> {
    Ok(generate_scene(layout.parse()?, seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JitterLaw {
    #[default]
    Laplace,
    /// Normal jitter with the same variance as the Laplace law of equal scale
    /// (std = scale · √2); for misspecification experiments.
    Gaussian,
}

/// Angular sector around the ego in which vertices may go missing.
/// Angles are radians from the +x axis, counter-clockwise, in [-π, π];
/// a sector with `angle_start > angle_end` wraps through ±π.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionSector {
    pub angle_start: f64,
    pub angle_end: f64,
    pub drop_prob: f64,
}

impl OcclusionSector {
    pub fn contains(&self, angle: f64) -> bool {
        if self.angle_start <= self.angle_end {
            angle >= self.angle_start && angle <= self.angle_end
        } else {
            angle >= self.angle_start || angle <= self.angle_end
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Laplace scale of the per-axis positional jitter, meters.
    pub pos_scale_b: f64,
    pub jitter: JitterLaw,
    pub occlusion_sectors: Vec<OcclusionSector>,
    /// Row-stochastic class confusion matrix, rows indexed by the true class.
    pub confusion: [[f64; NUM_CLASSES]; NUM_CLASSES],
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            pos_scale_b: 0.3,
            jitter: JitterLaw::Laplace,
            occlusion_sectors: Vec::new(),
            confusion: confusion_with_flip(0.0),
            seed: 0,
        }
    }
}

/// Confusion matrix keeping the true class with probability `1 - eps` and
/// spreading `eps` evenly over the other classes.
pub fn confusion_with_flip(eps: f64) -> [[f64; NUM_CLASSES]; NUM_CLASSES] {
    let off = eps / (NUM_CLASSES - 1) as f64;
    let mut m = [[off; NUM_CLASSES]; NUM_CLASSES];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0 - eps;
    }
    m
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pos_scale_b > 0.0 && self.pos_scale_b.is_finite()) {
            return Err(Error::config("pos_scale_b", "must be positive and finite"));
        }
        for (i, s) in self.occlusion_sectors.iter().enumerate() {
            if !(0.0..=1.0).contains(&s.drop_prob) {
                return Err(Error::config(
                    format!("occlusion_sectors[{i}].drop_prob"),
                    "must lie in [0, 1]",
                ));
            }
            if !(s.angle_start.is_finite() && s.angle_end.is_finite()) {
                return Err(Error::config(format!("occlusion_sectors[{i}]"), "angles must be finite"));
            }
        }
        for (i, row) in self.confusion.iter().enumerate() {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::config(format!("confusion[{i}]"), "entries must lie in [0, 1]"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::config(
                    format!("confusion[{i}]"),
                    format!("row sums to {sum}, expected 1"),
                ));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: NoiseConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

/// One surviving, corrupted map vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub element_id: u64,
    /// Index of the vertex within its ground-truth element.
    pub vertex_index: usize,
    pub observed_class: ElementClass,
    /// Noisy position in normalized BEV coordinates.
    pub position: Point2,
    pub context: [f64; CONTEXT_WIDTH],
}

fn sample_class<R: Rng + ?Sized>(rng: &mut R, row: &[f64; NUM_CLASSES]) -> ElementClass {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return ElementClass::from_index(i).unwrap();
        }
    }
    // Rounding slack in the cumulative sum: fall back to the last class with mass.
    let last = row.iter().rposition(|&p| p > 0.0).unwrap_or(NUM_CLASSES - 1);
    ElementClass::from_index(last).unwrap()
}

/// Corrupt every ground-truth vertex of `scene` according to `cfg`.
///
/// Each vertex consumes a fixed number of random draws whether or not it
/// survives, so the stream for one vertex does not depend on earlier drops.
pub fn corrupt_observation(scene: &Scene, cfg: &NoiseConfig) -> Vec<Observation> {
    let range = PerceptionRange::default();
    let mut rng = rng_from(sub_seed(cfg.seed, Stream::Corruption, scene.seed));
    let ego = scene.ego_pose.position;
    let mut out = Vec::new();
    for element in &scene.elements {
        let row = &cfg.confusion[element.class.index()];
        let mut kept: Vec<(usize, Point2, ElementClass)> = Vec::with_capacity(element.points.len());
        for (i, &p) in element.points.iter().enumerate() {
            let rel = p - ego;
            let angle = rel.y.atan2(rel.x);
            let drop_prob = cfg
                .occlusion_sectors
                .iter()
                .filter(|s| s.contains(angle))
                .map(|s| s.drop_prob)
                .fold(0.0, f64::max);
            let drop_draw: f64 = rng.random();
            let scale = cfg.pos_scale_b;
            let (jx, jy) = match cfg.jitter {
                JitterLaw::Laplace => (sample_laplace(&mut rng, scale), sample_laplace(&mut rng, scale)),
                JitterLaw::Gaussian => {
                    let std = scale * std::f64::consts::SQRT_2;
                    (sample_normal(&mut rng, std), sample_normal(&mut rng, std))
                }
            };
            let class = sample_class(&mut rng, row);
            if drop_draw < drop_prob {
                continue;
            }
            let noisy = range.clamp(p + Point2::new(jx, jy));
            kept.push((i, normalize_unchecked(noisy, range), class));
        }
        for (k, &(vertex_index, position, observed_class)) in kept.iter().enumerate() {
            let offset = |j: Option<usize>| {
                j.and_then(|j| kept.get(j))
                    .map(|n| (n.1 - position) * CONTEXT_OFFSET_GAIN)
                    .unwrap_or(Point2::ZERO)
            };
            let prev = offset(k.checked_sub(1));
            let next = offset(Some(k + 1));
            let mut context = [0.0; CONTEXT_WIDTH];
            context[0] = position.x;
            context[1] = position.y;
            context[2] = prev.x;
            context[3] = prev.y;
            context[4] = next.x;
            context[5] = next.y;
            context[6 + observed_class.index()] = 1.0;
            out.push(Observation {
                element_id: element.id,
                vertex_index,
                observed_class,
                position,
                context,
            });
        }
    }
    out
}

/// Validate the scene, then corrupt it.
pub fn corrupt_checked(scene: &Scene, cfg: &NoiseConfig) -> Result<Vec<Observation>> {
    cfg.validate()?;
    let violations = validate_scene(scene);
    if let Some(v) = violations.first() {
        return Err(Error::domain(format!("invalid scene: {v}")));
    }
    Ok(corrupt_observation(scene, cfg))
}
