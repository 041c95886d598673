//! Vectorized map and scene data model.
//!
//! Everything lives in the ego BEV frame: x is longitudinal, y is lateral,
//! both in meters. The perception range is the 60 m × 30 m box centered on
//! the ego vehicle.

mod format;
pub mod geometry;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use format::{emit_dataset, emit_scene, parse_dataset, parse_scene, Dataset};
pub use geometry::Point2;

use crate::error::{Error, Result};

pub const HISTORY_LEN: usize = 20;
pub const FUTURE_LEN: usize = 30;
pub const SAMPLE_DT: f64 = 0.1;
pub const NUM_CLASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementClass {
    Boundary,
    Divider,
    PedCrossing,
    Centerline,
}

impl ElementClass {
    pub const ALL: [ElementClass; NUM_CLASSES] = [
        ElementClass::Boundary,
        ElementClass::Divider,
        ElementClass::PedCrossing,
        ElementClass::Centerline,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ElementClass::Boundary => "boundary",
            ElementClass::Divider => "divider",
            ElementClass::PedCrossing => "ped_crossing",
            ElementClass::Centerline => "centerline",
        }
    }
}

impl fmt::Display for ElementClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ElementClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::domain(format!("unknown element class `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapElement {
    pub id: u64,
    pub class: ElementClass,
    pub points: Vec<Point2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub agent_id: u64,
    pub samples: Vec<Point2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub id: u64,
    pub history: Trajectory,
    pub future: Trajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EgoPose {
    pub position: Point2,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub seed: u64,
    pub ego_pose: EgoPose,
    pub elements: Vec<MapElement>,
    pub agents: Vec<AgentTrack>,
}

impl Scene {
    pub fn element(&self, id: u64) -> Option<&MapElement> {
        self.elements.iter().find(|e| e.id == id)
    }
}

/// Half-extents of the ego-centered perception box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerceptionRange {
    pub half_x: f64,
    pub half_y: f64,
}

impl Default for PerceptionRange {
    fn default() -> Self {
        Self {
            half_x: 30.0,
            half_y: 15.0,
        }
    }
}

impl PerceptionRange {
    pub fn new(half_x: f64, half_y: f64) -> Result<Self> {
        if !(half_x > 0.0 && half_y > 0.0 && half_x.is_finite() && half_y.is_finite()) {
            return Err(Error::domain(format!(
                "perception half-extents must be positive, got ({half_x}, {half_y})"
            )));
        }
        Ok(Self { half_x, half_y })
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x.abs() <= self.half_x && p.y.abs() <= self.half_y
    }

    pub fn clamp(&self, p: Point2) -> Point2 {
        Point2::new(
            p.x.clamp(-self.half_x, self.half_x),
            p.y.clamp(-self.half_y, self.half_y),
        )
    }
}

/// Affine map of the perception box onto the unit square.
pub fn normalize_to_bev(p: Point2, range: PerceptionRange) -> Result<Point2> {
    PerceptionRange::new(range.half_x, range.half_y)?;
    if !range.contains(p) {
        return Err(Error::OutOfRange {
            x: p.x,
            y: p.y,
            half_x: range.half_x,
            half_y: range.half_y,
        });
    }
    Ok(normalize_unchecked(p, range))
}

pub(crate) fn normalize_unchecked(p: Point2, range: PerceptionRange) -> Point2 {
    Point2::new(
        (p.x + range.half_x) / (2.0 * range.half_x),
        (p.y + range.half_y) / (2.0 * range.half_y),
    )
}

pub fn denormalize_from_bev(u: Point2, range: PerceptionRange) -> Point2 {
    Point2::new(
        u.x * 2.0 * range.half_x - range.half_x,
        u.y * 2.0 * range.half_y - range.half_y,
    )
}

/// Keep only the parts of each element inside the perception box.
///
/// Each maximal run of inside vertices becomes a sub-polyline; crossings are
/// cut at the last inside vertex without interpolation. Runs shorter than two
/// vertices are dropped. The first run of an element keeps its id; further
/// runs are given fresh ids above the largest input id, in encounter order.
pub fn clip_to_perception_range(elements: &[MapElement], range: PerceptionRange) -> Vec<MapElement> {
    let mut next_id = elements.iter().map(|e| e.id).max().map_or(0, |m| m + 1);
    let mut out = Vec::with_capacity(elements.len());
    for element in elements {
        let mut first = true;
        let mut run: Vec<Point2> = Vec::new();
        let mut flush = |run: &mut Vec<Point2>, out: &mut Vec<MapElement>| {
            if run.len() >= 2 {
                let id = if first {
                    first = false;
                    element.id
                } else {
                    next_id += 1;
                    next_id - 1
                };
                out.push(MapElement {
                    id,
                    class: element.class,
                    points: std::mem::take(run),
                });
            } else {
                run.clear();
            }
        };
        for &p in &element.points {
            if range.contains(p) {
                run.push(p);
            } else {
                flush(&mut run, &mut out);
            }
        }
        flush(&mut run, &mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    TooFewPoints { element_id: u64, points: usize },
    NonFiniteElement { element_id: u64 },
    DuplicateElementId { element_id: u64 },
    HistoryLength { agent_id: u64, expected: usize, actual: usize },
    FutureLength { agent_id: u64, expected: usize, actual: usize },
    NonFiniteAgent { agent_id: u64 },
    DuplicateAgentId { agent_id: u64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooFewPoints { element_id, points } => {
                write!(f, "element {element_id}: {points} points, need at least 2")
            }
            Violation::NonFiniteElement { element_id } => {
                write!(f, "element {element_id}: non-finite coordinate")
            }
            Violation::DuplicateElementId { element_id } => {
                write!(f, "duplicate element id {element_id}")
            }
            Violation::HistoryLength {
                agent_id,
                expected,
                actual,
            } => write!(f, "agent {agent_id}: history has {actual} steps, expected {expected}"),
            Violation::FutureLength {
                agent_id,
                expected,
                actual,
            } => write!(f, "agent {agent_id}: future has {actual} steps, expected {expected}"),
            Violation::NonFiniteAgent { agent_id } => {
                write!(f, "agent {agent_id}: non-finite coordinate")
            }
            Violation::DuplicateAgentId { agent_id } => write!(f, "duplicate agent id {agent_id}"),
        }
    }
}

/// Collect every invariant violation in the scene. An empty list means valid.
pub fn validate_scene(scene: &Scene) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut seen = HashSet::new();
    for e in &scene.elements {
        if !seen.insert(e.id) {
            violations.push(Violation::DuplicateElementId { element_id: e.id });
        }
        if e.points.len() < 2 {
            violations.push(Violation::TooFewPoints {
                element_id: e.id,
                points: e.points.len(),
            });
        }
        if !e.points.iter().all(|p| p.is_finite()) {
            violations.push(Violation::NonFiniteElement { element_id: e.id });
        }
    }
    let mut seen = HashSet::new();
    for a in &scene.agents {
        if !seen.insert(a.id) {
            violations.push(Violation::DuplicateAgentId { agent_id: a.id });
        }
        if a.history.samples.len() != HISTORY_LEN {
            violations.push(Violation::HistoryLength {
                agent_id: a.id,
                expected: HISTORY_LEN,
                actual: a.history.samples.len(),
            });
        }
        if a.future.samples.len() != FUTURE_LEN {
            violations.push(Violation::FutureLength {
                agent_id: a.id,
                expected: FUTURE_LEN,
                actual: a.future.samples.len(),
            });
        }
        let finite = a
            .history
            .samples
            .iter()
            .chain(&a.future.samples)
            .all(|p| p.is_finite());
        if !finite {
            violations.push(Violation::NonFiniteAgent { agent_id: a.id });
        }
    }
    violations
}
