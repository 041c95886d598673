//! Procedural road layouts. Every layout is built from lane-structured roads
//! around a reference path, generated past the perception box and clipped.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;

use crate::map_model::geometry::ArcPath;
use crate::map_model::{
    clip_to_perception_range, AgentTrack, ElementClass, MapElement, PerceptionRange, Point2,
    Trajectory, FUTURE_LEN, HISTORY_LEN, SAMPLE_DT,
};
use crate::rng::StageRng;

pub const LANE_WIDTH: f64 = 3.5;
pub const VERTEX_SPACING: f64 = 4.0;
pub const MIN_SPEED: f64 = 2.0;
pub const MAX_SPEED: f64 = 12.0;
const DENSE_STEP: f64 = 0.5;

/// Accumulates elements and the drivable paths agents may follow.
pub(crate) struct SceneBuilder {
    elements: Vec<MapElement>,
    lane_paths: Vec<ArcPath>,
    next_id: u64,
}

impl SceneBuilder {
    pub(crate) fn new() -> Self {
        Self {
            elements: Vec::new(),
            lane_paths: Vec::new(),
            next_id: 0,
        }
    }

    pub(crate) fn push(&mut self, class: ElementClass, dense: &[Point2]) {
        if dense.len() < 2 {
            return;
        }
        let points = ArcPath::new(dense.to_vec()).resample(VERTEX_SPACING);
        self.elements.push(MapElement {
            id: self.next_id,
            class,
            points,
        });
        self.next_id += 1;
    }

    /// Register a lane: a centerline element plus a path agents can drive.
    pub(crate) fn push_lane(&mut self, dense: Vec<Point2>) {
        self.push(ElementClass::Centerline, &dense);
        self.lane_paths.push(ArcPath::new(dense));
    }

    pub(crate) fn push_path_only(&mut self, dense: Vec<Point2>) {
        self.lane_paths.push(ArcPath::new(dense));
    }

    /// Boundaries, dividers and lane centerlines for a road around `reference`.
    /// Lanes right of the reference travel along it, lanes to the left against it.
    pub(crate) fn push_road(&mut self, reference: &ArcPath, lanes_left: usize, lanes_right: usize) {
        let w = LANE_WIDTH;
        self.push(ElementClass::Boundary, &reference.offset(lanes_left as f64 * w));
        self.push(ElementClass::Boundary, &reference.offset(-(lanes_right as f64) * w));
        let lo = -(lanes_right as i64) + 1;
        let hi = lanes_left as i64 - 1;
        for k in lo..=hi {
            self.push(ElementClass::Divider, &reference.offset(k as f64 * w));
        }
        for k in 0..lanes_right {
            self.push_lane(reference.offset(-(k as f64 + 0.5) * w));
        }
        for k in 0..lanes_left {
            let mut pts = reference.offset((k as f64 + 0.5) * w);
            pts.reverse();
            self.push_lane(pts);
        }
    }

    pub(crate) fn finish(
        self,
        rng: &mut StageRng,
        range: PerceptionRange,
        n_agents: usize,
        speed_cap: f64,
    ) -> (Vec<MapElement>, Vec<AgentTrack>) {
        let elements = clip_to_perception_range(&self.elements, range);
        let mut agents = Vec::new();
        let mut attempts = 0;
        while agents.len() < n_agents && attempts < 50 * n_agents.max(1) {
            attempts += 1;
            let path = &self.lane_paths[rng.random_range(0..self.lane_paths.len())];
            if let Some(track) = sample_agent(rng, path, range, agents.len() as u64, speed_cap) {
                agents.push(track);
            }
        }
        (elements, agents)
    }
}

/// Drive an agent along `path` at near-constant speed with a small lateral wobble.
/// Returns `None` when the sampled motion does not stay inside the box.
fn sample_agent(
    rng: &mut StageRng,
    path: &ArcPath,
    range: PerceptionRange,
    id: u64,
    speed_cap: f64,
) -> Option<AgentTrack> {
    let total = HISTORY_LEN + FUTURE_LEN;
    let duration = (total - 1) as f64 * SAMPLE_DT;
    let speed = rng.random_range(MIN_SPEED..=speed_cap.clamp(MIN_SPEED, MAX_SPEED));
    let accel = rng.random_range(-0.4..=0.4);
    let travel = speed * duration + 0.5 * accel * duration * duration;
    let slack = path.length() - travel;
    if slack <= 0.0 {
        return None;
    }
    let s0 = rng.random_range(0.0..slack);
    let lateral = rng.random_range(-0.3..=0.3);
    let wobble = rng.random_range(0.0..=0.15);
    let period = rng.random_range(2.0..=5.0);
    let phase = rng.random_range(0.0..2.0 * PI);

    let mut samples = Vec::with_capacity(total);
    for k in 0..total {
        let t = k as f64 * SAMPLE_DT;
        let s = s0 + speed * t + 0.5 * accel * t * t;
        let offset = lateral + wobble * (2.0 * PI * t / period + phase).sin();
        let p = path.point_at(s) + path.tangent_at(s).perp() * offset;
        if !range.contains(p) {
            return None;
        }
        samples.push(p);
    }
    let future = samples.split_off(HISTORY_LEN);
    Some(AgentTrack {
        id,
        history: Trajectory {
            agent_id: id,
            samples,
        },
        future: Trajectory {
            agent_id: id,
            samples: future,
        },
    })
}

fn dense_line(start: Point2, heading: f64, length: f64) -> Vec<Point2> {
    let dir = Point2::new(heading.cos(), heading.sin());
    let n = (length / DENSE_STEP).ceil() as usize;
    (0..=n).map(|k| start + dir * (length * k as f64 / n as f64)).collect()
}

/// Straight run of `straight` meters, then a circular arc of `radius`
/// (positive turns left) sweeping `sweep` radians.
fn dense_straight_then_arc(
    start: Point2,
    heading: f64,
    straight: f64,
    radius: f64,
    sweep: f64,
) -> Vec<Point2> {
    let mut pts = dense_line(start, heading, straight);
    let corner = *pts.last().unwrap();
    let turn = radius.signum();
    let r = radius.abs();
    let center = corner + Point2::new(heading.cos(), heading.sin()).perp() * (turn * r);
    let n = ((r * sweep) / DENSE_STEP).ceil().max(1.0) as usize;
    for k in 1..=n {
        let a = sweep * k as f64 / n as f64;
        let offset = (corner - center).rotate(turn * a);
        pts.push(center + offset);
    }
    pts
}

pub(crate) fn straight(rng: &mut StageRng) -> SceneBuilder {
    let mut b = SceneBuilder::new();
    let heading: f64 = rng.random_range(-0.06..=0.06);
    let y0 = rng.random_range(-2.5..=2.5);
    let start = Point2::new(-45.0, y0) - Point2::new(0.0, 45.0 * heading.tan());
    let reference = ArcPath::new(dense_line(start, heading, 90.0));
    let lanes_left = rng.random_range(1..=2);
    let lanes_right = rng.random_range(1..=2);
    b.push_road(&reference, lanes_left, lanes_right);
    b
}

pub(crate) fn curve(rng: &mut StageRng) -> SceneBuilder {
    let mut b = SceneBuilder::new();
    let bend_at = rng.random_range(-10.0..=15.0);
    let radius_abs: f64 = rng.random_range(25.0..=70.0);
    let radius = if rng.random::<bool>() { radius_abs } else { -radius_abs };
    let y0 = rng.random_range(-2.0..=2.0);
    let start = Point2::new(-45.0, y0);
    let sweep = (60.0 / radius_abs).min(FRAC_PI_2);
    let reference = ArcPath::new(dense_straight_then_arc(start, 0.0, bend_at + 45.0, radius, sweep));
    let lanes_left = rng.random_range(1..=2);
    b.push_road(&reference, lanes_left, 1);
    b
}

pub(crate) fn intersection(rng: &mut StageRng) -> SceneBuilder {
    let mut b = SceneBuilder::new();
    let w = LANE_WIDTH;
    let cx = rng.random_range(-8.0..=8.0);
    let main_half = w; // one lane per direction on each road
    let cross_half = w;
    let gap = cross_half + 2.0;

    // Main road along x, boundaries interrupted by the cross road.
    for side in [1.0, -1.0] {
        let y = side * main_half;
        b.push(ElementClass::Boundary, &dense_line(Point2::new(-45.0, y), 0.0, 45.0 + cx - gap));
        b.push(ElementClass::Boundary, &dense_line(Point2::new(cx + gap, y), 0.0, 45.0 - cx - gap));
    }
    b.push(ElementClass::Divider, &dense_line(Point2::new(-45.0, 0.0), 0.0, 45.0 + cx - gap));
    b.push(ElementClass::Divider, &dense_line(Point2::new(cx + gap, 0.0), 0.0, 45.0 - cx - gap));
    let east = dense_line(Point2::new(-45.0, -0.5 * w), 0.0, 90.0);
    let mut west = dense_line(Point2::new(-45.0, 0.5 * w), 0.0, 90.0);
    west.reverse();
    b.push_lane(east);
    b.push_lane(west);

    // Cross road along y.
    for side in [1.0, -1.0] {
        let x = cx + side * cross_half;
        b.push(ElementClass::Boundary, &dense_line(Point2::new(x, -25.0), FRAC_PI_2, 25.0 - gap));
        b.push(ElementClass::Boundary, &dense_line(Point2::new(x, gap), FRAC_PI_2, 25.0 - gap));
    }
    b.push(ElementClass::Divider, &dense_line(Point2::new(cx, -25.0), FRAC_PI_2, 25.0 - gap));
    b.push(ElementClass::Divider, &dense_line(Point2::new(cx, gap), FRAC_PI_2, 25.0 - gap));
    let north = dense_line(Point2::new(cx + 0.5 * w, -25.0), FRAC_PI_2, 50.0);
    let mut south = dense_line(Point2::new(cx - 0.5 * w, -25.0), FRAC_PI_2, 50.0);
    south.reverse();
    b.push_lane(north);
    b.push_lane(south);

    // Pedestrian crossings on the four arms.
    let d = gap + 1.5;
    b.push(ElementClass::PedCrossing, &dense_line(Point2::new(cx - d, -main_half), FRAC_PI_2, 2.0 * main_half));
    b.push(ElementClass::PedCrossing, &dense_line(Point2::new(cx + d, -main_half), FRAC_PI_2, 2.0 * main_half));
    b.push(ElementClass::PedCrossing, &dense_line(Point2::new(cx - cross_half, d), 0.0, 2.0 * cross_half));
    b.push(ElementClass::PedCrossing, &dense_line(Point2::new(cx - cross_half, -d), 0.0, 2.0 * cross_half));

    // Turning connectors for the eastbound approach, as centerlines, plus the
    // full turning paths for agents.
    let approach = cx - gap;
    let right_r = gap - 0.5 * w;
    let right = dense_straight_then_arc(Point2::new(-45.0, -0.5 * w), 0.0, 45.0 + approach, -right_r, FRAC_PI_2);
    let connector: Vec<Point2> = right.iter().copied().filter(|p| p.x >= approach - 1e-9).collect();
    b.push(ElementClass::Centerline, &connector);
    let mut right_path = right;
    let exit = *right_path.last().unwrap();
    right_path.extend(dense_line(exit, -FRAC_PI_2, 30.0).into_iter().skip(1));
    b.push_path_only(right_path);

    let left_r = gap + 0.5 * w;
    let left = dense_straight_then_arc(Point2::new(-45.0, -0.5 * w), 0.0, 45.0 + approach, left_r, FRAC_PI_2);
    let connector: Vec<Point2> = left.iter().copied().filter(|p| p.x >= approach - 1e-9).collect();
    b.push(ElementClass::Centerline, &connector);
    let mut left_path = left;
    let exit = *left_path.last().unwrap();
    left_path.extend(dense_line(exit, FRAC_PI_2, 30.0).into_iter().skip(1));
    b.push_path_only(left_path);
    b
}

pub(crate) fn parking(rng: &mut StageRng) -> SceneBuilder {
    let mut b = SceneBuilder::new();
    let y0 = rng.random_range(-1.5..=1.5);
    let reference = ArcPath::new(dense_line(Point2::new(-45.0, y0), 0.0, 90.0));
    b.push_road(&reference, 1, 1);
    // Stall dividers on both sides of the aisle.
    let stall = rng.random_range(2.6..=3.2);
    let depth = 5.0;
    let first = -30.0 + rng.random_range(0.0..stall);
    let mut x = first;
    while x <= 30.0 {
        for side in [1.0, -1.0] {
            let base = Point2::new(x, y0 + side * LANE_WIDTH);
            b.push(ElementClass::Divider, &[base, base + Point2::new(0.0, side * depth)]);
        }
        x += stall;
    }
    b
}
