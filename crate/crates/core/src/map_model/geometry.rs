use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// A 2D point or vector in the ego BEV frame (x longitudinal, y lateral).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ZERO: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Rotate counter-clockwise by `angle` radians.
    pub fn rotate(self, angle: f64) -> Point2 {
        let (s, c) = angle.sin_cos();
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Left-hand normal of a unit direction.
    pub fn perp(self) -> Point2 {
        Point2::new(-self.y, self.x)
    }

    pub fn unit(self) -> Point2 {
        let n = self.norm();
        if n > 0.0 {
            self * (1.0 / n)
        } else {
            Point2::new(1.0, 0.0)
        }
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// Arc-length parameterized view over a polyline with at least two points.
#[derive(Debug, Clone)]
pub struct ArcPath {
    points: Vec<Point2>,
    cumulative: Vec<f64>,
}

impl ArcPath {
    pub fn new(points: Vec<Point2>) -> Self {
        assert!(points.len() >= 2, "ArcPath needs at least two points");
        let mut cumulative = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in points.windows(2) {
            acc += w[0].distance(w[1]);
            cumulative.push(acc);
        }
        Self { points, cumulative }
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    fn segment(&self, s: f64) -> usize {
        let last = self.points.len() - 2;
        match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&s).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i.min(last),
            Err(i) => i.saturating_sub(1).min(last),
        }
    }

    /// Point at arc length `s`; beyond either end the end segment is extended linearly.
    pub fn point_at(&self, s: f64) -> Point2 {
        let i = self.segment(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        let seg = self.cumulative[i + 1] - self.cumulative[i];
        if seg <= 0.0 {
            return a;
        }
        let t = (s - self.cumulative[i]) / seg;
        a + (b - a) * t
    }

    pub fn tangent_at(&self, s: f64) -> Point2 {
        let i = self.segment(s);
        (self.points[i + 1] - self.points[i]).unit()
    }

    /// Parallel curve at signed lateral `offset` (positive = left).
    pub fn offset(&self, offset: f64) -> Vec<Point2> {
        let n = self.points.len();
        (0..n)
            .map(|i| {
                let dir = if i == 0 {
                    self.points[1] - self.points[0]
                } else if i == n - 1 {
                    self.points[n - 1] - self.points[n - 2]
                } else {
                    self.points[i + 1] - self.points[i - 1]
                };
                self.points[i] + dir.unit().perp() * offset
            })
            .collect()
    }

    /// Resample at (approximately) uniform `spacing`, keeping both endpoints.
    pub fn resample(&self, spacing: f64) -> Vec<Point2> {
        let len = self.length();
        let n = ((len / spacing).round() as usize).max(1);
        (0..=n).map(|k| self.point_at(len * k as f64 / n as f64)).collect()
    }
}

/// Euclidean distance from `p` to the closest point of the polyline.
pub fn point_to_polyline_distance(p: Point2, line: &[Point2]) -> f64 {
    match line {
        [] => f64::INFINITY,
        [only] => p.distance(*only),
        _ => line
            .windows(2)
            .map(|w| point_to_segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

pub fn point_to_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.distance(a + ab * t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arc_path_interpolates_and_extends() {
        let path = ArcPath::new(vec![Point2::new(0.0, 0.0), Point2::new(10.0, 0.0)]);
        assert_eq!(path.point_at(2.5), Point2::new(2.5, 0.0));
        assert_eq!(path.point_at(12.0), Point2::new(12.0, 0.0));
        assert_eq!(path.point_at(-1.0), Point2::new(-1.0, 0.0));
        let left = path.offset(1.5);
        assert!((left[0].y - 1.5).abs() < 1e-12);
    }

    #[test]
    fn segment_distance() {
        let a = Point2::new(0.0, 0.0);
        let b = Point2::new(4.0, 0.0);
        assert_eq!(point_to_segment_distance(Point2::new(2.0, 3.0), a, b), 3.0);
        assert_eq!(point_to_segment_distance(Point2::new(7.0, 4.0), a, b), 5.0);
    }
}
