//! Planar geometry for ray casting and clearance queries.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Vec2 {
            x: theta.cos(),
            y: theta.sin(),
        }
    }

    pub fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }

    pub fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }

    pub fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
}

impl Segment {
    pub fn new(a: Vec2, b: Vec2) -> Self {
        Segment { a, b }
    }
}

/// Axis-aligned rectangle, `min` component-wise below `max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Vec2,
    pub max: Vec2,
}

impl Rect {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        Rect { min, max }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn edges(&self) -> [Segment; 4] {
        let (lo, hi) = (self.min, self.max);
        let corners = [
            lo,
            Vec2::new(hi.x, lo.y),
            hi,
            Vec2::new(lo.x, hi.y),
        ];
        [
            Segment::new(corners[0], corners[1]),
            Segment::new(corners[1], corners[2]),
            Segment::new(corners[2], corners[3]),
            Segment::new(corners[3], corners[0]),
        ]
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }
}

/// Distance along the ray `origin + t dir` to `seg`, if the ray hits it.
/// `dir` must be unit length for the result to be in meters.
pub fn ray_segment(origin: Vec2, dir: Vec2, seg: &Segment) -> Option<f64> {
    let e = seg.b.sub(seg.a);
    let denom = dir.cross(e);
    if denom.abs() < 1e-12 {
        return None;
    }
    let ao = seg.a.sub(origin);
    let t = ao.cross(e) / denom;
    let s = ao.cross(dir) / denom;
    if t >= 0.0 && (0.0..=1.0).contains(&s) {
        Some(t)
    } else {
        None
    }
}

/// Distance along the ray to a circle boundary; handles origins inside the
/// circle by returning the exit distance.
pub fn ray_circle(origin: Vec2, dir: Vec2, center: Vec2, radius: f64) -> Option<f64> {
    let m = origin.sub(center);
    let b = m.dot(dir);
    let c = m.dot(m) - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t1 = -b - sq;
    if t1 >= 0.0 {
        return Some(t1);
    }
    let t2 = -b + sq;
    if t2 >= 0.0 {
        return Some(t2);
    }
    None
}

/// Distance along the ray to the rectangle boundary.
pub fn ray_rect(origin: Vec2, dir: Vec2, rect: &Rect) -> Option<f64> {
    rect.edges()
        .iter()
        .filter_map(|s| ray_segment(origin, dir, s))
        .min_by(|a, b| a.total_cmp(b))
}

pub fn dist_point_segment(p: Vec2, seg: &Segment) -> f64 {
    let e = seg.b.sub(seg.a);
    let len2 = e.dot(e);
    if len2 == 0.0 {
        return p.sub(seg.a).norm();
    }
    let t = (p.sub(seg.a).dot(e) / len2).clamp(0.0, 1.0);
    p.sub(seg.a.add(e.scale(t))).norm()
}

/// Distance from `p` to the rectangle; zero anywhere inside.
pub fn dist_point_rect(p: Vec2, rect: &Rect) -> f64 {
    let dx = (rect.min.x - p.x).max(p.x - rect.max.x).max(0.0);
    let dy = (rect.min.y - p.y).max(p.y - rect.max.y).max(0.0);
    (dx * dx + dy * dy).sqrt()
}
