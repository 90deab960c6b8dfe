use serde::{Deserialize, Serialize};

/// A screen-relative point with both coordinates in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub u: f64,
    pub v: f64,
}

impl Point {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    /// Converts a pixel position to normalized coordinates. This is the only
    /// place pixel coordinates are accepted.
    pub fn from_pixels(x: u32, y: u32, width_px: u32, height_px: u32) -> Self {
        Self {
            u: (f64::from(x) / f64::from(width_px.max(1))).clamp(0.0, 1.0),
            v: (f64::from(y) / f64::from(height_px.max(1))).clamp(0.0, 1.0),
        }
    }

    pub fn in_unit_square(&self) -> bool {
        (0.0..=1.0).contains(&self.u) && (0.0..=1.0).contains(&self.v)
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// Normalized, axis-aligned rectangle `(x0, y0, x1, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    /// Closed containment: points on the edge are inside.
    pub fn contains(&self, p: &Point) -> bool {
        p.u >= self.x0 && p.u <= self.x1 && p.v >= self.y0 && p.v <= self.y1
    }

    pub fn center(&self) -> Point {
        Point::new((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    /// Euclidean distance from `p` to the closest point of the box; zero inside.
    pub fn distance_to(&self, p: &Point) -> f64 {
        let du = (self.x0 - p.u).max(0.0).max(p.u - self.x1);
        let dv = (self.y0 - p.v).max(0.0).max(p.v - self.y1);
        du.hypot(dv)
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    pub fn violations(&self, field: &str) -> Vec<String> {
        let mut out = Vec::new();
        for (name, value) in [("x0", self.x0), ("y0", self.y0), ("x1", self.x1), ("y1", self.y1)] {
            if !(0.0..=1.0).contains(&value) {
                out.push(format!("{field}.{name}: coordinate outside [0,1]"));
            }
        }
        if self.x0 >= self.x1 {
            out.push(format!("{field}: x0 ≥ x1"));
        }
        if self.y0 >= self.y1 {
            out.push(format!("{field}: y0 ≥ y1"));
        }
        out
    }
}
