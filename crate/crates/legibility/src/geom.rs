//! Points, piecewise-linear paths, arc-length resampling, and orthographic
//! viewpoint projection. Everything here is pure value code.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A point in 3-D workspace coordinates (meters).
///
/// Serialized as a plain `[x, y, z]` triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<[f64; 3]> for Point3 {
    fn from(a: [f64; 3]) -> Self {
        Point3 { x: a[0], y: a[1], z: a[2] }
    }
}

impl From<Point3> for [f64; 3] {
    fn from(p: Point3) -> Self {
        [p.x, p.y, p.z]
    }
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Componentwise difference `self - other`.
    pub fn sub(&self, other: &Point3) -> [f64; 3] {
        [self.x - other.x, self.y - other.y, self.z - other.z]
    }

    pub fn translate(&self, d: [f64; 3]) -> Point3 {
        Point3::new(self.x + d[0], self.y + d[1], self.z + d[2])
    }

    pub fn dist(&self, other: &Point3) -> f64 {
        let d = self.sub(other);
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }

    fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    }

    fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    }
}

/// A piecewise-linear path through at least two waypoints, before resampling.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPath {
    waypoints: Vec<Point3>,
}

impl RawPath {
    pub fn new(waypoints: Vec<Point3>) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::TooFewWaypoints(waypoints.len()));
        }
        if waypoints.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinitePoint);
        }
        Ok(RawPath { waypoints })
    }

    pub fn waypoints(&self) -> &[Point3] {
        &self.waypoints
    }
}

/// A trajectory resampled to a fixed number of control points with uniform
/// arc-length spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    points: Vec<Point3>,
}

impl Trajectory {
    /// Wrap an already-resampled point list (e.g. read back from a dataset
    /// file). Validates length and finiteness only.
    pub fn from_points(points: Vec<Point3>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::TooFewWaypoints(points.len()));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinitePoint);
        }
        Ok(Trajectory { points })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Total Euclidean arc length of a piecewise-linear path.
///
/// Errors with `DegeneratePath` when all waypoints coincide.
pub fn arc_length(path: &RawPath) -> Result<f64> {
    let total: f64 = path
        .waypoints
        .windows(2)
        .map(|w| w[0].dist(&w[1]))
        .sum();
    if total <= 0.0 {
        return Err(Error::DegeneratePath);
    }
    Ok(total)
}

/// Resample a path to `n` points at uniform arc-length intervals.
///
/// Point `k` lies at arc-length fraction `k / (n - 1)`; endpoints reproduce
/// the path endpoints exactly. Zero-length segments are skipped.
pub fn resample_uniform(path: &RawPath, n: usize) -> Result<Trajectory> {
    if n < 2 {
        return Err(Error::InvalidCount(n));
    }
    let wps = &path.waypoints;
    // Cumulative arc length at every waypoint.
    let mut cum = Vec::with_capacity(wps.len());
    cum.push(0.0);
    for w in wps.windows(2) {
        cum.push(cum.last().unwrap() + w[0].dist(&w[1]));
    }
    let total = *cum.last().unwrap();
    if total <= 0.0 {
        return Err(Error::DegeneratePath);
    }

    let mut points = Vec::with_capacity(n);
    points.push(wps[0]);
    let mut seg = 0usize;
    for k in 1..n - 1 {
        let target = total * (k as f64) / ((n - 1) as f64);
        while seg + 2 < cum.len() && cum[seg + 1] <= target {
            seg += 1;
        }
        let seg_len = cum[seg + 1] - cum[seg];
        let t = if seg_len > 0.0 { (target - cum[seg]) / seg_len } else { 0.0 };
        let a = wps[seg];
        let b = wps[seg + 1];
        points.push(Point3::new(
            a.x + t * (b.x - a.x),
            a.y + t * (b.y - a.y),
            a.z + t * (b.z - a.z),
        ));
    }
    points.push(*wps.last().unwrap());
    Ok(Trajectory { points })
}

/// An observer viewpoint for orthographic projection.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Viewpoint {
    pub eye: Point3,
    pub look_at: Point3,
    pub up: Point3,
}

impl Viewpoint {
    pub fn new(eye: Point3, look_at: Point3, up: Point3) -> Result<Self> {
        let vp = Viewpoint { eye, look_at, up };
        vp.basis()?;
        Ok(vp)
    }

    /// Orthonormal image-plane basis `(e1, e2)` with
    /// `d = normalize(look_at - eye)`, `e1 = normalize(d × up)`, `e2 = d × e1`.
    pub fn basis(&self) -> Result<([f64; 3], [f64; 3])> {
        let d = self.look_at.sub(&self.eye);
        let d_norm = Point3::dot(d, d).sqrt();
        if d_norm <= 0.0 {
            return Err(Error::DegenerateViewpoint);
        }
        let d = [d[0] / d_norm, d[1] / d_norm, d[2] / d_norm];
        let up = [self.up.x, self.up.y, self.up.z];
        let e1 = Point3::cross(d, up);
        let e1_norm = Point3::dot(e1, e1).sqrt();
        if e1_norm <= 1e-12 {
            return Err(Error::DegenerateViewpoint);
        }
        let e1 = [e1[0] / e1_norm, e1[1] / e1_norm, e1[2] / e1_norm];
        let e2 = Point3::cross(d, e1);
        Ok((e1, e2))
    }
}

/// Orthographically project points into the viewpoint's image plane:
/// each `p` maps to `((p - eye)·e1, (p - eye)·e2)`.
pub fn project_viewpoint(points: &[Point3], vp: &Viewpoint) -> Result<Vec<[f64; 2]>> {
    let (e1, e2) = vp.basis()?;
    Ok(points
        .iter()
        .map(|p| {
            let r = p.sub(&vp.eye);
            [Point3::dot(r, e1), Point3::dot(r, e2)]
        })
        .collect())
}
