//! Oriented box geometry in the ego frame (x forward, y left, z up).
//!
//! Boxes are compared in bird's-eye view: the rotated footprint rectangles
//! are intersected with Sutherland–Hodgman clipping, which is exact for two
//! convex polygons.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(theta: f64) -> Result<f64> {
    if !theta.is_finite() {
        return Err(Error::NonFinite("wrap_angle"));
    }
    Ok(wrap(theta))
}

/// Infallible variant of [`wrap_angle`] for values already known to be finite.
#[inline]
pub fn wrap(theta: f64) -> f64 {
    let mut r = theta - TWO_PI * ((theta + PI) / TWO_PI).floor();
    // floor can land one ulp off the interval edges
    if r >= PI {
        r -= TWO_PI;
    }
    if r < -PI {
        r += TWO_PI;
    }
    r
}

/// An oriented 3D box. `l` runs along the heading, `w` across it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
    pub l: f64,
    pub h: f64,
    pub yaw: f64,
}

impl BBox3D {
    pub fn new(x: f64, y: f64, z: f64, w: f64, l: f64, h: f64, yaw: f64) -> Result<Self> {
        let b = BBox3D { x, y, z, w, l, h, yaw: wrap_angle(yaw)? };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.x, self.y, self.z, self.w, self.l, self.h, self.yaw];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("BBox3D"));
        }
        if self.w <= 0.0 || self.l <= 0.0 || self.h <= 0.0 {
            return Err(Error::DegenerateBox(format!(
                "extents must be positive, got w={} l={} h={}",
                self.w, self.l, self.h
            )));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 7] {
        [self.x, self.y, self.z, self.w, self.l, self.h, self.yaw]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        BBox3D { x: a[0], y: a[1], z: a[2], w: a[3], l: a[4], h: a[5], yaw: a[6] }
    }

    /// Footprint corners, counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = 0.5 * self.l;
        let hw = 0.5 * self.w;
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        let mut out = [[0.0; 2]; 4];
        for (o, p) in out.iter_mut().zip(local.iter()) {
            o[0] = self.x + c * p[0] - s * p[1];
            o[1] = self.y + s * p[0] + c * p[1];
        }
        out
    }

    pub fn bev_area(&self) -> f64 {
        self.w * self.l
    }

    /// True if the point lies inside the box inflated by `margin` on every face.
    pub fn contains(&self, p: [f64; 3], margin: f64) -> bool {
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        let (s, c) = self.yaw.sin_cos();
        let along = c * dx + s * dy;
        let across = -s * dx + c * dy;
        along.abs() <= 0.5 * self.l + margin
            && across.abs() <= 0.5 * self.w + margin
            && (p[2] - self.z).abs() <= 0.5 * self.h + margin
    }
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        acc += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * acc
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Clips `subject` against the convex CCW polygon `clip`.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let input = std::mem::take(&mut output);
        let m = input.len();
        for j in 0..m {
            let cur = input[j];
            let prev = input[(j + m - 1) % m];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(line_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

fn line_intersection(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let d1 = cross(a, b, p);
    let d2 = cross(a, b, q);
    let t = d1 / (d1 - d2);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Bird's-eye-view intersection over union of two oriented boxes.
pub fn bev_iou(a: &BBox3D, b: &BBox3D) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(bev_iou_unchecked(a, b))
}

/// [`bev_iou`] without validation, for hot loops over pre-validated boxes.
pub fn bev_iou_unchecked(a: &BBox3D, b: &BBox3D) -> f64 {
    // bounding-circle rejection
    let r = 0.5 * (a.w.hypot(a.l) + b.w.hypot(b.l));
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    if dx * dx + dy * dy >= r * r {
        return 0.0;
    }
    let pa = a.bev_corners();
    let pb = b.bev_corners();
    let inter = polygon_area(&clip_convex(&pa, &pb)).abs();
    let union = a.bev_area() + b.bev_area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Euclidean distance between BEV centers; z is ignored.
pub fn center_distance(a: &BBox3D, b: &BBox3D) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Greedy non-maximum suppression. Returns kept indices in descending score
/// order; equal scores keep the lower index first.
pub fn nms(boxes: &[BBox3D], scores: &[f64], iou_threshold: f64) -> Result<Vec<usize>> {
    if boxes.len() != scores.len() {
        return Err(Error::Shape(format!(
            "nms: {} boxes but {} scores",
            boxes.len(),
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let suppressed = kept
            .iter()
            .any(|&k| bev_iou_unchecked(&boxes[k], &boxes[i]) >= iou_threshold);
        if !suppressed {
            kept.push(i);
        }
    }
    Ok(kept)
}

/// Rigid transform restricted to yaw plus translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub yaw: f64,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn new(tx: f64, ty: f64, tz: f64, yaw: f64) -> Self {
        Pose { tx, ty, tz, yaw: wrap(yaw) }
    }

    pub fn identity() -> Self {
        Pose { tx: 0.0, ty: 0.0, tz: 0.0, yaw: 0.0 }
    }

    #[inline]
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [c * p[0] - s * p[1] + self.tx, s * p[0] + c * p[1] + self.ty, p[2] + self.tz]
    }

    /// Rotates a vector (no translation).
    #[inline]
    pub fn rotate(&self, v: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1]]
    }

    pub fn inverse(&self) -> Pose {
        let (s, c) = self.yaw.sin_cos();
        // R^T (p - t)
        Pose {
            tx: -(c * self.tx + s * self.ty),
            ty: -(-s * self.tx + c * self.ty),
            tz: -self.tz,
            yaw: wrap(-self.yaw),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        let t = self.apply([other.tx, other.ty, other.tz]);
        Pose { tx: t[0], ty: t[1], tz: t[2], yaw: wrap(self.yaw + other.yaw) }
    }

    pub fn apply_box(&self, b: &BBox3D) -> BBox3D {
        let c = self.apply([b.x, b.y, b.z]);
        BBox3D { x: c[0], y: c[1], z: c[2], yaw: wrap(b.yaw + self.yaw), ..*b }
    }
}

/// Rotates each point by the pose yaw about the vertical axis, then translates.
pub fn transform_points(points: &[[f64; 3]], pose: &Pose) -> Vec<[f64; 3]> {
    points.iter().map(|p| pose.apply(*p)).collect()
}
