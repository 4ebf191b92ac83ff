//! Sensor point types and the early-fusion preprocessing chain.
//!
//! Camera convention: the extrinsic [`Pose`] places a camera-aligned frame in
//! the ego frame. In that frame the optical axis is `+x`, image `u` grows
//! toward `-y` and image `v` grows toward `-z`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub i: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub rcs: f64,
    pub vx: f64,
    pub vy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrame {
    pub width: usize,
    pub height: usize,
    /// Row-major `height x width x 3`, values in `[0, 1]`.
    pub rgb: Vec<f32>,
    pub intrinsics: Intrinsics,
    pub extrinsics: Pose,
}

impl CameraFrame {
    pub fn new(width: usize, height: usize, rgb: Vec<f32>, intrinsics: Intrinsics, extrinsics: Pose) -> Result<Self> {
        let cam = CameraFrame { width, height, rgb, intrinsics, extrinsics };
        cam.validate()?;
        Ok(cam)
    }

    pub fn uniform(width: usize, height: usize, color: [f32; 3], intrinsics: Intrinsics, extrinsics: Pose) -> Self {
        let rgb = (0..width * height).flat_map(|_| color).collect();
        CameraFrame { width, height, rgb, intrinsics, extrinsics }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.intrinsics.fx > 0.0 && self.intrinsics.fy > 0.0) {
            return Err(Error::InvalidArgument("camera focal lengths must be positive".into()));
        }
        if self.rgb.len() != self.width * self.height * 3 {
            return Err(Error::Shape(format!(
                "camera buffer has {} values, expected {}",
                self.rgb.len(),
                self.width * self.height * 3
            )));
        }
        if self.rgb.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("rgb values must lie in [0, 1]".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn pixel(&self, col: usize, row: usize) -> [f32; 3] {
        let o = (row * self.width + col) * 3;
        [self.rgb[o], self.rgb[o + 1], self.rgb[o + 2]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    Lidar,
    Radar,
    Densified,
}

/// One fused point. The voxel stage appends local offsets to form the full
/// 13-value network input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub i: f64,
    pub r: f64,
    pub g: f64,
    pub b: f64,
    pub rcs: f64,
    pub vx: f64,
    pub vy: f64,
    pub source: Source,
    /// Seconds between this point's sweep and the latest sweep. Not a network feature.
    pub lag: f64,
}

pub const FUSED_FEATURES: usize = 10;

impl FusedPoint {
    pub fn from_lidar(p: &LidarPoint) -> Self {
        FusedPoint {
            x: p.x,
            y: p.y,
            z: p.z,
            i: p.i,
            r: 0.0,
            g: 0.0,
            b: 0.0,
            rcs: 0.0,
            vx: 0.0,
            vy: 0.0,
            source: Source::Lidar,
            lag: 0.0,
        }
    }

    pub fn from_radar(p: &RadarPoint) -> Self {
        FusedPoint {
            x: p.x,
            y: p.y,
            z: p.z,
            i: 0.0,
            r: 0.0,
            g: 0.0,
            b: 0.0,
            rcs: p.rcs,
            vx: p.vx,
            vy: p.vy,
            source: Source::Radar,
            lag: 0.0,
        }
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn features(&self) -> [f64; FUSED_FEATURES] {
        [self.x, self.y, self.z, self.i, self.r, self.g, self.b, self.rcs, self.vx, self.vy]
    }
}

/// Points that can be moved between ego frames.
pub trait Rigid: Copy {
    fn position(&self) -> [f64; 3];
    fn transformed(&self, pose: &Pose) -> Self;
}

impl Rigid for LidarPoint {
    fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
    fn transformed(&self, pose: &Pose) -> Self {
        let p = pose.apply([self.x, self.y, self.z]);
        LidarPoint { x: p[0], y: p[1], z: p[2], ..*self }
    }
}

impl Rigid for RadarPoint {
    fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
    fn transformed(&self, pose: &Pose) -> Self {
        let p = pose.apply([self.x, self.y, self.z]);
        let v = pose.rotate([self.vx, self.vy]);
        RadarPoint { x: p[0], y: p[1], z: p[2], vx: v[0], vy: v[1], ..*self }
    }
}

impl Rigid for FusedPoint {
    fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
    fn transformed(&self, pose: &Pose) -> Self {
        let p = pose.apply([self.x, self.y, self.z]);
        let v = pose.rotate([self.vx, self.vy]);
        FusedPoint { x: p[0], y: p[1], z: p[2], vx: v[0], vy: v[1], ..*self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep<P> {
    pub cloud: Vec<P>,
    pub ego_pose: Pose,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPoint<P> {
    pub point: P,
    pub lag: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub valid: bool,
}

impl Projection {
    pub fn pixel(&self) -> (usize, usize) {
        (self.u.floor() as usize, self.v.floor() as usize)
    }
}

fn project_one(p: [f64; 3], to_cam: &Pose, cam: &CameraFrame) -> Projection {
    let q = to_cam.apply(p);
    let depth = q[0];
    let k = &cam.intrinsics;
    if !(depth > 0.0) {
        return Projection { u: f64::NAN, v: f64::NAN, depth, valid: false };
    }
    let u = k.cx - k.fx * q[1] / depth;
    let v = k.cy - k.fy * q[2] / depth;
    let valid = u >= 0.0 && v >= 0.0 && u < cam.width as f64 && v < cam.height as f64;
    Projection { u, v, depth, valid }
}

/// Pinhole projection of ego-frame points into the image.
pub fn project_to_image(points: &[[f64; 3]], cam: &CameraFrame) -> Vec<Projection> {
    let to_cam = cam.extrinsics.inverse();
    points.iter().map(|p| project_one(*p, &to_cam, cam)).collect()
}

/// Attaches nearest-pixel color to lidar points. Points outside the image
/// keep zero color and are not dropped.
pub fn colorize(lidar: &[LidarPoint], cam: &CameraFrame) -> Vec<FusedPoint> {
    let to_cam = cam.extrinsics.inverse();
    lidar
        .iter()
        .map(|p| {
            let mut f = FusedPoint::from_lidar(p);
            let proj = project_one([p.x, p.y, p.z], &to_cam, cam);
            if proj.valid {
                let (c, r) = proj.pixel();
                let px = cam.pixel(c, r);
                f.r = px[0] as f64;
                f.g = px[1] as f64;
                f.b = px[2] as f64;
            }
            f
        })
        .collect()
}

/// Splits a radial velocity along the line of sight into Cartesian components.
pub fn radial_to_cartesian(range: f64, azimuth: f64, v_r: f64) -> Result<(f64, f64)> {
    if !(range > 0.0) {
        return Err(Error::InvalidArgument(format!("range must be positive, got {range}")));
    }
    let (s, c) = azimuth.sin_cos();
    Ok((v_r * c, v_r * s))
}

/// Moves the last `n` sweeps into the ego frame of the newest one and
/// concatenates them, oldest first.
pub fn accumulate_sweeps<P: Rigid>(sweeps: &[Sweep<P>], n: usize) -> Result<Vec<TimedPoint<P>>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sweep count must be at least 1".into()));
    }
    for w in sweeps.windows(2) {
        if !(w[1].timestamp > w[0].timestamp) {
            return Err(Error::Data(format!(
                "sweep timestamps not strictly increasing: {} then {}",
                w[0].timestamp, w[1].timestamp
            )));
        }
    }
    let Some(latest) = sweeps.last() else {
        return Ok(Vec::new());
    };
    let world_to_latest = latest.ego_pose.inverse();
    let start = sweeps.len().saturating_sub(n);
    let mut out = Vec::with_capacity(sweeps[start..].iter().map(|s| s.cloud.len()).sum());
    for s in &sweeps[start..] {
        let lag = latest.timestamp - s.timestamp;
        if std::ptr::eq(s, latest) {
            out.extend(s.cloud.iter().map(|p| TimedPoint { point: *p, lag }));
            continue;
        }
        let to_latest = world_to_latest.compose(&s.ego_pose);
        out.extend(s.cloud.iter().map(|p| TimedPoint { point: p.transformed(&to_latest), lag }));
    }
    Ok(out)
}

/// Depth image with `0.0` marking empty pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
}

impl DepthImage {
    pub fn filled(&self) -> usize {
        self.depth.iter().filter(|d| **d > 0.0).count()
    }
}

#[derive(Debug, Clone)]
pub struct DepthCompletion {
    pub sparse: DepthImage,
    pub dense: DepthImage,
    pub points: Vec<FusedPoint>,
}

/// Inverted depths are measured against this ceiling so that nearer returns
/// win under max-filtering.
const INVERSION_CEILING: f64 = 100.0;

pub fn diamond_kernel_5() -> Vec<(isize, isize)> {
    let mut k = Vec::new();
    for dy in -2isize..=2 {
        for dx in -2isize..=2 {
            if dx.abs() + dy.abs() <= 2 {
                k.push((dx, dy));
            }
        }
    }
    k
}

pub fn full_kernel_5() -> Vec<(isize, isize)> {
    let mut k = Vec::new();
    for dy in -2isize..=2 {
        for dx in -2isize..=2 {
            k.push((dx, dy));
        }
    }
    k
}

fn morph(img: &[f64], w: usize, h: usize, kernel: &[(isize, isize)], dilate: bool) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let mut acc = if dilate { f64::NEG_INFINITY } else { f64::INFINITY };
            for &(dx, dy) in kernel {
                let (cc, rr) = (c + dx, r + dy);
                if cc < 0 || rr < 0 || cc >= w as isize || rr >= h as isize {
                    continue;
                }
                let v = img[rr as usize * w + cc as usize];
                acc = if dilate { acc.max(v) } else { acc.min(v) };
            }
            out[r as usize * w + c as usize] = acc;
        }
    }
    out
}

pub fn sparse_depth_image(lidar: &[LidarPoint], cam: &CameraFrame) -> DepthImage {
    let to_cam = cam.extrinsics.inverse();
    let mut depth = vec![0.0; cam.width * cam.height];
    for p in lidar {
        let proj = project_one([p.x, p.y, p.z], &to_cam, cam);
        if !proj.valid {
            continue;
        }
        let (c, r) = proj.pixel();
        let d = &mut depth[r * cam.width + c];
        if *d == 0.0 || proj.depth < *d {
            *d = proj.depth;
        }
    }
    DepthImage { width: cam.width, height: cam.height, depth }
}

/// Densifies the lidar depth image with inverted-depth morphology (5x5
/// diamond dilation, then 5x5 full closing), keeps every measured pixel at its
/// measured depth, and back-projects all filled pixels as colored points.
pub fn depth_complete(lidar: &[LidarPoint], cam: &CameraFrame) -> DepthCompletion {
    let sparse = sparse_depth_image(lidar, cam);
    let (w, h) = (cam.width, cam.height);
    let inv: Vec<f64> = sparse
        .depth
        .iter()
        .map(|&d| if d > 0.0 { INVERSION_CEILING - d } else { 0.0 })
        .collect();
    let full = full_kernel_5();
    let dilated = morph(&inv, w, h, &diamond_kernel_5(), true);
    let closed = morph(&morph(&dilated, w, h, &full, true), w, h, &full, false);
    let depth: Vec<f64> = closed
        .iter()
        .zip(&sparse.depth)
        .map(|(&v, &orig)| {
            if orig > 0.0 {
                orig
            } else if v > 0.0 {
                INVERSION_CEILING - v
            } else {
                0.0
            }
        })
        .collect();
    let dense = DepthImage { width: w, height: h, depth };

    let k = &cam.intrinsics;
    let mut points = Vec::with_capacity(dense.filled());
    for r in 0..h {
        for c in 0..w {
            let d = dense.depth[r * w + c];
            if d <= 0.0 {
                continue;
            }
            let u = c as f64 + 0.5;
            let v = r as f64 + 0.5;
            let q = [d, -(u - k.cx) * d / k.fx, -(v - k.cy) * d / k.fy];
            let p = cam.extrinsics.apply(q);
            let px = cam.pixel(c, r);
            points.push(FusedPoint {
                x: p[0],
                y: p[1],
                z: p[2],
                i: 0.0,
                r: px[0] as f64,
                g: px[1] as f64,
                b: px[2] as f64,
                rcs: 0.0,
                vx: 0.0,
                vy: 0.0,
                source: Source::Densified,
                lag: 0.0,
            });
        }
    }
    DepthCompletion { sparse, dense, points }
}
