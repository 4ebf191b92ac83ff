//! Seeded synthetic driving scenes: ray-cast lidar, sparse radar with clutter,
//! a flat-shaded camera and weather degradation.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusionio::{radial_to_cartesian, CameraFrame, Intrinsics, LidarPoint, RadarPoint};
use crate::geom::{bev_iou_unchecked, wrap, BBox3D, Pose};
use crate::voxel::voxel_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeatherMode {
    #[default]
    Clear,
    Rain,
    Night,
}

impl WeatherMode {
    pub const ALL: [WeatherMode; 3] = [WeatherMode::Clear, WeatherMode::Rain, WeatherMode::Night];

    pub fn name(self) -> &'static str {
        match self {
            WeatherMode::Clear => "clear",
            WeatherMode::Rain => "rain",
            WeatherMode::Night => "night",
        }
    }
}

impl std::str::FromStr for WeatherMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clear" => Ok(WeatherMode::Clear),
            "rain" => Ok(WeatherMode::Rain),
            "night" => Ok(WeatherMode::Night),
            _ => Err(Error::Config(format!("unknown weather mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeatherSpec {
    pub mode: WeatherMode,
    /// Extra lidar drop probability at zero range.
    pub lidar_dropout_add: f64,
    /// The added drop probability grows linearly, reaching twice its base
    /// value at this range.
    pub lidar_attenuation_range: f64,
    pub lidar_noise_mult: f64,
    pub camera_gain: f64,
    pub camera_noise_add: f64,
}

impl WeatherSpec {
    pub fn clear() -> Self {
        WeatherSpec {
            mode: WeatherMode::Clear,
            lidar_dropout_add: 0.0,
            lidar_attenuation_range: 20.0,
            lidar_noise_mult: 1.0,
            camera_gain: 1.0,
            camera_noise_add: 0.0,
        }
    }

    pub fn rain() -> Self {
        WeatherSpec {
            mode: WeatherMode::Rain,
            lidar_dropout_add: 0.5,
            lidar_attenuation_range: 15.0,
            lidar_noise_mult: 3.0,
            camera_gain: 0.9,
            camera_noise_add: 0.05,
        }
    }

    pub fn night() -> Self {
        WeatherSpec { mode: WeatherMode::Night, camera_gain: 0.25, camera_noise_add: 0.08, ..Self::clear() }
    }

    pub fn for_mode(mode: WeatherMode) -> Self {
        match mode {
            WeatherMode::Clear => Self::clear(),
            WeatherMode::Rain => Self::rain(),
            WeatherMode::Night => Self::night(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.camera_gain > 0.0 && self.camera_gain <= 1.0) {
            return Err(Error::Config(format!("camera_gain must lie in (0, 1], got {}", self.camera_gain)));
        }
        if !(0.0..=1.0).contains(&self.lidar_dropout_add) {
            return Err(Error::Config("lidar_dropout_add must lie in [0, 1]".into()));
        }
        if !(self.lidar_noise_mult >= 1.0) || !(self.camera_noise_add >= 0.0) || !(self.lidar_attenuation_range > 0.0) {
            return Err(Error::Config("weather noise terms must be nonnegative and the noise multiplier at least 1".into()));
        }
        Ok(())
    }

    /// Drop probability for a lidar return at range `r`.
    pub fn lidar_drop_probability(&self, r: f64) -> f64 {
        (self.lidar_dropout_add * (1.0 + r / self.lidar_attenuation_range)).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarSpec {
    pub beams: usize,
    /// Elevation span in degrees, lowest beam first.
    pub elevation_deg: [f64; 2],
    pub azimuth_res_deg: f64,
    /// Half-angle of the horizontal field of view.
    pub azimuth_half_fov_deg: f64,
    pub max_range: f64,
    pub range_noise: f64,
    pub dropout: f64,
    pub ground_z: f64,
    pub ground_intensity: f64,
    pub intensity_noise: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        LidarSpec {
            beams: 32,
            elevation_deg: [-16.0, 4.0],
            azimuth_res_deg: 0.4,
            azimuth_half_fov_deg: 80.0,
            max_range: 60.0,
            range_noise: 0.02,
            dropout: 0.05,
            ground_z: -1.85,
            ground_intensity: 0.15,
            intensity_noise: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadarSpec {
    /// Mean returns per visible actor.
    pub lambda: f64,
    pub pos_noise: f64,
    /// Mean clutter returns per frame.
    pub clutter_rate: f64,
    pub rcs_mean: f64,
    pub rcs_std: f64,
    pub clutter_rcs_mean: f64,
    pub vel_noise: f64,
    pub azimuth_half_fov_deg: f64,
    pub max_range: f64,
}

impl Default for RadarSpec {
    fn default() -> Self {
        RadarSpec {
            lambda: 2.0,
            pos_noise: 0.2,
            clutter_rate: 4.0,
            rcs_mean: 10.0,
            rcs_std: 3.0,
            clutter_rcs_mean: -5.0,
            vel_noise: 0.1,
            azimuth_half_fov_deg: 60.0,
            max_range: 70.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    pub pixel_noise: f64,
    pub background: f32,
    /// 0 keeps actor colors, 1 paints actors in the background color.
    pub color_ambiguity: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        CameraSpec {
            width: 160,
            height: 60,
            intrinsics: Intrinsics { fx: 80.0, fy: 80.0, cx: 80.0, cy: 30.0 },
            pixel_noise: 0.01,
            background: 0.5,
            color_ambiguity: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub lidar: LidarSpec,
    pub radar: RadarSpec,
    pub camera: CameraSpec,
}

impl SensorSpec {
    pub fn validate(&self) -> Result<()> {
        let l = &self.lidar;
        let r = &self.radar;
        let c = &self.camera;
        let sigmas = [l.range_noise, l.intensity_noise, r.pos_noise, r.rcs_std, r.vel_noise, c.pixel_noise];
        if sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config("sensor noise sigmas must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&l.dropout) || !(0.0..=1.0).contains(&c.color_ambiguity) {
            return Err(Error::Config("probabilities must lie in [0, 1]".into()));
        }
        if l.beams == 0 || !(l.azimuth_res_deg > 0.0) || !(l.max_range > 0.0) || !(r.max_range > 0.0) {
            return Err(Error::Config("lidar needs beams, a positive azimuth step and range".into()));
        }
        if !(r.lambda >= 0.0) || !(r.clutter_rate >= 0.0) {
            return Err(Error::Config("radar rates must be nonnegative".into()));
        }
        if c.width == 0 || c.height == 0 || !(c.intrinsics.fx > 0.0 && c.intrinsics.fy > 0.0) {
            return Err(Error::Config("camera needs a nonempty image and positive focal lengths".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorSpec {
    /// World-frame box at `t = 0`.
    pub bbox: BBox3D,
    /// World-frame ground velocity.
    pub velocity: [f64; 2],
    pub color: [f32; 3],
    pub reflectivity: f64,
}

impl ActorSpec {
    pub fn box_at(&self, t: f64) -> BBox3D {
        BBox3D { x: self.bbox.x + self.velocity[0] * t, y: self.bbox.y + self.velocity[1] * t, ..self.bbox }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub duration: f64,
    pub frame_rate: f64,
    pub ego_speed: f64,
    pub ego_yaw_rate: f64,
    pub actors: Vec<ActorSpec>,
    pub seed: u64,
    pub weather: WeatherMode,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_rate > 0.0) || !(self.duration >= 0.0) {
            return Err(Error::Config("scene needs a positive frame rate and nonnegative duration".into()));
        }
        Ok(())
    }

    pub fn num_frames(&self) -> usize {
        (self.duration * self.frame_rate).floor() as usize + 1
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.frame_rate
    }

    /// Ego pose in the world frame; the ego starts at the origin facing `+x`.
    pub fn ego_pose(&self, t: f64) -> Pose {
        let (v, w) = (self.ego_speed, self.ego_yaw_rate);
        if w.abs() < 1e-12 {
            Pose::new(v * t, 0.0, 0.0, 0.0)
        } else {
            Pose::new(v / w * (w * t).sin(), v / w * (1.0 - (w * t).cos()), 0.0, wrap(w * t))
        }
    }

    pub fn ego_velocity(&self, t: f64) -> [f64; 2] {
        let a = self.ego_yaw_rate * t;
        [self.ego_speed * a.cos(), self.ego_speed * a.sin()]
    }
}

/// One synchronized sensor snapshot in the ego frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub timestamp: f64,
    pub ego_pose: Pose,
    pub lidar: Vec<LidarPoint>,
    /// Actor index per lidar return, `-1` for ground. Empty when loaded from disk.
    pub lidar_source: Vec<i32>,
    pub radar: Vec<RadarPoint>,
    pub camera: CameraFrame,
    pub gts: Vec<BBox3D>,
    /// Scene actor index per gt box.
    pub gt_ids: Vec<usize>,
    /// Ego-frame ground velocity per gt box.
    pub gt_velocity: Vec<[f64; 2]>,
}

/// Nearest positive ray parameter where `o + t d` enters `b`.
fn ray_box(o: [f64; 3], d: [f64; 3], b: &BBox3D) -> Option<f64> {
    let (s, c) = b.yaw.sin_cos();
    let (px, py) = (o[0] - b.x, o[1] - b.y);
    let lo = [c * px + s * py, -s * px + c * py, o[2] - b.z];
    let ld = [c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]];
    let half = [0.5 * b.l, 0.5 * b.w, 0.5 * b.h];
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..3 {
        if ld[k].abs() < 1e-15 {
            if lo[k].abs() > half[k] {
                return None;
            }
            continue;
        }
        let a = (-half[k] - lo[k]) / ld[k];
        let bb = (half[k] - lo[k]) / ld[k];
        t0 = t0.max(a.min(bb));
        t1 = t1.min(a.max(bb));
        if t0 > t1 {
            return None;
        }
    }
    if t1 < 0.0 {
        None
    } else if t0 > 0.0 {
        Some(t0)
    } else {
        None
    }
}

/// First actor hit along a ray, with its distance.
fn first_hit(o: [f64; 3], d: [f64; 3], boxes: &[BBox3D]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, b) in boxes.iter().enumerate() {
        if let Some(t) = ray_box(o, d, b) {
            if best.is_none_or(|(_, bt)| t < bt) {
                best = Some((i, t));
            }
        }
    }
    best
}

fn gauss(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
    }
}

fn frame_rng(seed: u64, k: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(voxel_seed(seed, [k, 0x5eed, 0]))
}

/// Ego-frame boxes and velocities of all actors at time `t`.
pub fn actors_in_ego(spec: &SceneSpec, t: f64) -> (Vec<BBox3D>, Vec<[f64; 2]>) {
    let to_ego = spec.ego_pose(t).inverse();
    let boxes = spec.actors.iter().map(|a| to_ego.apply_box(&a.box_at(t))).collect();
    let vels = spec.actors.iter().map(|a| to_ego.rotate(a.velocity)).collect();
    (boxes, vels)
}

fn lidar_sweep(boxes: &[BBox3D], reflect: &[f64], s: &LidarSpec, rng: &mut ChaCha8Rng) -> (Vec<LidarPoint>, Vec<i32>) {
    let mut pts = Vec::new();
    let mut src = Vec::new();
    let n_az = (2.0 * s.azimuth_half_fov_deg / s.azimuth_res_deg).floor() as usize + 1;
    // coarse cull: only actors whose bearing interval could intersect a ray
    for bi in 0..s.beams {
        let el = if s.beams == 1 {
            s.elevation_deg[0]
        } else {
            s.elevation_deg[0] + (s.elevation_deg[1] - s.elevation_deg[0]) * bi as f64 / (s.beams - 1) as f64
        }
        .to_radians();
        let (se, ce) = el.sin_cos();
        for ai in 0..n_az {
            let az = (-s.azimuth_half_fov_deg + ai as f64 * s.azimuth_res_deg).to_radians();
            let (sa, ca) = az.sin_cos();
            let d = [ce * ca, ce * sa, se];
            let mut hit: Option<(i32, f64)> = None;
            if d[2] < 0.0 {
                let t = s.ground_z / d[2];
                if t <= s.max_range {
                    hit = Some((-1, t));
                }
            }
            if let Some((i, t)) = first_hit([0.0; 3], d, boxes) {
                if t <= s.max_range && hit.is_none_or(|(_, g)| t < g) {
                    hit = Some((i as i32, t));
                }
            }
            let Some((who, t)) = hit else { continue };
            if s.dropout > 0.0 && rng.gen_bool(s.dropout) {
                continue;
            }
            let r = t + gauss(rng, s.range_noise);
            let base = if who < 0 { s.ground_intensity } else { reflect[who as usize] };
            let i = (base + gauss(rng, s.intensity_noise)).clamp(0.0, 1.0);
            pts.push(LidarPoint { x: d[0] * r, y: d[1] * r, z: d[2] * r, i });
            src.push(who);
        }
    }
    (pts, src)
}

/// Random point on the part of a box footprint boundary that faces the sensor.
fn facing_surface_point(b: &BBox3D, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let c = b.bev_corners();
    let mut edges = Vec::with_capacity(4);
    let mut total = 0.0;
    for k in 0..4 {
        let (p, q) = (c[k], c[(k + 1) % 4]);
        // CCW corners: outward normal is (dy, -dx)
        let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
        let mid = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
        let facing = -(dy * mid[0] - dx * mid[1]);
        if facing > 0.0 {
            edges.push((p, q, facing));
            total += facing;
        }
    }
    let z = b.z + rng.gen_range(-0.4..0.4) * b.h;
    if edges.is_empty() {
        return [b.x, b.y, z];
    }
    let mut pick = rng.gen_range(0.0..total);
    let mut chosen = edges[edges.len() - 1];
    for e in &edges {
        if pick < e.2 {
            chosen = *e;
            break;
        }
        pick -= e.2;
    }
    let u: f64 = rng.gen_range(0.0..1.0);
    let (p, q, _) = chosen;
    [p[0] + u * (q[0] - p[0]), p[1] + u * (q[1] - p[1]), z]
}

fn radar_sweep(boxes: &[BBox3D], vels: &[[f64; 2]], region: &Region, s: &RadarSpec, rng: &mut ChaCha8Rng) -> Vec<RadarPoint> {
    let half_fov = s.azimuth_half_fov_deg.to_radians();
    let in_fov = |p: [f64; 3]| {
        let r = p[0].hypot(p[1]);
        r > 0.5 && r <= s.max_range && p[1].atan2(p[0]).abs() <= half_fov
    };
    let mut out = Vec::new();
    let poisson = |rate: f64, rng: &mut ChaCha8Rng| -> usize {
        if rate > 0.0 {
            Poisson::new(rate).expect("positive rate").sample(rng) as usize
        } else {
            0
        }
    };
    for (i, b) in boxes.iter().enumerate() {
        if !in_fov([b.x, b.y, b.z]) {
            continue;
        }
        for _ in 0..poisson(s.lambda, rng) {
            let surf = facing_surface_point(b, rng);
            let p = [surf[0] + gauss(rng, s.pos_noise), surf[1] + gauss(rng, s.pos_noise), surf[2] + gauss(rng, s.pos_noise)];
            let dist = p[0].hypot(p[1]).hypot(p[2]);
            let dir = [p[0] / dist, p[1] / dist, p[2] / dist];
            // blocked by a nearer actor
            if let Some((j, t)) = first_hit([0.0; 3], dir, boxes) {
                if j != i && t < dist - 0.5 {
                    continue;
                }
            }
            if !in_fov(p) {
                continue;
            }
            let range = p[0].hypot(p[1]);
            let az = p[1].atan2(p[0]);
            let v_r = vels[i][0] * az.cos() + vels[i][1] * az.sin() + gauss(rng, s.vel_noise);
            let (vx, vy) = radial_to_cartesian(range, az, v_r).expect("range checked positive");
            let rcs = s.rcs_mean + gauss(rng, s.rcs_std);
            out.push(RadarPoint { x: p[0], y: p[1], z: p[2], rcs, vx, vy });
        }
    }
    for _ in 0..poisson(s.clutter_rate, rng) {
        let x = rng.gen_range(region.x_range[0]..region.x_range[1]).max(1.0);
        let y = rng.gen_range(region.y_range[0]..region.y_range[1]);
        let z = rng.gen_range(-1.8..0.5);
        if !in_fov([x, y, z]) {
            continue;
        }
        let speed = rng.gen_range(0.5..8.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let (range, az) = (x.hypot(y), y.atan2(x));
        let (vx, vy) = radial_to_cartesian(range, az, speed).expect("range checked positive");
        let rcs = s.clutter_rcs_mean + gauss(rng, s.rcs_std);
        out.push(RadarPoint { x, y, z, rcs, vx, vy });
    }
    out
}

fn render_camera(boxes: &[BBox3D], colors: &[[f32; 3]], s: &CameraSpec, rng: &mut ChaCha8Rng) -> CameraFrame {
    let k = s.intrinsics;
    let bg = s.background;
    let amb = s.color_ambiguity as f32;
    let mut rgb = Vec::with_capacity(s.width * s.height * 3);
    for row in 0..s.height {
        for col in 0..s.width {
            let (u, v) = (col as f64 + 0.5, row as f64 + 0.5);
            let d = [1.0, -(u - k.cx) / k.fx, -(v - k.cy) / k.fy];
            let c = match first_hit([0.0; 3], d, boxes) {
                Some((i, _)) => colors[i].map(|c| c * (1.0 - amb) + bg * amb),
                None => [bg; 3],
            };
            for ch in c {
                rgb.push(((ch as f64 + gauss(rng, s.pixel_noise)).clamp(0.0, 1.0)) as f32);
            }
        }
    }
    CameraFrame { width: s.width, height: s.height, rgb, intrinsics: k, extrinsics: Pose::identity() }
}

/// Detection region used for clutter placement and the in-range test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
}

impl Region {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_range[0] && x < self.x_range[1] && y >= self.y_range[0] && y < self.y_range[1]
    }
}

/// Frame `k` of a scene, before weather.
pub fn generate_frame(spec: &SceneSpec, sensors: &SensorSpec, region: &Region, k: usize, rng: &mut ChaCha8Rng) -> Frame {
    let t = spec.time(k);
    let (boxes, vels) = actors_in_ego(spec, t);
    let reflect: Vec<f64> = spec.actors.iter().map(|a| a.reflectivity).collect();
    let colors: Vec<[f32; 3]> = spec.actors.iter().map(|a| a.color).collect();
    let (lidar, lidar_source) = lidar_sweep(&boxes, &reflect, &sensors.lidar, rng);
    let radar = radar_sweep(&boxes, &vels, region, &sensors.radar, rng);
    let camera = render_camera(&boxes, &colors, &sensors.camera, rng);
    let mut gts = Vec::new();
    let mut gt_ids = Vec::new();
    let mut gt_velocity = Vec::new();
    for (i, b) in boxes.iter().enumerate() {
        if region.contains(b.x, b.y) {
            gts.push(*b);
            gt_ids.push(i);
            gt_velocity.push(vels[i]);
        }
    }
    Frame { timestamp: t, ego_pose: spec.ego_pose(t), lidar, lidar_source, radar, camera, gts, gt_ids, gt_velocity }
}

/// Degrade a frame; radar is never touched.
pub fn apply_weather(frame: &Frame, w: &WeatherSpec, base_range_noise: f64, rng: &mut ChaCha8Rng) -> Frame {
    if w.mode == WeatherMode::Clear {
        return frame.clone();
    }
    let mut out = frame.clone();
    if w.lidar_dropout_add > 0.0 || w.lidar_noise_mult > 1.0 {
        let extra = base_range_noise * (w.lidar_noise_mult * w.lidar_noise_mult - 1.0).max(0.0).sqrt();
        let keep_src = frame.lidar_source.len() == frame.lidar.len();
        out.lidar.clear();
        out.lidar_source.clear();
        for (n, p) in frame.lidar.iter().enumerate() {
            let r = p.x.hypot(p.y).hypot(p.z);
            let q = w.lidar_drop_probability(r);
            if q >= 1.0 || (q > 0.0 && rng.gen_bool(q)) {
                continue;
            }
            let scale = if r > 0.0 { (r + gauss(rng, extra)) / r } else { 1.0 };
            out.lidar.push(LidarPoint { x: p.x * scale, y: p.y * scale, z: p.z * scale, i: p.i });
            if keep_src {
                out.lidar_source.push(frame.lidar_source[n]);
            }
        }
    }
    if w.camera_gain < 1.0 || w.camera_noise_add > 0.0 {
        for v in &mut out.camera.rgb {
            *v = ((*v as f64 * w.camera_gain + gauss(rng, w.camera_noise_add)).clamp(0.0, 1.0)) as f32;
        }
    }
    out
}

/// Degradation parameters for each weather mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeatherPresets {
    pub clear: WeatherSpec,
    pub rain: WeatherSpec,
    pub night: WeatherSpec,
}

impl Default for WeatherPresets {
    fn default() -> Self {
        WeatherPresets { clear: WeatherSpec::clear(), rain: WeatherSpec::rain(), night: WeatherSpec::night() }
    }
}

impl WeatherPresets {
    pub fn get(&self, mode: WeatherMode) -> &WeatherSpec {
        match mode {
            WeatherMode::Clear => &self.clear,
            WeatherMode::Rain => &self.rain,
            WeatherMode::Night => &self.night,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for m in WeatherMode::ALL {
            let w = self.get(m);
            if w.mode != m {
                return Err(Error::Config(format!("weather preset {} has mode {}", m.name(), w.mode.name())));
            }
            w.validate()?;
        }
        Ok(())
    }
}

/// All frames of a scene, weather applied.
pub fn generate_scene(spec: &SceneSpec, sensors: &SensorSpec, region: &Region, weather: &WeatherPresets) -> Result<Vec<Frame>> {
    spec.validate()?;
    sensors.validate()?;
    weather.validate()?;
    let w = weather.get(spec.weather);
    Ok((0..spec.num_frames())
        .map(|k| {
            let mut rng = frame_rng(spec.seed, k);
            let f = generate_frame(spec, sensors, region, k, &mut rng);
            apply_weather(&f, w, sensors.lidar.range_noise, &mut rng)
        })
        .collect())
}

/// Parameters of the random scene sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSampler {
    pub frames: usize,
    pub frame_rate: f64,
    pub actors: [usize; 2],
    pub ego_speed: [f64; 2],
    pub actor_speed: [f64; 2],
    /// Probability that an actor is parked.
    pub parked: f64,
    pub ground_z: f64,
}

impl Default for SceneSampler {
    fn default() -> Self {
        SceneSampler {
            frames: 8,
            frame_rate: 5.0,
            actors: [2, 6],
            ego_speed: [0.0, 6.0],
            actor_speed: [2.0, 10.0],
            parked: 0.4,
            ground_z: -1.85,
        }
    }
}

fn hsv_color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    let h = rng.gen_range(0.0..6.0f64);
    let (s, v) = (rng.gen_range(0.6..1.0f64), rng.gen_range(0.6..1.0f64));
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [(r + m) as f32, (g + m) as f32, (b + m) as f32]
}

/// Seeded random scene; re-rolled until every frame has an actor in range.
pub fn sample_scene(sampler: &SceneSampler, region: &Region, weather: WeatherMode, seed: u64) -> Result<SceneSpec> {
    if sampler.frames == 0 || !(sampler.frame_rate > 0.0) || sampler.actors[0] == 0 || sampler.actors[0] > sampler.actors[1] {
        return Err(Error::Config("scene sampler needs frames, a positive rate and at least one actor".into()));
    }
    let duration = (sampler.frames - 1) as f64 / sampler.frame_rate;
    for attempt in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(voxel_seed(seed, [attempt as usize, 0xacc, 0]));
        let ego_speed = rng.gen_range(sampler.ego_speed[0]..=sampler.ego_speed[1]);
        let mut spec = SceneSpec { duration, frame_rate: sampler.frame_rate, ego_speed, ego_yaw_rate: 0.0, actors: Vec::new(), seed, weather };
        let n = rng.gen_range(sampler.actors[0]..=sampler.actors[1]);
        let mut tries = 0;
        while spec.actors.len() < n && tries < 200 {
            tries += 1;
            let w = rng.gen_range(1.7..2.1);
            let l = rng.gen_range(4.0..5.0);
            let h = rng.gen_range(1.4..1.9);
            let x = rng.gen_range(region.x_range[0] + 3.0..region.x_range[1]);
            let y = rng.gen_range(region.y_range[0]..region.y_range[1]);
            let (yaw, velocity) = if rng.gen_bool(sampler.parked) {
                (rng.gen_range(-PI..PI), [0.0, 0.0])
            } else {
                let speed = rng.gen_range(sampler.actor_speed[0]..=sampler.actor_speed[1]);
                let heading = if rng.gen_bool(0.5) { 0.0 } else { PI } + rng.gen_range(-0.3..0.3);
                (wrap(heading), [speed * heading.cos(), speed * heading.sin()])
            };
            let a = ActorSpec {
                bbox: BBox3D { x, y, z: sampler.ground_z + 0.5 * h, w, l, h, yaw },
                velocity,
                color: hsv_color(&mut rng),
                reflectivity: rng.gen_range(0.4..0.9),
            };
            let clashes = spec.actors.iter().any(|o| {
                (0..sampler.frames).any(|k| {
                    let t = spec.time(k);
                    let (p, q) = (a.box_at(t), o.box_at(t));
                    let grow = |b: BBox3D| BBox3D { w: b.w + 0.6, l: b.l + 0.6, ..b };
                    (p.x - q.x).hypot(p.y - q.y) < 7.0 && bev_iou_unchecked(&grow(p), &grow(q)) > 0.0
                })
            });
            // keep the sensor origin clear
            let near_ego = (0..sampler.frames).any(|k| {
                let t = spec.time(k);
                let b = spec.ego_pose(t).inverse().apply_box(&a.box_at(t));
                b.x.abs() < 4.0 && b.y.abs() < 3.0
            });
            if !clashes && !near_ego {
                spec.actors.push(a);
            }
        }
        if spec.actors.is_empty() {
            continue;
        }
        let all_frames_ok = (0..sampler.frames).all(|k| {
            let (boxes, _) = actors_in_ego(&spec, spec.time(k));
            boxes.iter().any(|b| region.contains(b.x, b.y))
        });
        if all_frames_ok {
            return Ok(spec);
        }
    }
    Err(Error::Data(format!("could not place actors for scene seed {seed}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region() -> Region {
        Region { x_range: [0.0, 40.0], y_range: [-15.0, 15.0] }
    }

    fn quiet() -> SensorSpec {
        let mut s = SensorSpec::default();
        s.lidar.range_noise = 0.0;
        s.lidar.dropout = 0.0;
        s.lidar.intensity_noise = 0.0;
        s.radar.pos_noise = 0.0;
        s.radar.vel_noise = 0.0;
        s.radar.clutter_rate = 0.0;
        s.camera.pixel_noise = 0.0;
        s
    }

    fn car(x: f64, y: f64, yaw: f64, v: [f64; 2]) -> ActorSpec {
        ActorSpec { bbox: BBox3D { x, y, z: -1.0, w: 1.9, l: 4.6, h: 1.7, yaw }, velocity: v, color: [1.0, 0.0, 0.0], reflectivity: 0.7 }
    }

    fn scene(actors: Vec<ActorSpec>, ego_speed: f64) -> SceneSpec {
        SceneSpec { duration: 1.0, frame_rate: 5.0, ego_speed, ego_yaw_rate: 0.0, actors, seed: 11, weather: WeatherMode::Clear }
    }

    #[test]
    fn noise_free_points_lie_on_geometry() {
        let spec = scene(vec![car(12.0, 2.0, 0.4, [0.0, 0.0]), car(20.0, -5.0, -1.2, [0.0, 0.0])], 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = generate_frame(&spec, &quiet(), &region(), 0, &mut rng);
        assert!(!f.lidar.is_empty());
        let mut actor_pts = 0;
        for (p, s) in f.lidar.iter().zip(&f.lidar_source) {
            if *s < 0 {
                assert!((p.z - (-1.85)).abs() < 1e-9);
            } else {
                actor_pts += 1;
                assert!(f.gts[*s as usize].contains([p.x, p.y, p.z], 1e-6));
            }
        }
        assert!(actor_pts > 20);
    }

    #[test]
    fn occluded_actor_gets_no_lidar() {
        // a far car hidden exactly behind a near, taller truck-sized box
        let mut near = car(8.0, 0.0, 0.0, [0.0, 0.0]);
        near.bbox.w = 6.0;
        near.bbox.h = 8.0;
        near.bbox.z = -1.85 + 4.0;
        let far = car(25.0, 0.0, 0.0, [0.0, 0.0]);
        let spec = scene(vec![near, far], 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = generate_frame(&spec, &quiet(), &region(), 0, &mut rng);
        assert!(f.lidar_source.iter().any(|s| *s == 0));
        assert!(!f.lidar_source.contains(&1));
        // oracle: no ray toward the far box reaches it before the near one
        for p in f.lidar.iter() {
            let r = p.x.hypot(p.y).hypot(p.z);
            let d = [p.x / r, p.y / r, p.z / r];
            if let Some(t) = ray_box([0.0; 3], d, &f.gts[1]) {
                let blocker = ray_box([0.0; 3], d, &f.gts[0]).unwrap_or(f64::INFINITY);
                let ground = if d[2] < 0.0 { -1.85 / d[2] } else { f64::INFINITY };
                assert!(blocker < t || ground < t);
            }
        }
    }

    #[test]
    fn head_on_radar_velocity() {
        let spec = scene(vec![car(20.0, 0.0, PI, [-10.0, 0.0])], 0.0);
        let mut s = quiet();
        s.radar.lambda = 8.0;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = generate_frame(&spec, &s, &region(), 0, &mut rng);
        assert!(!f.radar.is_empty());
        for p in &f.radar {
            let az = p.y.atan2(p.x);
            let v_r = p.vx * az.cos() + p.vy * az.sin();
            assert!((v_r - (-10.0 * az.cos())).abs() < 1e-9);
            // straight ahead the split is (-10, 0)
            assert!(p.vx < -9.0 && p.vy.abs() < 1.5);
        }
    }

    #[test]
    fn radar_velocity_is_ground_relative() {
        // ego and actor drive side by side at the same speed: zero ground speed
        // would be wrong, the actor moves at 8 m/s over ground
        let spec = scene(vec![car(15.0, 3.0, 0.0, [8.0, 0.0])], 8.0);
        let mut s = quiet();
        s.radar.lambda = 6.0;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = generate_frame(&spec, &s, &region(), 2, &mut rng);
        for p in &f.radar {
            let az = p.y.atan2(p.x);
            let v_r = p.vx * az.cos() + p.vy * az.sin();
            assert!((v_r - 8.0 * az.cos()).abs() < 1e-9);
        }
    }

    #[test]
    fn static_boxes_follow_ego_poses() {
        let spec = SceneSpec { ego_yaw_rate: 0.2, ..scene(vec![car(15.0, 3.0, 0.5, [0.0, 0.0]), car(25.0, -4.0, 2.0, [0.0, 0.0])], 5.0) };
        for k in 0..spec.num_frames() - 1 {
            let (a, _) = actors_in_ego(&spec, spec.time(k));
            let (b, _) = actors_in_ego(&spec, spec.time(k + 1));
            let rel = spec.ego_pose(spec.time(k + 1)).inverse().compose(&spec.ego_pose(spec.time(k)));
            for (p, q) in a.iter().zip(&b) {
                let m = rel.apply_box(p);
                for (u, v) in m.as_array()[..6].iter().zip(&q.as_array()[..6]) {
                    assert!((u - v).abs() < 1e-9);
                }
                assert!(wrap(m.yaw - q.yaw).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn weather_contracts() {
        let spec = scene(vec![car(12.0, 2.0, 0.4, [3.0, 0.0]), car(22.0, -4.0, 1.0, [-5.0, 0.0])], 3.0);
        let s = SensorSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = generate_frame(&spec, &s, &region(), 1, &mut rng);
        let same = apply_weather(&f, &WeatherSpec::clear(), 0.02, &mut rng);
        assert_eq!(same, f);
        let all_gone = WeatherSpec { lidar_dropout_add: 1.0, ..WeatherSpec::rain() };
        assert!(apply_weather(&f, &all_gone, 0.02, &mut rng).lidar.is_empty());
        let night = apply_weather(&f, &WeatherSpec::night(), 0.02, &mut rng);
        assert_eq!(night.radar, f.radar);
        assert_eq!(night.lidar, f.lidar);
        assert_ne!(night.camera.rgb, f.camera.rgb);
        for seed in 0..10 {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let rain = apply_weather(&f, &WeatherSpec::rain(), 0.02, &mut r);
            assert!(rain.lidar.len() <= f.lidar.len());
            assert_eq!(rain.radar, f.radar);
        }
    }

    #[test]
    fn camera_shows_actor_color() {
        let spec = scene(vec![car(10.0, 0.0, 0.0, [0.0, 0.0])], 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = generate_frame(&spec, &quiet(), &region(), 0, &mut rng);
        let cam = &f.camera;
        assert_eq!(cam.pixel(80, 31), [1.0, 0.0, 0.0]);
        assert_eq!(cam.pixel(0, 0), [0.5, 0.5, 0.5]);
        let mut amb = quiet();
        amb.camera.color_ambiguity = 1.0;
        let f = generate_frame(&spec, &amb, &region(), 0, &mut rng);
        assert_eq!(f.camera.pixel(80, 31), [0.5, 0.5, 0.5]);
    }

    #[test]
    fn sampled_scenes_are_deterministic_and_populated() {
        let sampler = SceneSampler::default();
        for seed in 0..20 {
            let a = sample_scene(&sampler, &region(), WeatherMode::Rain, seed).unwrap();
            let b = sample_scene(&sampler, &region(), WeatherMode::Rain, seed).unwrap();
            assert_eq!(a, b);
            let frames = generate_scene(&a, &SensorSpec::default(), &region(), &WeatherPresets::default()).unwrap();
            assert_eq!(frames.len(), sampler.frames);
            assert!(frames.iter().all(|f| !f.gts.is_empty()));
            assert_eq!(frames, generate_scene(&b, &SensorSpec::default(), &region(), &WeatherPresets::default()).unwrap());
        }
    }
}
