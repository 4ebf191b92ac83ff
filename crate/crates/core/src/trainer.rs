//! Frame preprocessing, global augmentation, the Adam training loop and
//! inference with NMS.

use std::f64::consts::FRAC_PI_4;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalmetrics::{evaluate, Detection, FrameResult};
use crate::fusionio::{accumulate_sweeps, colorize, depth_complete, FusedPoint, Source, Sweep};
use crate::geom::{nms, wrap, BBox3D};
use crate::losses::{loss_node, sigmoid, LossBreakdown, LossWeights};
use crate::net::{Detector, Graph, NetConfig, NetworkOutput, ParamStore, TrunkLayer};
use crate::scenegen::Frame;
use crate::targets::{decode_box, generate_anchors, match_anchors, Anchor, AnchorConfig, MatchConfig, TargetAssignment, YawMode};
use crate::voxel::{cap_all, voxel_seed, voxelize, FeatureMask, GridConfig, OffsetMode, VoxelInput, POINT_FEATURES};

/// Which sensors feed the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Modality {
    pub lidar: bool,
    pub rgb: bool,
    pub radar: bool,
    /// Densified points from depth completion.
    pub depth: bool,
}

impl Default for Modality {
    fn default() -> Self {
        Modality { lidar: true, rgb: true, radar: true, depth: false }
    }
}

impl Modality {
    pub const LIDAR: Modality = Modality { lidar: true, rgb: false, radar: false, depth: false };
    pub const RADAR: Modality = Modality { lidar: false, rgb: false, radar: true, depth: false };

    /// Input mask: intensity follows lidar, color follows rgb, rcs and
    /// velocity follow radar. Positions and offsets are always on.
    pub fn mask(&self) -> FeatureMask {
        let mut m = [true; POINT_FEATURES];
        m[3] = self.lidar || self.depth;
        for k in 4..7 {
            m[k] = self.rgb;
        }
        for k in 7..10 {
            m[k] = self.radar;
        }
        FeatureMask(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lidar || self.radar || self.depth) {
            return Err(Error::Config("modality needs at least one point source (lidar, radar or depth)".into()));
        }
        if self.depth && !self.rgb {
            return Err(Error::Config("depth points are built from the camera and need rgb".into()));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        for (on, name) in [(self.lidar, "lidar"), (self.rgb, "rgb"), (self.radar, "radar"), (self.depth, "depth")] {
            if on {
                parts.push(name);
            }
        }
        parts.join("+")
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut m = Modality { lidar: false, rgb: false, radar: false, depth: false };
        for part in s.split([',', '+']).map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "lidar" => m.lidar = true,
                "rgb" | "camera" => m.rgb = true,
                "radar" => m.radar = true,
                "depth" => m.depth = true,
                _ => return Err(Error::Config(format!("unknown modality {part:?}"))),
            }
        }
        m.validate()?;
        Ok(m)
    }
}

/// Fused cloud for frame `k` of a scene: the last `sweeps` frames moved into
/// frame `k`'s ego frame.
pub fn prepare_points(scene: &[Frame], k: usize, sweeps: usize, modality: &Modality) -> Result<Vec<FusedPoint>> {
    if k >= scene.len() {
        return Err(Error::InvalidArgument(format!("frame {k} out of range for a {}-frame scene", scene.len())));
    }
    let start = (k + 1).saturating_sub(sweeps);
    let window = &scene[start..=k];
    let sweep_list: Vec<Sweep<FusedPoint>> = window
        .iter()
        .map(|f| {
            let mut cloud = Vec::new();
            if modality.lidar {
                if modality.rgb {
                    cloud.extend(colorize(&f.lidar, &f.camera));
                } else {
                    cloud.extend(f.lidar.iter().map(FusedPoint::from_lidar));
                }
            }
            if modality.depth {
                cloud.extend(depth_complete(&f.lidar, &f.camera).points);
            }
            if modality.radar {
                cloud.extend(f.radar.iter().map(FusedPoint::from_radar));
            }
            Sweep { cloud, ego_pose: f.ego_pose, timestamp: f.timestamp }
        })
        .collect();
    Ok(accumulate_sweeps(&sweep_list, sweeps)?
        .into_iter()
        .map(|t| FusedPoint { lag: t.lag, ..t.point })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Yaw drawn from `U(-max_rotation, max_rotation)`.
    pub max_rotation: f64,
    /// Per-axis x / y shift drawn from `N(0, translation_std)`.
    pub translation_std: f64,
    pub scale: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { enabled: true, max_rotation: FRAC_PI_4, translation_std: 0.2, scale: [0.95, 1.05] }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_rotation >= 0.0) || !(self.translation_std >= 0.0) {
            return Err(Error::Config("augmentation rotation and translation must be nonnegative".into()));
        }
        if !(self.scale[0] > 0.0 && self.scale[0] <= self.scale[1]) {
            return Err(Error::Config(format!("augmentation scale range {:?} is invalid", self.scale)));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> GlobalTransform {
        if !self.enabled {
            return GlobalTransform::IDENTITY;
        }
        let yaw = if self.max_rotation > 0.0 { rng.gen_range(-self.max_rotation..=self.max_rotation) } else { 0.0 };
        let mut shift = || {
            if self.translation_std > 0.0 {
                Normal::new(0.0, self.translation_std).expect("finite std").sample(rng)
            } else {
                0.0
            }
        };
        let (tx, ty) = (shift(), shift());
        let scale = if self.scale[1] > self.scale[0] { rng.gen_range(self.scale[0]..=self.scale[1]) } else { self.scale[0] };
        GlobalTransform { yaw, tx, ty, scale }
    }
}

/// `p -> scale * R(yaw) p + (tx, ty, 0)`; velocities get rotation and scale only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalTransform {
    pub yaw: f64,
    pub tx: f64,
    pub ty: f64,
    pub scale: f64,
}

impl GlobalTransform {
    pub const IDENTITY: GlobalTransform = GlobalTransform { yaw: 0.0, tx: 0.0, ty: 0.0, scale: 1.0 };

    fn rot(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (self.scale * (c * x - s * y), self.scale * (s * x + c * y))
    }

    pub fn point(&self, p: &FusedPoint) -> FusedPoint {
        let (x, y) = self.rot(p.x, p.y);
        let (vx, vy) = self.rot(p.vx, p.vy);
        FusedPoint { x: x + self.tx, y: y + self.ty, z: p.z * self.scale, vx, vy, ..*p }
    }

    pub fn bbox(&self, b: &BBox3D) -> BBox3D {
        let (x, y) = self.rot(b.x, b.y);
        BBox3D {
            x: x + self.tx,
            y: y + self.ty,
            z: b.z * self.scale,
            w: b.w * self.scale,
            l: b.l * self.scale,
            h: b.h * self.scale,
            yaw: wrap(b.yaw + self.yaw),
        }
    }
}

/// Applies one transform to a cloud and its boxes.
pub fn augment(points: &[FusedPoint], gts: &[BBox3D], t: &GlobalTransform) -> (Vec<FusedPoint>, Vec<BBox3D>) {
    (points.iter().map(|p| t.point(p)).collect(), gts.iter().map(|b| t.bbox(b)).collect())
}

/// Preset network and grid sized for a single CPU core.
pub fn tiny_grid() -> GridConfig {
    GridConfig {
        x_range: [0.0, 25.6],
        y_range: [-12.8, 12.8],
        z_range: [-2.2, 0.6],
        voxel_xy: 0.4,
        voxel_z: 0.7,
        max_points: 40,
        offset_mode: OffsetMode::Center,
    }
}

pub fn tiny_net() -> NetConfig {
    NetConfig {
        vfe_widths: vec![16, 32],
        voxel_channels: 16,
        sparse_channels: vec![16],
        trunk: vec![
            TrunkLayer { kernel: 3, channels: 32, dilation: 1 },
            TrunkLayer { kernel: 3, channels: 32, dilation: 2 },
            TrunkLayer { kernel: 3, channels: 32, dilation: 4 },
        ],
        cls_prior: 0.01,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 2e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub sweeps: usize,
    pub weights: LossWeights,
    pub grid: GridConfig,
    pub net: NetConfig,
    pub anchors: AnchorConfig,
    pub matching: MatchConfig,
    pub yaw_mode: YawMode,
    pub modality: Modality,
    /// Stop after this many epochs without a better validation score.
    pub patience: Option<usize>,
    /// Stop as soon as validation mean AP reaches this value.
    pub target_ap: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            optimizer: AdamConfig::default(),
            seed: 0,
            augment: AugmentConfig::default(),
            score_threshold: 0.3,
            nms_iou: 0.1,
            sweeps: 3,
            weights: LossWeights::default(),
            grid: tiny_grid(),
            net: tiny_net(),
            anchors: AnchorConfig::default(),
            matching: MatchConfig::default(),
            yaw_mode: YawMode::SinBin,
            modality: Modality::default(),
            patience: Some(10),
            target_ap: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.sweeps == 0 {
            return Err(Error::Config("epochs and sweeps must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) || !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(Error::Config("score_threshold and nms_iou must lie in [0, 1]".into()));
        }
        let o = &self.optimizer;
        if !(o.lr >= 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return Err(Error::Config(format!("invalid optimizer settings {o:?}")));
        }
        self.augment.validate()?;
        self.weights.validate()?;
        self.grid.validate()?;
        self.net.validate()?;
        self.matching.validate()?;
        self.modality.validate()
    }

    /// Direct yaw regression has no direction head to train.
    pub fn effective_weights(&self) -> LossWeights {
        match self.yaw_mode {
            YawMode::SinBin => self.weights,
            YawMode::Direct => LossWeights { dir: 0.0, ..self.weights },
        }
    }
}

/// A model plus everything needed to run it on frames.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub cfg: TrainConfig,
    pub detector: Detector,
    pub anchors: Vec<Anchor>,
}

impl Pipeline {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let detector = Detector::new(cfg.net.clone(), &cfg.grid)?;
        let anchors = generate_anchors(&cfg.grid, &cfg.anchors);
        Ok(Pipeline { cfg, detector, anchors })
    }

    /// Voxelized network input. The cap seed depends on `seed` only.
    pub fn input_of(&self, points: &[FusedPoint], seed: u64) -> VoxelInput {
        let m = self.cfg.modality;
        let kept: Vec<FusedPoint> = points
            .iter()
            .filter(|p| match p.source {
                Source::Lidar => m.lidar,
                Source::Radar => m.radar,
                Source::Densified => m.depth,
            })
            .copied()
            .collect();
        let voxels = cap_all(voxelize(&kept, &self.cfg.grid), self.cfg.grid.max_points, seed);
        VoxelInput::from_voxels(&voxels, &self.cfg.grid, &m.mask())
    }

    /// Gts whose BEV center lies inside the grid.
    pub fn gts_in_range(&self, gts: &[BBox3D]) -> Vec<BBox3D> {
        gts.iter().filter(|b| self.cfg.grid.in_bev_range(b.x, b.y)).copied().collect()
    }

    pub fn targets(&self, gts: &[BBox3D]) -> Result<TargetAssignment> {
        match_anchors(&self.anchors, &self.cfg.grid, gts, &self.cfg.matching, self.cfg.yaw_mode)
    }

    pub fn predict(&self, params: &ParamStore, input: &VoxelInput) -> Result<NetworkOutput> {
        self.detector.predict(params, input)
    }

    /// Thresholded, decoded and suppressed detections, best first.
    pub fn decode(&self, out: &NetworkOutput) -> Result<Vec<Detection>> {
        let mut boxes = Vec::new();
        let mut scores = Vec::new();
        for (a, anchor) in self.anchors.iter().enumerate() {
            let s = sigmoid(out.cls[a]);
            if s >= self.cfg.score_threshold {
                boxes.push(decode_box(anchor, out.reg_of(a), sigmoid(out.dir[a]), self.cfg.yaw_mode));
                scores.push(s);
            }
        }
        let kept = nms(&boxes, &scores, self.cfg.nms_iou)?;
        Ok(kept.into_iter().map(|i| Detection { bbox: boxes[i], score: scores[i] }).collect())
    }

    pub fn infer(&self, params: &ParamStore, input: &VoxelInput) -> Result<Vec<Detection>> {
        self.decode(&self.predict(params, input)?)
    }

    /// Runs the model on frame `k` of a scene.
    pub fn infer_frame(&self, params: &ParamStore, scene: &[Frame], k: usize) -> Result<Vec<Detection>> {
        let pts = prepare_points(scene, k, self.cfg.sweeps, &self.cfg.modality)?;
        self.infer(params, &self.input_of(&pts, frame_seed(self.cfg.seed, usize::MAX, k)))
    }
}

fn frame_seed(seed: u64, a: usize, b: usize) -> u64 {
    voxel_seed(seed, [a, b, 0xf4a3e])
}

/// Training example before augmentation.
#[derive(Debug, Clone)]
pub struct Example {
    pub points: Vec<FusedPoint>,
    pub gts: Vec<BBox3D>,
}

/// Frames with at least one in-range gt, preprocessed.
pub fn build_examples(pipe: &Pipeline, scenes: &[Vec<Frame>]) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for scene in scenes {
        for k in 0..scene.len() {
            let gts = pipe.gts_in_range(&scene[k].gts);
            if gts.is_empty() {
                continue;
            }
            let points = prepare_points(scene, k, pipe.cfg.sweeps, &pipe.cfg.modality)?;
            out.push(Example { points, gts });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_cls: f64,
    pub train_reg: f64,
    pub train_dir: f64,
    /// Mean validation AP, NaN without a validation set.
    pub val_ap: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: ParamStore,
    pub last: ParamStore,
    pub best_epoch: usize,
    pub curves: Vec<EpochRecord>,
    /// Loss of the first step, before any update.
    pub initial_loss: f64,
}

pub fn write_curves_csv<W: Write>(mut w: W, curves: &[EpochRecord]) -> Result<()> {
    writeln!(w, "epoch,train_loss,train_cls,train_reg,train_dir,val_ap")?;
    for r in curves {
        writeln!(
            w,
            "{},{:.9},{:.9},{:.9},{:.9},{:.9}",
            r.epoch, r.train_loss, r.train_cls, r.train_reg, r.train_dir, r.val_ap
        )?;
    }
    Ok(())
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Adam { m: zeros.clone(), v: zeros, t: 0 }
    }

    fn step(&mut self, store: &mut ParamStore, o: &AdamConfig) {
        self.t += 1;
        let bc1 = 1.0 - o.beta1.powi(self.t);
        let bc2 = 1.0 - o.beta2.powi(self.t);
        for (k, (_, p)) in store.iter_mut().enumerate() {
            let Some(g) = p.grad.take() else { continue };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..g.len() {
                m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
                v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p.data[i] -= o.lr * mh / (vh.sqrt() + o.eps);
            }
        }
    }
}

/// One forward/backward pass; gradients land in `params`.
pub fn loss_and_grad(pipe: &Pipeline, params: &mut ParamStore, input: &VoxelInput, tgt: &TargetAssignment) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let heads = pipe.detector.forward(&mut g, params, input)?;
    let (loss, parts) = loss_node(&mut g, &heads, tgt, &pipe.cfg.effective_weights())?;
    g.backward(loss, params)?;
    Ok(parts)
}

/// Mean AP of a model over evaluation frames.
pub fn evaluate_examples(pipe: &Pipeline, params: &ParamStore, inputs: &[(VoxelInput, Vec<BBox3D>)]) -> Result<f64> {
    let mut frames = Vec::with_capacity(inputs.len());
    for (input, gts) in inputs {
        frames.push(FrameResult { dets: pipe.infer(params, input)?, gts: gts.clone() });
    }
    Ok(evaluate(&frames)?.mean_ap)
}

/// Seeded Adam training with batch size 1. `val` may be empty, in which case
/// the lowest training loss picks the best epoch.
pub fn train(pipe: &Pipeline, train_set: &[Example], val: &[Example], init: Option<ParamStore>) -> Result<TrainOutcome> {
    let cfg = &pipe.cfg;
    if train_set.is_empty() {
        return Err(Error::Data("training set has no frame with a vehicle in range".into()));
    }
    let mut params = init.unwrap_or_else(|| pipe.detector.init_params(cfg.seed));
    let mut adam = Adam::new(&params);
    let val_inputs: Vec<(VoxelInput, Vec<BBox3D>)> = val
        .iter()
        .enumerate()
        .map(|(i, e)| (pipe.input_of(&e.points, frame_seed(cfg.seed, usize::MAX, i)), e.gts.clone()))
        .collect();
    // without augmentation every epoch sees the same inputs
    let fixed: Option<Vec<(VoxelInput, TargetAssignment)>> = if cfg.augment.enabled {
        None
    } else {
        Some(
            train_set
                .iter()
                .enumerate()
                .map(|(i, e)| Ok((pipe.input_of(&e.points, frame_seed(cfg.seed, 0, i)), pipe.targets(&e.gts)?)))
                .collect::<Result<_>>()?,
        )
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(voxel_seed(cfg.seed, [0x5, 0xff, 0]));
    let mut curves = Vec::new();
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut best_score = f64::NEG_INFINITY;
    let mut initial_loss = f64::NAN;
    let mut since_best = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = LossBreakdown::default();
        for (step, &i) in order.iter().enumerate() {
            let parts = match &fixed {
                Some(f) => loss_and_grad(pipe, &mut params, &f[i].0, &f[i].1),
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(cfg.seed, epoch, i));
                    let t = cfg.augment.sample(&mut rng);
                    let (pts, gts) = augment(&train_set[i].points, &train_set[i].gts, &t);
                    let gts = pipe.gts_in_range(&gts);
                    let input = pipe.input_of(&pts, rng.gen());
                    loss_and_grad(pipe, &mut params, &input, &pipe.targets(&gts)?)
                }
            }
            .map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, step {step}, frame {i}: {m}")),
                other => other,
            })?;
            if initial_loss.is_nan() {
                initial_loss = parts.total;
            }
            sum.total += parts.total;
            sum.cls += parts.cls;
            sum.reg += parts.reg;
            sum.dir += parts.dir;
            adam.step(&mut params, &cfg.optimizer);
            if params.iter().any(|(_, t)| t.data.iter().any(|v| !v.is_finite())) {
                return Err(Error::Numeric(format!("parameters diverged at epoch {epoch}, step {step}")));
            }
        }
        let n = order.len() as f64;
        let val_ap = if val_inputs.is_empty() { f64::NAN } else { evaluate_examples(pipe, &params, &val_inputs)? };
        let rec = EpochRecord {
            epoch,
            train_loss: sum.total / n,
            train_cls: sum.cls / n,
            train_reg: sum.reg / n,
            train_dir: sum.dir / n,
            val_ap,
        };
        curves.push(rec);
        let score = if val_inputs.is_empty() { -rec.train_loss } else { val_ap };
        if score > best_score {
            best_score = score;
            best = params.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if cfg.target_ap.is_some_and(|t| val_ap >= t) {
            break;
        }
        if cfg.patience.is_some_and(|p| since_best >= p) {
            break;
        }
    }
    Ok(TrainOutcome { best, last: params, best_epoch, curves, initial_loss })
}
