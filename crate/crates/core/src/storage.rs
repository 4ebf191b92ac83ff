//! On-disk dataset format.
//!
//! ```text
//! <root>/manifest.json
//! <root>/scene_0000/frame_000.json      header: timestamp, pose, camera, gt boxes, counts
//! <root>/scene_0000/frame_000.lidar.bin f32 LE rows of x, y, z, i
//! <root>/scene_0000/frame_000.radar.bin f32 LE rows of x, y, z, rcs, vx, vy
//! <root>/scene_0000/frame_000.rgb.bin   f32 LE row-major RGB, height x width x 3
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fusionio::{CameraFrame, Intrinsics, LidarPoint, RadarPoint};
use crate::geom::{BBox3D, Pose};
use crate::scenegen::{generate_scene, sample_scene, Frame, Region, SceneSampler, SensorSpec, WeatherMode, WeatherPresets};
use crate::voxel::voxel_seed;

pub const FORMAT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// SHA-256 of the canonical JSON form of a config value.
pub fn config_hash<T: Serialize>(value: &T) -> Result<[u8; 32]> {
    let bytes = serde_json::to_vec(value)?;
    Ok(Sha256::digest(&bytes).into())
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            _ => Err(Error::Config(format!("unknown split {s:?}, expected train or val"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub scenes: usize,
    /// Fractions of scenes in the train and val splits.
    pub split: [f64; 2],
    pub seed: u64,
    /// Weather modes cycled over train scenes.
    pub train_weather: Vec<WeatherMode>,
    /// Weather modes cycled over val scenes.
    pub val_weather: Vec<WeatherMode>,
    pub region: Region,
    pub sampler: SceneSampler,
    pub sensors: SensorSpec,
    pub weather: WeatherPresets,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            scenes: 10,
            split: [0.8, 0.2],
            seed: 1,
            train_weather: WeatherMode::ALL.to_vec(),
            val_weather: WeatherMode::ALL.to_vec(),
            region: Region { x_range: [0.0, 25.6], y_range: [-12.8, 12.8] },
            sampler: SceneSampler::default(),
            sensors: SensorSpec::default(),
            weather: WeatherPresets::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scenes == 0 {
            return Err(Error::Config("dataset needs at least one scene".into()));
        }
        if self.split.iter().any(|f| !(0.0..=1.0).contains(f)) || (self.split[0] + self.split[1] - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must be in [0, 1] and sum to 1, got {:?}", self.split)));
        }
        if self.train_weather.is_empty() || self.val_weather.is_empty() {
            return Err(Error::Config("weather lists must be nonempty".into()));
        }
        self.weather.validate()?;
        self.sensors.validate()
    }

    pub fn num_train(&self) -> usize {
        ((self.scenes as f64 * self.split[0]).round() as usize).min(self.scenes)
    }

    /// Per-scene plan: seed, split, weather. Seeds are unique per index.
    pub fn plan(&self) -> Vec<SceneEntry> {
        let n_train = self.num_train();
        (0..self.scenes)
            .map(|i| {
                let (split, j) = if i < n_train { (Split::Train, i) } else { (Split::Val, i - n_train) };
                let modes = if split == Split::Train { &self.train_weather } else { &self.val_weather };
                SceneEntry {
                    name: format!("scene_{i:04}"),
                    seed: voxel_seed(self.seed, [i, 0xda7a, 0]),
                    split,
                    weather: modes[j % modes.len()],
                    frames: self.sampler.frames,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub name: String,
    pub seed: u64,
    pub split: Split,
    pub weather: WeatherMode,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCount {
    pub scenes: usize,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub region: Region,
    pub frame_rate: f64,
    pub train: SplitCount,
    pub val: SplitCount,
    pub scenes: Vec<SceneEntry>,
    pub config: DatasetConfig,
}

impl Manifest {
    pub fn scenes_in(&self, split: Split) -> impl Iterator<Item = &SceneEntry> {
        self.scenes.iter().filter(move |s| s.split == split)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FrameHeader {
    timestamp: f64,
    ego_pose: Pose,
    width: usize,
    height: usize,
    intrinsics: Intrinsics,
    extrinsics: Pose,
    lidar_count: usize,
    radar_count: usize,
    gts: Vec<BBox3D>,
    gt_ids: Vec<usize>,
    gt_velocity: Vec<[f64; 2]>,
}

fn write_f32(path: &Path, values: impl Iterator<Item = f64>) -> Result<()> {
    let mut buf = Vec::new();
    for v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

fn read_f32(path: &Path, cols: usize, rows: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() != rows * cols * 4 {
        return Err(Error::Data(format!(
            "{}: expected {} floats, found {} bytes",
            path.display(),
            rows * cols,
            bytes.len()
        )));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

fn frame_stem(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("frame_{k:03}"))
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

pub fn write_frame(dir: &Path, k: usize, f: &Frame) -> Result<()> {
    let stem = frame_stem(dir, k);
    let header = FrameHeader {
        timestamp: f.timestamp,
        ego_pose: f.ego_pose,
        width: f.camera.width,
        height: f.camera.height,
        intrinsics: f.camera.intrinsics,
        extrinsics: f.camera.extrinsics,
        lidar_count: f.lidar.len(),
        radar_count: f.radar.len(),
        gts: f.gts.clone(),
        gt_ids: f.gt_ids.clone(),
        gt_velocity: f.gt_velocity.clone(),
    };
    fs::write(with_ext(&stem, ".json"), serde_json::to_vec_pretty(&header)?)?;
    write_f32(&with_ext(&stem, ".lidar.bin"), f.lidar.iter().flat_map(|p| [p.x, p.y, p.z, p.i]))?;
    write_f32(
        &with_ext(&stem, ".radar.bin"),
        f.radar.iter().flat_map(|p| [p.x, p.y, p.z, p.rcs, p.vx, p.vy]),
    )?;
    write_f32(&with_ext(&stem, ".rgb.bin"), f.camera.rgb.iter().map(|v| *v as f64))?;
    Ok(())
}

pub fn read_frame(dir: &Path, k: usize) -> Result<Frame> {
    let stem = frame_stem(dir, k);
    let hpath = with_ext(&stem, ".json");
    let text = fs::read(&hpath).map_err(|e| Error::Data(format!("{}: {e}", hpath.display())))?;
    let h: FrameHeader = serde_json::from_slice(&text)?;
    let lidar = read_f32(&with_ext(&stem, ".lidar.bin"), 4, h.lidar_count)?
        .chunks_exact(4)
        .map(|c| LidarPoint { x: c[0] as f64, y: c[1] as f64, z: c[2] as f64, i: c[3] as f64 })
        .collect();
    let radar = read_f32(&with_ext(&stem, ".radar.bin"), 6, h.radar_count)?
        .chunks_exact(6)
        .map(|c| RadarPoint {
            x: c[0] as f64,
            y: c[1] as f64,
            z: c[2] as f64,
            rcs: c[3] as f64,
            vx: c[4] as f64,
            vy: c[5] as f64,
        })
        .collect();
    let rgb = read_f32(&with_ext(&stem, ".rgb.bin"), 3, h.width * h.height)?;
    let camera = CameraFrame::new(h.width, h.height, rgb, h.intrinsics, h.extrinsics)?;
    if h.gt_ids.len() != h.gts.len() || h.gt_velocity.len() != h.gts.len() {
        return Err(Error::Data(format!("{}: gt arrays differ in length", hpath.display())));
    }
    Ok(Frame {
        timestamp: h.timestamp,
        ego_pose: h.ego_pose,
        lidar,
        lidar_source: Vec::new(),
        radar,
        camera,
        gts: h.gts,
        gt_ids: h.gt_ids,
        gt_velocity: h.gt_velocity,
    })
}

pub fn write_scene(root: &Path, name: &str, frames: &[Frame]) -> Result<()> {
    let dir = root.join(name);
    fs::create_dir_all(&dir)?;
    for (k, f) in frames.iter().enumerate() {
        write_frame(&dir, k, f)?;
    }
    Ok(())
}

pub fn read_scene(root: &Path, entry: &SceneEntry) -> Result<Vec<Frame>> {
    let dir = root.join(&entry.name);
    (0..entry.frames).map(|k| read_frame(&dir, k)).collect()
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join("manifest.json");
    let text = fs::read(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let m: Manifest = serde_json::from_slice(&text)?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Data(format!("unsupported dataset format version {}", m.format_version)));
    }
    Ok(m)
}

/// Generates every scene of the plan and writes it below `root`.
pub fn generate_dataset(cfg: &DatasetConfig, root: &Path) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(root)?;
    let scenes = cfg.plan();
    for entry in &scenes {
        let spec = sample_scene(&cfg.sampler, &cfg.region, entry.weather, entry.seed)?;
        let frames = generate_scene(&spec, &cfg.sensors, &cfg.region, &cfg.weather)?;
        write_scene(root, &entry.name, &frames)?;
    }
    let count = |split| {
        let s: Vec<_> = scenes.iter().filter(|e| e.split == split).collect();
        SplitCount { scenes: s.len(), frames: s.iter().map(|e| e.frames).sum() }
    };
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        config_hash: hex(&config_hash(cfg)?),
        region: cfg.region.clone(),
        frame_rate: cfg.sampler.frame_rate,
        train: count(Split::Train),
        val: count(Split::Val),
        scenes,
        config: cfg.clone(),
    };
    fs::write(root.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// All frames of one split, scene by scene.
pub fn load_split(root: &Path, manifest: &Manifest, split: Split) -> Result<Vec<Vec<Frame>>> {
    manifest.scenes_in(split).map(|e| read_scene(root, e)).collect()
}
