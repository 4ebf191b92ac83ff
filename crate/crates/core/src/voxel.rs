//! Voxel partitioning, radar-preferring point caps, and the packed / sparse
//! tensors that feed the network.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusionio::{FusedPoint, Source};

/// Network input width: 10 fused features plus 3 local offsets.
pub const POINT_FEATURES: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OffsetMode {
    Center,
    Centroid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub z_range: [f64; 2],
    pub voxel_xy: f64,
    pub voxel_z: f64,
    pub max_points: usize,
    pub offset_mode: OffsetMode,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            x_range: [0.0, 50.0],
            y_range: [-20.0, 20.0],
            z_range: [-3.0, 3.0],
            voxel_xy: 0.2,
            voxel_z: 0.4,
            max_points: 40,
            offset_mode: OffsetMode::Center,
        }
    }
}

fn cells(range: [f64; 2], size: f64) -> usize {
    (((range[1] - range[0]) / size) - 1e-9).ceil() as usize
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("x_range", self.x_range), ("y_range", self.y_range), ("z_range", self.z_range)] {
            if !(r[1] > r[0]) {
                return Err(Error::Config(format!("{name} must be nonempty, got {r:?}")));
            }
        }
        if !(self.voxel_xy > 0.0 && self.voxel_z > 0.0) {
            return Err(Error::Config("voxel sizes must be positive".into()));
        }
        if self.max_points == 0 {
            return Err(Error::Config("max_points must be at least 1".into()));
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        cells(self.x_range, self.voxel_xy)
    }
    pub fn ny(&self) -> usize {
        cells(self.y_range, self.voxel_xy)
    }
    pub fn nz(&self) -> usize {
        cells(self.z_range, self.voxel_z)
    }

    /// `(nx, ny, nz)`.
    pub fn dims(&self) -> [usize; 3] {
        [self.nx(), self.ny(), self.nz()]
    }

    pub fn voxel_center(&self, coord: [usize; 3]) -> [f64; 3] {
        [
            self.x_range[0] + (coord[0] as f64 + 0.5) * self.voxel_xy,
            self.y_range[0] + (coord[1] as f64 + 0.5) * self.voxel_xy,
            self.z_range[0] + (coord[2] as f64 + 0.5) * self.voxel_z,
        ]
    }

    /// Grid cell of a point, or `None` outside the half-open ranges.
    pub fn coord_of(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let axis = |v: f64, r: [f64; 2], size: f64, n: usize| -> Option<usize> {
            if !(v >= r[0] && v < r[1]) {
                return None;
            }
            // rounding can push a value just below the upper bound into cell n
            Some((((v - r[0]) / size).floor() as usize).min(n - 1))
        };
        Some([
            axis(p[0], self.x_range, self.voxel_xy, self.nx())?,
            axis(p[1], self.y_range, self.voxel_xy, self.ny())?,
            axis(p[2], self.z_range, self.voxel_z, self.nz())?,
        ])
    }

    pub fn in_bev_range(&self, x: f64, y: f64) -> bool {
        x >= self.x_range[0] && x < self.x_range[1] && y >= self.y_range[0] && y < self.y_range[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelPoint {
    pub point: FusedPoint,
    /// Offset from the voxel center.
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Voxel {
    pub coord: [usize; 3],
    pub points: Vec<VoxelPoint>,
}

/// Bins in-range points into voxels sorted by `(ix, iy, iz)`; points keep
/// their input order inside a voxel. No cap is applied here.
pub fn voxelize(points: &[FusedPoint], cfg: &GridConfig) -> Vec<Voxel> {
    let mut keyed: Vec<([usize; 3], usize)> = points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| cfg.coord_of(p.position()).map(|c| (c, i)))
        .collect();
    keyed.sort_unstable();
    let mut voxels: Vec<Voxel> = Vec::new();
    for (coord, i) in keyed {
        let p = points[i];
        let c = cfg.voxel_center(coord);
        let vp = VoxelPoint { point: p, offset: [p.x - c[0], p.y - c[1], p.z - c[2]] };
        match voxels.last_mut() {
            Some(v) if v.coord == coord => v.points.push(vp),
            _ => voxels.push(Voxel { coord, points: vec![vp] }),
        }
    }
    voxels
}

/// Enforces the point cap. Radar points are kept ahead of any other source;
/// remaining slots are filled by uniform sampling without replacement.
pub fn cap_voxel<R: rand::Rng>(v: Voxel, max_points: usize, rng: &mut R) -> Voxel {
    if v.points.len() <= max_points {
        return v;
    }
    let (radar, other): (Vec<usize>, Vec<usize>) =
        (0..v.points.len()).partition(|&i| v.points[i].point.source == Source::Radar);
    let mut keep: Vec<usize> = if radar.len() >= max_points {
        sample(rng, radar.len(), max_points).into_iter().map(|k| radar[k]).collect()
    } else {
        let slots = max_points - radar.len();
        let mut k = radar.clone();
        k.extend(sample(rng, other.len(), slots).into_iter().map(|j| other[j]));
        k
    };
    keep.sort_unstable();
    let points = keep.into_iter().map(|i| v.points[i]).collect();
    Voxel { coord: v.coord, points }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-voxel generator seed: `seed ^ hash(coord)`.
pub fn voxel_seed(seed: u64, coord: [usize; 3]) -> u64 {
    let packed = (coord[0] as u64) | ((coord[1] as u64) << 21) | ((coord[2] as u64) << 42);
    seed ^ splitmix64(packed)
}

/// Caps every voxel with an independent generator derived from `seed`.
pub fn cap_all(voxels: Vec<Voxel>, max_points: usize, seed: u64) -> Vec<Voxel> {
    voxels
        .into_iter()
        .map(|v| {
            if v.points.len() <= max_points {
                return v;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(voxel_seed(seed, v.coord));
            cap_voxel(v, max_points, &mut rng)
        })
        .collect()
}

/// Active sites and their feature rows, sorted lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor {
    pub coords: Vec<[usize; 3]>,
    pub channels: usize,
    /// Row-major `coords.len() x channels`.
    pub features: Vec<f64>,
}

impl SparseTensor {
    pub fn empty(channels: usize) -> Self {
        SparseTensor { coords: Vec::new(), channels, features: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }
}

/// Builds a sorted sparse tensor; duplicate coordinates are rejected.
pub fn to_sparse(entries: Vec<([usize; 3], Vec<f64>)>, channels: usize) -> Result<SparseTensor> {
    let mut entries = entries;
    if let Some((c, f)) = entries.iter().find(|(_, f)| f.len() != channels) {
        return Err(Error::Shape(format!("site {c:?} has {} channels, expected {channels}", f.len())));
    }
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::InvalidArgument(format!("duplicate sparse coordinate {:?}", w[0].0)));
    }
    let mut coords = Vec::with_capacity(entries.len());
    let mut features = Vec::with_capacity(entries.len() * channels);
    for (c, f) in entries {
        coords.push(c);
        features.extend_from_slice(&f);
    }
    Ok(SparseTensor { coords, channels, features })
}

/// Which of the 13 input features are passed to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMask(pub [bool; POINT_FEATURES]);

impl Default for FeatureMask {
    fn default() -> Self {
        FeatureMask([true; POINT_FEATURES])
    }
}

/// Fixed per-feature scale applied before the network so that positions,
/// velocities and offsets enter at comparable magnitudes.
pub fn feature_scales(cfg: &GridConfig) -> [f64; POINT_FEATURES] {
    let sx = cfg.x_range[1].abs().max(cfg.x_range[0].abs());
    let sy = cfg.y_range[1].abs().max(cfg.y_range[0].abs());
    let sz = cfg.z_range[1].abs().max(cfg.z_range[0].abs());
    [
        1.0 / sx,
        1.0 / sy,
        1.0 / sz,
        1.0,
        1.0,
        1.0,
        1.0,
        1.0 / 20.0,
        1.0 / 10.0,
        1.0 / 10.0,
        2.0 / cfg.voxel_xy,
        2.0 / cfg.voxel_xy,
        2.0 / cfg.voxel_z,
    ]
}

/// Packed network input: all points of all voxels back to back.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelInput {
    pub coords: Vec<[usize; 3]>,
    /// `point_start[k]..point_start[k + 1]` indexes the points of voxel `k`.
    pub point_start: Vec<usize>,
    /// Row-major `n_points x 13`.
    pub features: Vec<f64>,
}

impl VoxelInput {
    pub fn num_voxels(&self) -> usize {
        self.coords.len()
    }

    pub fn num_points(&self) -> usize {
        self.features.len() / POINT_FEATURES
    }

    /// Builds the packed input from capped voxels.
    pub fn from_voxels(voxels: &[Voxel], cfg: &GridConfig, mask: &FeatureMask) -> Self {
        let scale = feature_scales(cfg);
        let mut coords = Vec::with_capacity(voxels.len());
        let mut point_start = Vec::with_capacity(voxels.len() + 1);
        let mut features = Vec::new();
        point_start.push(0);
        for v in voxels {
            coords.push(v.coord);
            let shift = match cfg.offset_mode {
                OffsetMode::Center => [0.0; 3],
                OffsetMode::Centroid => {
                    let n = v.points.len() as f64;
                    let mut m = [0.0; 3];
                    for p in &v.points {
                        for k in 0..3 {
                            m[k] += p.offset[k] / n;
                        }
                    }
                    m
                }
            };
            for p in &v.points {
                let f = p.point.features();
                let mut row = [0.0; POINT_FEATURES];
                row[..10].copy_from_slice(&f);
                for k in 0..3 {
                    row[10 + k] = p.offset[k] - shift[k];
                }
                for k in 0..POINT_FEATURES {
                    features.push(if mask.0[k] { row[k] * scale[k] } else { 0.0 });
                }
            }
            point_start.push(point_start.last().unwrap() + v.points.len());
        }
        VoxelInput { coords, point_start, features }
    }

    /// Padded `[K, max_points, 13]` view with a `[K, max_points]` validity mask.
    pub fn padded(&self, max_points: usize) -> (Vec<f64>, Vec<bool>) {
        let k = self.num_voxels();
        let mut data = vec![0.0; k * max_points * POINT_FEATURES];
        let mut mask = vec![false; k * max_points];
        for v in 0..k {
            let (s, e) = (self.point_start[v], self.point_start[v + 1]);
            for (slot, p) in (s..e).take(max_points).enumerate() {
                let dst = (v * max_points + slot) * POINT_FEATURES;
                data[dst..dst + POINT_FEATURES]
                    .copy_from_slice(&self.features[p * POINT_FEATURES..(p + 1) * POINT_FEATURES]);
                mask[v * max_points + slot] = true;
            }
        }
        (data, mask)
    }

    /// Inverse of [`VoxelInput::padded`]; voxels without any real point are rejected.
    pub fn from_padded(coords: Vec<[usize; 3]>, data: &[f64], mask: &[bool], max_points: usize) -> Result<Self> {
        let k = coords.len();
        if data.len() != k * max_points * POINT_FEATURES || mask.len() != k * max_points {
            return Err(Error::Shape("padded voxel buffer does not match [K, max_points, 13]".into()));
        }
        let mut point_start = vec![0];
        let mut features = Vec::new();
        for v in 0..k {
            let mut n = 0;
            for slot in 0..max_points {
                if mask[v * max_points + slot] {
                    let o = (v * max_points + slot) * POINT_FEATURES;
                    features.extend_from_slice(&data[o..o + POINT_FEATURES]);
                    n += 1;
                }
            }
            if n == 0 {
                return Err(Error::InvalidArgument(format!("voxel {:?} has no points", coords[v])));
            }
            point_start.push(point_start.last().unwrap() + n);
        }
        Ok(VoxelInput { coords, point_start, features })
    }
}
