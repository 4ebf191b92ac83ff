//! The detector graph: voxel feature encoding, submanifold sparse 3D
//! convolutions, BEV densification, a 2D trunk and three 1x1 heads.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voxel::{GridConfig, VoxelInput, POINT_FEATURES};

use super::graph::{Graph, ParamStore, Tensor, Var};
use super::kernels::Rulebook;

/// Anchors per BEV cell (yaw 0 and yaw pi/2).
pub const ANCHORS_PER_CELL: usize = 2;
/// Regression values per anchor.
pub const REG_DIMS: usize = 7;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrunkLayer {
    pub kernel: usize,
    pub channels: usize,
    pub dilation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// Output width of each VFE block (half comes from the pointwise layer,
    /// half from the pooled feature).
    pub vfe_widths: Vec<usize>,
    pub voxel_channels: usize,
    pub sparse_channels: Vec<usize>,
    pub trunk: Vec<TrunkLayer>,
    /// Initial foreground probability encoded in the classification bias.
    pub cls_prior: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            vfe_widths: vec![16, 32],
            voxel_channels: 32,
            sparse_channels: vec![32, 32],
            trunk: vec![
                TrunkLayer { kernel: 3, channels: 64, dilation: 1 },
                TrunkLayer { kernel: 3, channels: 64, dilation: 2 },
                TrunkLayer { kernel: 3, channels: 64, dilation: 4 },
            ],
            cls_prior: 0.01,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vfe_widths.iter().any(|w| *w == 0 || w % 2 != 0) {
            return Err(Error::Config("vfe widths must be positive and even".into()));
        }
        if self.voxel_channels == 0 || self.sparse_channels.contains(&0) {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        for t in &self.trunk {
            if t.kernel % 2 == 0 || t.channels == 0 || t.dilation == 0 {
                return Err(Error::Config(format!("invalid trunk layer {t:?}")));
            }
        }
        if !(self.cls_prior > 0.0 && self.cls_prior < 1.0) {
            return Err(Error::Config("cls_prior must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Raw head outputs, all pre-sigmoid where applicable.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOutput {
    pub ny: usize,
    pub nx: usize,
    /// `[ny, nx, 2]`
    pub cls: Vec<f64>,
    /// `[ny, nx, 2, 7]`
    pub reg: Vec<f64>,
    /// `[ny, nx, 2]`
    pub dir: Vec<f64>,
}

impl NetworkOutput {
    pub fn num_anchors(&self) -> usize {
        self.ny * self.nx * ANCHORS_PER_CELL
    }

    pub fn reg_of(&self, anchor: usize) -> &[f64] {
        &self.reg[anchor * REG_DIMS..(anchor + 1) * REG_DIMS]
    }
}

/// Graph handles of the three heads.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub cls: Var,
    pub reg: Var,
    pub dir: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub net: NetConfig,
    /// `(nx, ny, nz)` of the voxel grid.
    pub dims: [usize; 3],
}

fn he_tensor(shape: Vec<usize>, fan_in: usize, gain: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let std = gain * (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(rng)).collect();
    Tensor { shape, data, grad: None }
}

impl Detector {
    pub fn new(net: NetConfig, grid: &GridConfig) -> Result<Self> {
        net.validate()?;
        grid.validate()?;
        Ok(Detector { net, dims: grid.dims() })
    }

    pub fn bev_channels(&self) -> usize {
        self.dims[2] * self.net.sparse_channels.last().copied().unwrap_or(self.net.voxel_channels)
    }

    /// Seeded fan-in scaled initialization.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let put = |store: &mut ParamStore, name: &str, t: Tensor| {
            store.insert(name, t).expect("parameter names are unique by construction");
        };
        let mut cin = POINT_FEATURES;
        for (i, &w) in self.net.vfe_widths.iter().enumerate() {
            let half = w / 2;
            put(&mut store, &format!("vfe.{i}.w"), he_tensor(vec![cin, half], cin, 1.0, &mut rng));
            put(&mut store, &format!("vfe.{i}.b"), Tensor::zeros(vec![half]));
            cin = w;
        }
        let c = self.net.voxel_channels;
        put(&mut store, "vfe.out.w", he_tensor(vec![cin, c], cin, 1.0, &mut rng));
        put(&mut store, "vfe.out.b", Tensor::zeros(vec![c]));
        let mut cin = c;
        for (i, &w) in self.net.sparse_channels.iter().enumerate() {
            put(&mut store, &format!("sparse.{i}.w"), he_tensor(vec![27, cin, w], 27 * cin, 1.0, &mut rng));
            put(&mut store, &format!("sparse.{i}.b"), Tensor::zeros(vec![w]));
            cin = w;
        }
        let mut cin = self.bev_channels();
        for (i, t) in self.net.trunk.iter().enumerate() {
            let fan = t.kernel * t.kernel * cin;
            put(
                &mut store,
                &format!("trunk.{i}.w"),
                he_tensor(vec![t.kernel, t.kernel, cin, t.channels], fan, 1.0, &mut rng),
            );
            put(&mut store, &format!("trunk.{i}.b"), Tensor::zeros(vec![t.channels]));
            cin = t.channels;
        }
        let prior_bias = -((1.0 - self.net.cls_prior) / self.net.cls_prior).ln();
        for (name, cout, bias) in [
            ("cls", ANCHORS_PER_CELL, prior_bias),
            ("reg", ANCHORS_PER_CELL * REG_DIMS, 0.0),
            ("dir", ANCHORS_PER_CELL, 0.0),
        ] {
            put(&mut store, &format!("head.{name}.w"), he_tensor(vec![1, 1, cin, cout], cin, 0.1, &mut rng));
            put(&mut store, &format!("head.{name}.b"), Tensor { shape: vec![cout], data: vec![bias; cout], grad: None });
        }
        store
    }

    fn p(&self, g: &mut Graph, store: &ParamStore, name: &str) -> Result<Var> {
        g.param_named(store, name)
    }

    /// Voxel feature encoding: `[N, 13]` packed points to `[K, C]`.
    pub fn vfe(&self, g: &mut Graph, store: &ParamStore, input: &VoxelInput) -> Result<Var> {
        let n = input.num_points();
        let mut segment_of = Vec::with_capacity(n);
        for k in 0..input.num_voxels() {
            let (s, e) = (input.point_start[k], input.point_start[k + 1]);
            if e <= s {
                return Err(Error::InvalidArgument(format!("voxel {:?} has no points", input.coords[k])));
            }
            segment_of.extend(std::iter::repeat_n(k as u32, e - s));
        }
        let segment_of = Rc::new(segment_of);
        let mut x = g.constant(vec![n, POINT_FEATURES], input.features.clone())?;
        for i in 0..self.net.vfe_widths.len() {
            let w = self.p(g, store, &format!("vfe.{i}.w"))?;
            let b = self.p(g, store, &format!("vfe.{i}.b"))?;
            let lin = g.linear(x, w, b)?;
            let h = g.relu(lin);
            let pooled = g.segment_max(h, &input.point_start)?;
            x = g.concat_pooled(h, pooled, segment_of.clone())?;
        }
        let w = self.p(g, store, "vfe.out.w")?;
        let b = self.p(g, store, "vfe.out.b")?;
        let lin = g.linear(x, w, b)?;
        let h = g.relu(lin);
        g.segment_max(h, &input.point_start)
    }

    /// Full forward pass; returns the head variables.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, input: &VoxelInput) -> Result<HeadVars> {
        for c in &input.coords {
            if c[0] >= self.dims[0] || c[1] >= self.dims[1] || c[2] >= self.dims[2] {
                return Err(Error::Config(format!("voxel {c:?} outside network grid {:?}", self.dims)));
            }
        }
        let mut v = self.vfe(g, store, input)?;
        let rules = Rc::new(Rulebook::build(&input.coords));
        for i in 0..self.net.sparse_channels.len() {
            let w = self.p(g, store, &format!("sparse.{i}.w"))?;
            let b = self.p(g, store, &format!("sparse.{i}.b"))?;
            let c = g.subm_conv3d(v, w, b, rules.clone())?;
            v = g.relu(c);
        }
        let mut x = g.scatter_bev(v, &input.coords, self.dims)?;
        for (i, t) in self.net.trunk.iter().enumerate() {
            let w = self.p(g, store, &format!("trunk.{i}.w"))?;
            let b = self.p(g, store, &format!("trunk.{i}.b"))?;
            let c = g.conv2d(x, w, b, 1, t.dilation * (t.kernel - 1) / 2, t.dilation)?;
            x = g.relu(c);
        }
        let mut head = |name: &str| -> Result<Var> {
            let w = self.p(g, store, &format!("head.{name}.w"))?;
            let b = self.p(g, store, &format!("head.{name}.b"))?;
            g.conv2d(x, w, b, 1, 0, 1)
        };
        Ok(HeadVars { cls: head("cls")?, reg: head("reg")?, dir: head("dir")? })
    }

    pub fn output_of(&self, g: &Graph, heads: &HeadVars) -> NetworkOutput {
        NetworkOutput {
            ny: self.dims[1],
            nx: self.dims[0],
            cls: g.value(heads.cls).to_vec(),
            reg: g.value(heads.reg).to_vec(),
            dir: g.value(heads.dir).to_vec(),
        }
    }

    /// Forward pass without keeping the graph.
    pub fn predict(&self, store: &ParamStore, input: &VoxelInput) -> Result<NetworkOutput> {
        let mut g = Graph::new();
        let heads = self.forward(&mut g, store, input)?;
        Ok(self.output_of(&g, &heads))
    }
}
