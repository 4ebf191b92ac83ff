//! Reverse-mode autodiff core and the detection network built on it.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod model;

pub use graph::{Graph, ParamStore, Tensor, Var};
pub use model::{Detector, HeadVars, NetConfig, NetworkOutput, TrunkLayer, ANCHORS_PER_CELL, REG_DIMS};
