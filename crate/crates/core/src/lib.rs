pub mod error;
pub mod evalmetrics;
pub mod fusionio;
pub mod geom;
pub mod losses;
pub mod net;
pub mod scenegen;
pub mod storage;
pub mod targets;
pub mod trainer;
pub mod tracker;
pub mod voxel;

pub use error::{Error, Result};
