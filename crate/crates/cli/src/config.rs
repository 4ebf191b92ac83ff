//! Run configuration: defaults, a TOML file, then `key=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::Value;
use voxfuse::storage::{config_hash, hex, DatasetConfig};
use voxfuse::tracker::{radar_r, UkfConfig, LIDAR_R, MEAS_DIM};
use voxfuse::trainer::TrainConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackConfig {
    pub ukf: UkfConfig,
    pub lidar_r: [f64; MEAS_DIM],
    pub radar_r: [f64; MEAS_DIM],
    /// Frames at the start of each scene skipped when scoring tracked
    /// output, since no track can be confirmed before `birth_hits` frames.
    pub warmup_frames: usize,
}

impl Default for TrackConfig {
    fn default() -> Self {
        let ukf = UkfConfig::default();
        let warmup_frames = ukf.birth_hits.saturating_sub(1) as usize;
        TrackConfig { ukf, lidar_r: LIDAR_R, radar_r: radar_r(), warmup_frames }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    /// Variant specs: a modality list optionally followed by `:flag` ablations.
    pub variants: Vec<String>,
    /// Training seeds shared by all variants; scores are averaged over them.
    pub seeds: Vec<u64>,
    /// Add a tracked late-fusion row built from the lidar and radar variants.
    pub late_fusion: bool,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            variants: ["lidar", "radar", "lidar+radar", "lidar+rgb+radar"].map(String::from).to_vec(),
            seeds: vec![0],
            late_fusion: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub track: TrackConfig,
    pub compare: CompareConfig,
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        self.track.ukf.validate()?;
        if self.compare.variants.is_empty() || self.compare.seeds.is_empty() {
            return Err(CliError::Config("compare needs at least one variant and one seed".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> CliResult<String> {
        Ok(hex(&config_hash(self)?))
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

pub fn set_path(root: &mut Value, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key {key:?}")));
    }
    let mut node = root;
    for p in &parts[..parts.len() - 1] {
        let Value::Table(t) = node else {
            return Err(CliError::Config(format!("override {key:?} descends into a non-table")));
        };
        node = t.entry(p.to_string()).or_insert_with(|| Value::Table(toml::Table::new()));
    }
    let Value::Table(t) = node else {
        return Err(CliError::Config(format!("override {key:?} descends into a non-table")));
    };
    t.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Defaults, then the file, then overrides. Unknown keys anywhere are errors.
pub fn load(file: Option<&Path>, overrides: &[String]) -> CliResult<RunConfig> {
    let mut tree = Value::try_from(RunConfig::default()).map_err(|e| CliError::Config(format!("default config: {e}")))?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let parsed: toml::Table = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        merge(&mut tree, Value::Table(parsed));
    }
    for o in overrides {
        set_path(&mut tree, o)?;
    }
    let cfg: RunConfig = tree.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn from_toml(text: &str) -> CliResult<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back = from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let cfg = load(None, &["train.optimizer.lr=0.01".into(), "train.yaw_mode=direct".into()]).unwrap();
        assert_eq!(cfg.train.optimizer.lr, 0.01);
        assert_eq!(cfg.train.yaw_mode, voxfuse::targets::YawMode::Direct);
        assert!(load(None, &["train.no_such_key=1".into()]).is_err());
        assert!(load(None, &["train.epochs=0".into()]).is_err());
        assert!(load(None, &["nonsense".into()]).is_err());
        assert_ne!(cfg.hash().unwrap(), RunConfig::default().hash().unwrap());
    }
}
