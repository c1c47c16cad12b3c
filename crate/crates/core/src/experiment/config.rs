use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SpireError};
use crate::eval::EvalOptions;
use crate::synthgen::Preset;
use crate::trainer::{ModelConfig, ScheduleTable, TrainConfig};

/// Where a run's trials come from: an existing container, or a preset
/// generated in memory with `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

impl DataSpec {
    pub fn preset(&self) -> Result<Option<Preset>> {
        self.preset.as_deref().map(str::parse).transpose()
    }

    /// Short regime name used in directory names and reports.
    pub fn label(&self) -> String {
        match (&self.preset, &self.path) {
            (Some(p), _) => p.clone(),
            (None, Some(path)) => path.file_name().map_or("data".into(), |n| n.to_string_lossy().into_owned()),
            (None, None) => "data".into(),
        }
    }
}

/// A schedule given by preset name or spelled out in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleSpec {
    Named(String),
    Table(ScheduleTable),
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec::Named("synthetic".into())
    }
}

impl ScheduleSpec {
    pub fn resolve(&self) -> Result<ScheduleTable> {
        match self {
            ScheduleSpec::Named(n) => ScheduleTable::by_name(n),
            ScheduleSpec::Table(t) => Ok(t.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Epochs between `checkpoint_last` snapshots; 0 writes only at the end.
    pub checkpoint_every: usize,
    pub data: DataSpec,
    pub model: ModelConfig,
    pub schedule: ScheduleSpec,
    pub train: TrainConfig,
    pub eval: EvalOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "spire".into(),
            seeds: vec![0],
            out_dir: None,
            checkpoint_every: 10,
            data: DataSpec {
                preset: Some("D1".into()),
                ..DataSpec::default()
            },
            model: ModelConfig::default(),
            schedule: ScheduleSpec::default(),
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| SpireError::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| SpireError::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Relative dataset paths are taken relative to the config file.
        if let Some(p) = cfg.data.path.as_mut() {
            if p.is_relative() {
                let joined = path.parent().unwrap_or(Path::new("")).join(&*p);
                *p = std::path::absolute(&joined).map_err(|e| SpireError::io(&joined, e))?;
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(SpireError::config("name", "must be a non-empty plain name"));
        }
        if self.seeds.is_empty() {
            return Err(SpireError::config("seeds", "need at least one seed"));
        }
        match (&self.data.path, &self.data.preset) {
            (None, None) => return Err(SpireError::config("data", "set either `path` or `preset`")),
            (Some(_), Some(_)) => return Err(SpireError::config("data", "`path` and `preset` are mutually exclusive")),
            _ => {}
        }
        self.data.preset()?;
        self.train.validate()?;
        self.schedule.resolve()?.validate(self.train.max_epochs)?;
        self.model.dims_for(&[1, 1]).validate()?;
        Ok(())
    }

    /// Fully expanded copy for one seed: the schedule table is written out
    /// and the seed list collapses to `seed`.
    pub fn resolved_for_seed(&self, seed: u64) -> Result<Self> {
        let mut r = self.clone();
        r.schedule = ScheduleSpec::Table(self.schedule.resolve()?);
        r.seeds = vec![seed];
        r.train.seed = seed;
        r.out_dir = None;
        Ok(r)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| SpireError::config("config", e.to_string()))
    }

    /// SHA-256 of the canonical JSON form of everything that affects
    /// outputs: seeds and output location are excluded.
    pub fn content_hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.schedule = ScheduleSpec::Table(self.schedule.resolve()?);
        c.seeds.clear();
        c.train.seed = 0;
        c.out_dir = None;
        let json = serde_json::to_vec(&c).map_err(|e| SpireError::config("config", e.to_string()))?;
        Ok(hex::encode(Sha256::digest(&json)))
    }
}

/// Output root: explicit flag, then `SPIRE_OUT`, then the config's
/// `out_dir`, then `spire_out`.
pub fn resolve_out_root(flag: Option<&Path>, config: Option<&ExperimentConfig>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    config
        .and_then(|c| c.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("spire_out"))
}

pub const OUT_ENV: &str = "SPIRE_OUT";
