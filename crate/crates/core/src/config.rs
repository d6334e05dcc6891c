//! Experiment configuration: strict JSON, presets, canonical hashing.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{DomainId, TaskId};
use crate::losses::LossConfig;
use crate::model::{ArchConfig, SegmentSplit};
use crate::training::OptimizerConfig;

/// Environment variable consulted when `data_root` is absent.
pub const DATA_ROOT_ENV: &str = "ZDA_DATA_ROOT";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Validation(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskPair {
    pub main: TaskId,
    pub aux: TaskId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainPair {
    pub source: DomainId,
    pub target: DomainId,
}

/// Sample counts drawn from each split; 0 keeps the whole split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubsetSizes {
    pub main_train: usize,
    pub aux_train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Cluster count for the alignment report; defaults to the main class count.
    pub k: Option<usize>,
    pub samples_per_domain: usize,
    pub tsne_samples: usize,
    pub perplexity: f64,
    pub tsne_iterations: usize,
    pub actmax_steps: usize,
    pub actmax_step_size: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            k: None,
            samples_per_domain: 500,
            tsne_samples: 500,
            perplexity: 30.0,
            tsne_iterations: 1000,
            actmax_steps: 200,
            actmax_step_size: 0.05,
        }
    }
}

fn default_width() -> f64 {
    1.0
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub tasks: TaskPair,
    pub domains: DomainPair,
    #[serde(default)]
    pub split: SegmentSplit,
    #[serde(default = "default_width")]
    pub width_multiplier: f64,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub subset: SubsetSizes,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_root: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_corpus: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Also checkpoint every this many epochs; 0 = only at the end.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Reduced width and sample counts for single-machine runs.
    Desk,
    /// Full width, full datasets, 80 epochs.
    Full,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            _ => Err(format!("unknown preset {s:?}; expected desk or full")),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Full => "full",
        })
    }
}

impl Preset {
    /// Values the preset supplies; explicit config keys override them.
    pub fn values(self) -> Value {
        match self {
            Preset::Desk => serde_json::json!({
                "width_multiplier": 0.125,
                "subset": {"main_train": 2000, "aux_train": 2000, "test": 1000},
                "optimizer": {"epochs": 10, "batch_size": 32, "learning_rate": 0.0006},
                "seed": 7
            }),
            Preset::Full => serde_json::json!({
                "width_multiplier": 1.0,
                "subset": {"main_train": 0, "aux_train": 0, "test": 0},
                "optimizer": {"epochs": 80, "batch_size": 32, "learning_rate": 0.0006}
            }),
        }
    }
}

/// Recursively overlays `top` onto `base`; objects merge, anything else replaces.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
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

impl ExperimentConfig {
    /// Parses JSON text, optionally layered over a preset.
    pub fn from_json(text: &str, preset: Option<Preset>) -> Result<Self, ConfigError> {
        let file: Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            path: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        let mut value = preset
            .map(Preset::values)
            .unwrap_or_else(|| Value::Object(Default::default()));
        merge(&mut value, file);
        let cfg: ExperimentConfig =
            serde_path_to_error::deserialize(value).map_err(|e| ConfigError::Parse {
                path: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Validation(m));
        if let Err(e) = TaskId::validate_pair(self.tasks.main, self.tasks.aux) {
            return invalid(e.to_string());
        }
        if self.domains.source == self.domains.target {
            return invalid(format!(
                "source and target domain are both {}",
                self.domains.source
            ));
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier <= 1.0) {
            return invalid(format!(
                "width_multiplier must lie in (0, 1], got {}",
                self.width_multiplier
            ));
        }
        if let Err(e) = crate::model::build_backbone_blocks(self.width_multiplier) {
            return invalid(e.to_string());
        }
        if let Err(e) = self.loss.validate() {
            return invalid(e.to_string());
        }
        if let Err(e) = self.optimizer.validate() {
            return invalid(e);
        }
        if self.analysis.k == Some(0) {
            return invalid("analysis.k must be at least 1".into());
        }
        Ok(())
    }

    pub fn arch(&self) -> ArchConfig {
        ArchConfig {
            split: self.split,
            width_multiplier: self.width_multiplier,
            ..ArchConfig::default()
        }
    }

    /// Optimizer settings with the experiment seed filled in.
    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            seed: self.seed,
            ..self.optimizer.clone()
        }
    }

    /// `data_root`, else `$ZDA_DATA_ROOT`.
    pub fn resolve_data_root(&self) -> Result<PathBuf, ConfigError> {
        if let Some(p) = &self.data_root {
            return Ok(p.clone());
        }
        match std::env::var_os(DATA_ROOT_ENV) {
            Some(v) if !v.is_empty() => Ok(PathBuf::from(v)),
            _ => Err(ConfigError::Validation(format!(
                "no data_root in the config and {DATA_ROOT_ENV} is not set"
            ))),
        }
    }

    /// Hex SHA-256 of the canonical JSON with sorted keys. Location-only
    /// fields (output, data and cache directories) are left out so moving a
    /// run does not change its identity.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            for k in ["output_dir", "data_root", "cache_dir"] {
                m.remove(k);
            }
        }
        let canonical = canonical_json(&v);
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// Compact JSON with object keys in byte order at every level.
pub fn canonical_json(v: &Value) -> String {
    match v {
        Value::Object(m) => {
            let sorted: BTreeMap<&String, &Value> = m.iter().collect();
            let body: Vec<String> = sorted
                .into_iter()
                .map(|(k, v)| format!("{}:{}", Value::String(k.clone()), canonical_json(v)))
                .collect();
            format!("{{{}}}", body.join(","))
        }
        Value::Array(a) => format!(
            "[{}]",
            a.iter().map(canonical_json).collect::<Vec<_>>().join(",")
        ),
        other => other.to_string(),
    }
}

pub fn parse_config(path: &Path, preset: Option<Preset>) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })?;
    ExperimentConfig::from_json(&text, preset)
}

/// Reproducibility record written next to every run's artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub code_version: String,
    pub command: String,
    pub started: String,
    pub finished: Option<String>,
    pub artifacts: BTreeMap<String, PathBuf>,
    /// Headline numbers, e.g. `target_accuracy`.
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig, command: &str, started: String) -> Self {
        Self {
            config_hash: config.hash(),
            config: config.clone(),
            code_version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"))
                .to_owned(),
            command: command.to_owned(),
            started,
            finished: None,
            artifacts: BTreeMap::new(),
            metrics: BTreeMap::new(),
        }
    }
}
