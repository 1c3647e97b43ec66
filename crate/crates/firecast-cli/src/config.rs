//! Config documents, their validation, and the resolved-config echo.
//!
//! Every command reads its experiment definition from a JSON document and
//! writes a `resolved_config.json` next to its outputs. The echo embeds
//! the effective config (after flag overrides) plus tool and format
//! versions, and is itself accepted by `--config`, so a recorded run can
//! be repeated from its own output directory.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use firecast::models::{ModelConfig, CHECKPOINT_FORMAT_VERSION};
use firecast::training::{GridSpec, TrainConfig};

use crate::CliError;

/// Version of the config documents this binary reads and writes.
pub const CONFIG_FORMAT_VERSION: u32 = 1;

/// Suffix clap appends to the binary name for `--version`. Leaked once at
/// startup because clap wants a `'static` string.
pub fn version_string() -> &'static str {
    Box::leak(
        format!(
            "{} (config format {CONFIG_FORMAT_VERSION}, checkpoint format {CHECKPOINT_FORMAT_VERSION})",
            env!("CARGO_PKG_VERSION")
        )
        .into_boxed_str(),
    )
}

/// The document echoed as `resolved_config.json` after every run.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resolved<T> {
    pub tool_version: String,
    pub config_format: u32,
    pub checkpoint_format: u32,
    pub command: String,
    pub config: T,
}

pub fn write_resolved<T: Serialize>(
    out_dir: &Path,
    command: &str,
    config: &T,
) -> Result<(), CliError> {
    let doc = Resolved {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_format: CONFIG_FORMAT_VERSION,
        checkpoint_format: CHECKPOINT_FORMAT_VERSION,
        command: command.to_string(),
        config,
    };
    let path = out_dir.join("resolved_config.json");
    let mut bytes = serde_json::to_vec_pretty(&doc).expect("config serializes");
    bytes.push(b'\n');
    fs::write(&path, bytes)
        .map_err(|e| CliError::runtime(format!("failed to write {}: {e}", path.display())))
}

/// Deserializes with the path to the offending key in the error message.
pub fn from_value_named<T: DeserializeOwned>(
    value: serde_json::Value,
    path: &Path,
) -> Result<T, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let field = e.path().to_string();
        let field = if field.is_empty() || field == "." { "config".to_string() } else { field };
        CliError::Validation(format!("{field}: {} (in {})", e.inner(), path.display()))
    })
}

pub fn read_json_value(path: &Path, flag: &str) -> Result<serde_json::Value, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("{flag}: cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Validation(format!("{flag}: {} is not valid JSON: {e}", path.display()))
    })
}

/// Reads a config document, accepting either the bare document or a
/// resolved-config echo recorded by an earlier run of the same command.
pub fn load_config<T: DeserializeOwned>(path: &Path, command: &str) -> Result<T, CliError> {
    let value = read_json_value(path, "--config")?;
    if value.get("command").is_some() {
        let resolved: Resolved<T> = from_value_named(value, path)?;
        if resolved.command != command {
            return Err(CliError::Validation(format!(
                "command: {} was recorded by `{}`, not `{command}`",
                path.display(),
                resolved.command
            )));
        }
        if resolved.config_format != CONFIG_FORMAT_VERSION {
            return Err(CliError::Validation(format!(
                "config_format: version {} is not supported (this tool reads version {})",
                resolved.config_format, CONFIG_FORMAT_VERSION
            )));
        }
        Ok(resolved.config)
    } else {
        from_value_named(value, path)
    }
}

/// Model and training settings for `train` and `benchmark`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate().map_err(|e| CliError::Validation(format!("model: {e}")))?;
        self.train.validate().map_err(|e| CliError::Validation(format!("train: {e}")))?;
        Ok(())
    }
}

/// `gridsearch`: the sweep axes on top of the shared experiment settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSearchSpec {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "GridSpec::standard")]
    pub grid: GridSpec,
}

impl GridSearchSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate().map_err(|e| CliError::Validation(format!("model: {e}")))?;
        self.train.validate().map_err(|e| CliError::Validation(format!("train: {e}")))?;
        self.grid.validate().map_err(|e| CliError::Validation(format!("grid: {e}")))?;
        Ok(())
    }
}

/// `crossyear`: per-year split sizes plus the shared experiment settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossYearSpec {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Samples reserved per year as its test block and shared-validation
    /// contribution.
    pub val_quota: usize,
    /// Cap on training samples per year.
    pub train_cap: usize,
    #[serde(default)]
    pub protocol_seed: u64,
}

impl CrossYearSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate().map_err(|e| CliError::Validation(format!("model: {e}")))?;
        self.train.validate().map_err(|e| CliError::Validation(format!("train: {e}")))?;
        if self.val_quota == 0 {
            return Err(CliError::Validation("val_quota: must be at least 1".into()));
        }
        if self.train_cap == 0 {
            return Err(CliError::Validation("train_cap: must be at least 1".into()));
        }
        Ok(())
    }
}

/// `analyze`: dataset diagnostics settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeSpec {
    pub seed: u64,
    /// Days covered by the growth curves, counted from each event's first
    /// burning day.
    pub growth_horizon: usize,
}

impl Default for AnalyzeSpec {
    fn default() -> Self {
        Self { seed: 0, growth_horizon: 8 }
    }
}

impl AnalyzeSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.growth_horizon < 2 {
            return Err(CliError::Validation(format!(
                "growth_horizon: must be at least 2, got {}",
                self.growth_horizon
            )));
        }
        Ok(())
    }
}

/// `folds`: which protocol to expand and over what.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldsSpec {
    pub protocol: firecast::folds::Protocol,
    #[serde(default)]
    pub years: Vec<i32>,
    /// Fold count for the random-event protocol.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

/// Echo document for `diff`, which takes no config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffSpec {
    pub a: String,
    pub b: String,
}

/// Echo document for `export-embeddings`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedSpec {
    pub checkpoint: String,
    pub data: String,
}
