use std::path::{Path, PathBuf};

use koopflow::data::DEFAULT_RESAMPLE;
use koopflow::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// JSON schema of [`RunConfig`], shipped with the binary.
pub const RUN_CONFIG_SCHEMA: &str = include_str!("../../../docs/run_config.schema.json");

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Train on every demonstration.
    #[default]
    Imitation,
    /// Train on the first four of seven demonstrations, report on the rest.
    Validation,
}

/// Contents of a `train --config` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset CSV, relative to the config file.
    pub dataset: PathBuf,
    /// Output directory, relative to the config file.
    pub output_dir: PathBuf,
    #[serde(default)]
    pub mode: Mode,
    /// Samples per demonstration after resampling; `null` keeps the raw data.
    #[serde(default = "default_resample")]
    pub resample: Option<usize>,
    /// Point moved to the origin; defaults to the mean demo endpoint.
    #[serde(default)]
    pub equilibrium: Option<Vec<f64>>,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_resample() -> Option<usize> {
    Some(DEFAULT_RESAMPLE)
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads, validates and resolves relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config = Self::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.dataset = base.join(&config.dataset);
        config.output_dir = base.join(&config.output_dir);
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate()?;
        if self.resample.is_some_and(|n| n < 3) {
            return Err(CliError::Config("resample must be at least 3".into()));
        }
        if let Some(eq) = &self.equilibrium {
            if eq.is_empty() || eq.iter().any(|v| !v.is_finite()) {
                return Err(CliError::Config("equilibrium must be a non-empty list of finite numbers".into()));
            }
        }
        Ok(())
    }
}
