//! TOML run configuration: `[model]`, `[train]` and `[data]` tables.
//!
//! Every key is optional. Defaults: the desk model plan (32x32 input, depths
//! `[1, 1, 2, 1]`, dims `[16, 32, 64, 128]`, all four branches, 4 classes) and
//! 10 epochs of batch 32 at lr 5e-5 with seed 0. Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use mixssm_core::network::ModelConfig;
use mixssm_core::train::TrainConfig;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataPaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    /// Keys given here override the desk preset.
    #[serde(deserialize_with = "over_desk")]
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataPaths,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        RunConfigFile {
            model: ModelConfig::desk(),
            train: TrainConfig::default(),
            data: DataPaths::default(),
        }
    }
}

fn overlay(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => overlay(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

fn over_desk<'de, D: Deserializer<'de>>(d: D) -> Result<ModelConfig, D::Error> {
    let given = toml::Table::deserialize(d)?;
    let mut base = toml::Table::try_from(ModelConfig::desk()).map_err(D::Error::custom)?;
    overlay(&mut base, given);
    base.try_into().map_err(D::Error::custom)
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn emit(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg = Self::parse(&text).map_err(|reason| CliError::Config {
            path: path.to_path_buf(),
            reason,
        })?;
        cfg.model.validate().map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(cfg)
    }

    /// `path` if given, else the defaults.
    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}
