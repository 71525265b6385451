//! The run configuration file: one TOML document with a block per subsystem.

use std::path::{Path, PathBuf};

use jointdrive::controller::ControllerConfig;
use jointdrive::data::GenConfig;
use jointdrive::eval::EvalConfig;
use jointdrive::model::ModelConfig;
use jointdrive::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: PathBuf,
    pub heldout: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data: "data/train.jsonl.gz".into(),
            heldout: "data/heldout.jsonl.gz".into(),
            out_dir: "runs/default".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, replaces `data.seed` and `train.seed`.
    pub seed: Option<u64>,
    pub paths: Paths,
    pub data: GenConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub controller: ControllerConfig,
    pub eval: EvalConfig,
}

/// Sets `a.b.c = value` in a TOML tree; the value is parsed as TOML and
/// falls back to a plain string.
fn apply_override(root: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {spec:?} is not of the form key=value")))?;
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override {key:?}: {part:?} is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Reads `path` (or starts from defaults) and applies `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
        let mut root = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        if let Some(seed) = cfg.seed {
            cfg.data.seed = seed;
            cfg.train.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate()?;
        self.train.validate()?;
        self.controller.validate()?;
        if self.data.horizon != self.model.horizon {
            return Err(CliError::Config(format!(
                "data.horizon {} differs from model.horizon {}",
                self.data.horizon, self.model.horizon
            )));
        }
        if self.data.dt_wp != self.train.dt_wp || self.controller.dt_wp != self.train.dt_wp {
            return Err(CliError::Config(
                "data.dt_wp, train.dt_wp and controller.dt_wp must agree".into(),
            ));
        }
        Ok(())
    }

    /// Hash of the fully resolved configuration, embedded in reports.
    pub fn hash(&self) -> Result<String, CliError> {
        Ok(jointdrive::eval::config_hash(self)?)
    }
}
