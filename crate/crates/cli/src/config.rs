use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use tidedown::model::ModelConfig;
use tidedown::synth::{FieldPair, SynthSpec};
use tidedown::train::TrainConfig;

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Default train/val/test fractions.
pub const DEFAULT_SPLIT: [f64; 3] = [0.75, 0.125, 0.125];

fn default_name() -> String {
    "model".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Directory holding `<split>_lr.tcds` and `<split>_hr.tcds`.
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Stem of the checkpoint and log files.
    #[serde(default = "default_name")]
    pub name: String,
}

/// Everything one training run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Generates the dataset into `paths.data_dir` when its files are missing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    pub paths: Paths,
}

fn default_split() -> [f64; 3] {
    DEFAULT_SPLIT
}

impl RunConfig {
    /// Parses without validating, so that command-line overrides can be
    /// applied first.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| tidedown::Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if let Some(s) = &self.synth {
            s.validate()?;
        }
        if self.paths.name.is_empty() || self.paths.name.contains(['/', '\\']) {
            return Err(tidedown::Error::InvalidConfig(format!("paths.name `{}` is not a plain file stem", self.paths.name)).into());
        }
        Ok(())
    }

    pub fn out_file(&self, ext: &str) -> PathBuf {
        self.paths.out_dir.join(format!("{}.{ext}", self.paths.name))
    }
}

pub fn split_file(dir: &Path, split: &str, res: &str) -> PathBuf {
    dir.join(format!("{split}_{res}.tcds"))
}

pub fn load_tcds(path: &Path) -> Result<tidedown::field::TidalField> {
    tidedown::field::TidalField::load(path).with_context(|| format!("reading {}", path.display()))
}

pub fn load_pair(dir: &Path, split: &str) -> Result<FieldPair> {
    Ok(FieldPair {
        lr: load_tcds(&split_file(dir, split, "lr"))?,
        hr: load_tcds(&split_file(dir, split, "hr"))?,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
