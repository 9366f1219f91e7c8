//! Run-configuration file: one TOML file per run, sections per stage.
//! Command-line flags override file values.

use anyhow::{Context, Result};
use reblur_core::data::DatasetConfig;
use reblur_core::training::TrainConfig;
use reblur_core::tta::TTAConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunFile {
    pub dataset: Option<DatasetConfig>,
    pub train: Option<TrainConfig>,
    pub tta: Option<TTAConfig>,
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSection {
    /// Deblur ResBlock counts for the capacity study.
    #[serde(default = "default_capacity_counts")]
    pub capacity_counts: Vec<usize>,
    /// Reblur ResBlock counts for the module-size study.
    #[serde(default = "default_reblur_sizes")]
    pub reblur_sizes: Vec<usize>,
    /// Adaptation step counts for the trade-off study.
    #[serde(default = "default_tta_steps")]
    pub tta_steps: Vec<usize>,
    /// Pairs reserved from the dataset tail for held-out evaluation.
    #[serde(default = "default_holdout")]
    pub holdout: usize,
    /// Epochs for the independent deblur phase of the capacity study.
    #[serde(default = "default_capacity_epochs")]
    pub deblur_epochs: u64,
    /// Epochs for the independent reblur phase of the capacity study.
    #[serde(default = "default_capacity_epochs")]
    pub reblur_epochs: u64,
}

fn default_capacity_counts() -> Vec<usize> {
    vec![1, 2, 4]
}

fn default_reblur_sizes() -> Vec<usize> {
    vec![1, 2, 3, 4]
}

fn default_tta_steps() -> Vec<usize> {
    vec![0, 5, 10, 20, 30]
}

fn default_holdout() -> usize {
    24
}

fn default_capacity_epochs() -> u64 {
    16
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            capacity_counts: default_capacity_counts(),
            reblur_sizes: default_reblur_sizes(),
            tta_steps: default_tta_steps(),
            holdout: default_holdout(),
            deblur_epochs: default_capacity_epochs(),
            reblur_epochs: default_capacity_epochs(),
        }
    }
}

impl RunFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        // toml reports line/column positions in its parse errors
        let file: RunFile = toml::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        Ok(file)
    }

    pub fn load_opt(path: Option<&PathBuf>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }
}
