//! Training and run configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use somspike_core::data::SplitRatios;
use somspike_core::network::ModelConfig;
use somspike_core::objective::AdamConfig;
use somspike_core::Error;

use crate::error::{IoError, IoResult};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeInitStrategy {
    /// `K` distinct training rows, seen through the backbone.
    #[default]
    Sample,
    /// `N(0, 1/d)` entries.
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub model: ModelConfig,
    pub adam: AdamConfig,
    pub smoothing: f64,
    pub split_ratios: SplitRatios,
    pub prototype_init: PrototypeInitStrategy,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub early_stop_window: usize,
    /// Percentage points.
    pub early_stop_delta: f64,
    /// Where the best model is written; kept in memory when absent.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 30,
            batch_size: 32,
            seed: 0,
            model: ModelConfig::default(),
            adam: AdamConfig::default(),
            smoothing: 0.1,
            split_ratios: SplitRatios::default(),
            prototype_init: PrototypeInitStrategy::Sample,
            plateau_patience: 2,
            plateau_factor: 0.5,
            early_stop_window: 5,
            early_stop_delta: 0.01,
            checkpoint: None,
        }
    }
}

fn invalid(msg: &str) -> IoError {
    Error::InvalidConfig(msg.to_string()).into()
}

impl TrainConfig {
    pub fn validate(&self) -> IoResult<()> {
        if self.max_epochs == 0 {
            return Err(invalid("max_epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(invalid("smoothing must lie in [0, 1)"));
        }
        if !(self.adam.learning_rate >= 0.0 && self.adam.learning_rate.is_finite()) {
            return Err(invalid("learning_rate must be finite and >= 0"));
        }
        if self.plateau_patience == 0 || !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(invalid("plateau_patience must be >= 1 and plateau_factor in (0, 1)"));
        }
        if self.early_stop_window == 0 || !(self.early_stop_delta >= 0.0) {
            return Err(invalid("early_stop_window must be >= 1 and early_stop_delta >= 0"));
        }
        self.split_ratios.validate()?;
        self.model.validate()?;
        Ok(())
    }
}

/// A JSON run description: a training config plus file locations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub store: PathBuf,
    /// Saved split; recomputed from the seed when absent.
    #[serde(default)]
    pub split: Option<PathBuf>,
    #[serde(default)]
    pub report: Option<PathBuf>,
    #[serde(default)]
    pub ablation_csv: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainConfig,
}

impl RunConfigFile {
    /// Parses and validates. Relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> IoResult<Self> {
        let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
        let mut run: RunConfigFile = serde_json::from_slice(&bytes).map_err(|source| IoError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut run.store);
        for p in [&mut run.split, &mut run.report, &mut run.ablation_csv, &mut run.train.checkpoint]
            .into_iter()
            .flatten()
        {
            resolve(p);
        }
        run.train.validate()?;
        Ok(run)
    }
}
