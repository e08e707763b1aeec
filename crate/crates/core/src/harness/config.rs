use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Normalization, Split};
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::model::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Dataset directory holding `manifest.json`.
    pub root: PathBuf,
    pub train_split: Split,
    pub val_split: Split,
    pub normalization: Normalization,
    pub augment: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: PathBuf::from("data"),
            train_split: Split::Train,
            val_split: Split::Val,
            normalization: Normalization::default(),
            augment: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many optimizer steps, mid-epoch if need be.
    pub max_steps: Option<usize>,
    /// Validate every this many epochs; the last epoch is always validated.
    pub validate_every: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { lr: 1e-4, weight_decay: 0.05, epochs: 30, batch_size: 4, max_steps: None, validate_every: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub optim: OptimConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            model: ModelConfig::default(),
            loss: LossWeights::default(),
            optim: OptimConfig::default(),
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let o = &self.optim;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", o.lr)));
        }
        if !(o.weight_decay >= 0.0 && o.weight_decay.is_finite()) {
            return Err(Error::InvalidConfig(format!("weight_decay must be non-negative, got {}", o.weight_decay)));
        }
        if o.epochs == 0 || o.batch_size == 0 || o.validate_every == 0 || o.max_steps == Some(0) {
            return Err(Error::InvalidConfig("epochs, batch_size, validate_every and max_steps must be positive".into()));
        }
        self.data.normalization.validate()?;
        self.loss.validate()?;
        self.model.validate()
    }
}
