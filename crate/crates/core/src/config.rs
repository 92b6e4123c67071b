//! TOML pipeline configuration.
//!
//! Every key is optional. The top-level `seed` is propagated into the
//! `[synth]` and `[train]` tables, and `CCR_GNN_SEED` overrides it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::{BenchOptions, DEFAULT_IMBALANCE};
use crate::data::{SynthConfig, DEFAULT_MISSING_DROP_FRACTION};
use crate::error::{Error, Result};
use crate::model::CcrGnnConfig;
use crate::train::TrainConfig;

pub const SEED_ENV: &str = "CCR_GNN_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataOptions {
    /// Raw features missing in more than this fraction of rows are dropped.
    pub missing_drop_fraction: f64,
}

impl Default for DataOptions {
    fn default() -> Self {
        DataOptions {
            missing_drop_fraction: DEFAULT_MISSING_DROP_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub data: DataOptions,
    pub synth: SynthConfig,
    pub model: CcrGnnConfig,
    pub train: TrainConfig,
    pub bench: BenchOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let seed = TrainConfig::default().seed;
        PipelineConfig {
            seed,
            data: DataOptions::default(),
            synth: SynthConfig {
                imbalance: DEFAULT_IMBALANCE.to_vec(),
                seed,
                ..Default::default()
            },
            model: CcrGnnConfig::default(),
            train: TrainConfig::default(),
            bench: BenchOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.set_seed(cfg.seed);
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synth.seed = seed;
        self.train.seed = seed;
    }

    /// Applies `CCR_GNN_SEED` when it is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed = v
                .trim()
                .parse()
                .map_err(|e| Error::Config(format!("{SEED_ENV}={v:?}: {e}")))?;
            self.set_seed(seed);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.model.num_classes > crate::data::RATINGS.len() {
            return Err(Error::Config(format!(
                "at most {} classes are supported",
                crate::data::RATINGS.len()
            )));
        }
        Ok(())
    }
}
