//! The TOML run configuration.
//!
//! ```toml
//! [model]            # network shape; defaults are the desk config
//! input_size = 64
//! [train]            # optimizer, schedule, losses, augmentation
//! epochs_phase1 = 60
//! [train.augment]
//! rotation = 0.1
//! [blend]            # blend-shape head fit after phase 2 (epochs = 0 skips it)
//! epochs = 60
//! [cascade]          # also train the cascaded baseline
//! enabled = false
//! ```
//!
//! Every key is optional. Precedence: built-in defaults, then the file,
//! then command-line flags.

use std::path::Path;

use attnmesh_core::training::{BlendTrainConfig, TrainConfig};
use attnmesh_core::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeOptions {
    pub enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub blend: BlendTrainConfig,
    pub cascade: CascadeOptions,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<RunConfig> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::format(origin, e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::parse(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Fully materialized TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
