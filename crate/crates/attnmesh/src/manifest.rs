//! The per-run manifest written next to every command's outputs.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{IoContext, Result};

pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    /// Every setting the command used, defaults included.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

pub fn now_unix() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

impl RunManifest {
    pub fn start(command: &str, config: serde_json::Value, seed: Option<u64>) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: now_unix(),
            finished_unix: 0.0,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Stamps the end time and writes the manifest into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<RunManifest> {
        self.finished_unix = now_unix();
        std::fs::create_dir_all(dir).at(dir)?;
        let path = dir.join(RUN_MANIFEST);
        let mut json = serde_json::to_string_pretty(&self).expect("manifest serializes");
        json.push('\n');
        std::fs::write(&path, json).at(&path)?;
        Ok(self)
    }
}
