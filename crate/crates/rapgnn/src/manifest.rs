//! Run manifests, written to the output directory before any computation.

use std::path::Path;

use rapgnn_core::model::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::artifact::config_digest;

pub const RUN_MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Subcommand name.
    pub experiment: String,
    pub config: ModelConfig,
    pub config_digest: String,
    /// Bundle path or generator description.
    pub dataset: String,
    pub seeds: Vec<u64>,
    pub out_dir: String,
    pub version: String,
}

impl RunManifest {
    pub fn new(experiment: &str, config: &ModelConfig, dataset: String, seeds: Vec<u64>, out_dir: &Path) -> Self {
        Self {
            experiment: experiment.into(),
            config: config.clone(),
            config_digest: config_digest(config),
            dataset,
            seeds,
            out_dir: out_dir.display().to_string(),
            version: version(),
        }
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(dir.join(RUN_MANIFEST), text + "\n")
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// `v<version>`, with a build-time `RAPGNN_GIT_DESCRIBE` appended when set.
pub fn version() -> String {
    match option_env!("RAPGNN_GIT_DESCRIBE") {
        Some(d) => format!("v{}-{}", env!("CARGO_PKG_VERSION"), d),
        None => format!("v{}", env!("CARGO_PKG_VERSION")),
    }
}
