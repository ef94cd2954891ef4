use crate::ExperimentConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::PathBuf;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub multislam: String,
    pub cli: String,
    pub parallel_build: bool,
}

/// Enough to reproduce a command: the effective configuration in full, its
/// digest, the seed and what produced the artifacts.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    /// SHA-256 of the effective configuration with the output directory
    /// cleared, so the same experiment hashes the same wherever it is written.
    pub config_sha256: String,
    pub seed: u64,
    pub versions: Versions,
    /// File name to SHA-256.
    pub artifacts: BTreeMap<String, String>,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, artifacts: Vec<(String, String)>) -> Self {
        Self {
            command: command.to_string(),
            config_sha256: config_digest(cfg),
            seed: cfg.seed,
            versions: Versions {
                multislam: multislam::VERSION.to_string(),
                cli: env!("CARGO_PKG_VERSION").to_string(),
                parallel_build: multislam::par::PARALLEL_BUILD,
            },
            artifacts: artifacts.into_iter().collect(),
            config: cfg.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

pub fn config_digest(cfg: &ExperimentConfig) -> String {
    let canonical = ExperimentConfig { out: PathBuf::new(), ..cfg.clone() };
    sha256_hex(canonical.to_toml().as_bytes())
}
