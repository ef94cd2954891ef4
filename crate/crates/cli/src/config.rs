use crate::CliError;
use multislam::dpgo::{CentralizedConfig, RbcdConfig};
use multislam::mesh::AccuracyConfig;
use multislam::multirobot::{ProtocolConfig, ScenarioConfig, DEFAULT_IMAGE_BYTES_PER_KEYFRAME};
use multislam::pcm::PcmConfig;
use multislam::pose_graph::{ManhattanConfig, OutlierConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Synthetic planar grid world, split into `robots` equal chains.
    Manhattan,
    /// A g2o file; vertex ids encode robots as `robot * 1_000_000 + index`.
    G2o,
    /// Synthetic multi-robot scenario generated in memory.
    Scenario,
    /// Scenario directory written by `generate`.
    Bundle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: Source,
    /// g2o file or bundle directory.
    pub path: Option<PathBuf>,
    /// Rendezvous CSV overriding the scenario's own schedule.
    pub schedule: Option<PathBuf>,
    pub manhattan: ManhattanConfig,
    pub scenario: ScenarioConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            source: Source::Manhattan,
            path: None,
            schedule: None,
            manhattan: ManhattanConfig::default(),
            scenario: ScenarioConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcmBenchConfig {
    /// Loop closures added between two searches.
    pub batch: usize,
    pub max_vertices: usize,
    pub repetitions: usize,
}

impl Default for PcmBenchConfig {
    fn default() -> Self {
        Self { batch: 50, max_vertices: 1000, repetitions: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpgoBenchConfig {
    /// Block updates of the early-stopped run.
    pub early_stop: usize,
    /// Reject outliers with PCM before solving when outliers were injected.
    pub filter_outliers: bool,
}

impl Default for DpgoBenchConfig {
    fn default() -> Self {
        Self { early_stop: 50, filter_outliers: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub dataset_name: String,
    pub image_bytes_per_keyframe: u64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { dataset_name: "synthetic".into(), image_bytes_per_keyframe: DEFAULT_IMAGE_BYTES_PER_KEYFRAME }
    }
}

/// Everything a run depends on. `seed` has no default in files: a config
/// file that omits it is rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_robots")]
    pub robots: usize,
    #[serde(default)]
    pub outliers: usize,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub outlier_model: OutlierConfig,
    #[serde(default)]
    pub pcm: PcmConfig,
    #[serde(default)]
    pub pcm_bench: PcmBenchConfig,
    #[serde(default)]
    pub rbcd: RbcdConfig,
    #[serde(default)]
    pub dpgo_bench: DpgoBenchConfig,
    #[serde(default)]
    pub centralized: CentralizedConfig,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub accuracy: AccuracyConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_robots() -> usize {
    3
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: default_out(),
            robots: default_robots(),
            outliers: 0,
            dataset: DatasetConfig::default(),
            outlier_model: OutlierConfig::default(),
            pcm: PcmConfig::default(),
            pcm_bench: PcmBenchConfig::default(),
            rbcd: RbcdConfig::default(),
            dpgo_bench: DpgoBenchConfig::default(),
            centralized: CentralizedConfig::default(),
            protocol: ProtocolConfig::default(),
            accuracy: AccuracyConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub robots: Option<usize>,
    pub outliers: Option<usize>,
    pub rank: Option<usize>,
    pub early_stop: Option<usize>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads `path` and resolves relative dataset paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.dataset.path, &mut cfg.dataset.schedule].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Applies overrides and spreads the seed, robot count and solver flags
    /// into the module configs that consume them.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        if let Some(r) = o.robots {
            self.robots = r;
        }
        if let Some(n) = o.outliers {
            self.outliers = n;
        }
        if let Some(r) = o.rank {
            self.rbcd.rank = r;
            self.protocol.rbcd.rank = r;
        }
        if let Some(e) = o.early_stop {
            self.dpgo_bench.early_stop = e;
            self.protocol.rbcd.early_stop_iterations = Some(e);
        }
        self.dataset.manhattan.seed = self.seed;
        self.dataset.scenario.seed = self.seed;
        self.dataset.scenario.robots = self.robots as u32;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.robots == 0 {
            return bad("robots must be at least 1".into());
        }
        match self.dataset.source {
            Source::G2o | Source::Bundle => match &self.dataset.path {
                None => return bad(format!("dataset.path is required for source {:?}", self.dataset.source)),
                Some(p) if !p.exists() => return bad(format!("dataset.path {} does not exist", p.display())),
                _ => {}
            },
            Source::Manhattan | Source::Scenario => {}
        }
        if let Some(p) = &self.dataset.schedule {
            if !p.is_file() {
                return bad(format!("dataset.schedule {} does not exist", p.display()));
            }
        }
        if self.pcm_bench.batch == 0 || self.pcm_bench.repetitions == 0 {
            return bad("pcm_bench.batch and pcm_bench.repetitions must be positive".into());
        }
        if self.dpgo_bench.early_stop == 0 {
            return bad("dpgo_bench.early_stop must be positive".into());
        }
        self.dataset.scenario.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.pcm.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.rbcd.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.protocol.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
