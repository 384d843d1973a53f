//! Experiment configuration, loadable from TOML.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, FitOptions};
use crate::kernel::{BandwidthSpec, KernelSpec};
use crate::simulate::DgpSpec;
use crate::smoother::Ridge;

fn default_level() -> f64 {
    0.95
}

fn default_batches() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dgp: DgpSpec,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    #[serde(default)]
    pub bandwidth: BandwidthSpec,
    pub estimators: Vec<EstimatorKind>,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; `None` uses every available core. Never affects results.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub ridge: Ridge,
    /// Replication batches used for Monte Carlo standard errors.
    #[serde(default = "default_batches")]
    pub batches: usize,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.n_grid.is_empty() {
            return Err(Error::Config("n_grid is empty".into()));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("n_grid must be strictly increasing".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators selected".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("level {} outside (0, 1)", self.level)));
        }
        if self.batches == 0 {
            return Err(Error::Config("batches must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.bandwidth.validate()?;
        for &n in &self.n_grid {
            self.bandwidth.resolve(n)?;
        }
        Ok(())
    }

    pub fn fit_options(&self, n: usize) -> Result<FitOptions> {
        Ok(FitOptions::new(self.bandwidth.resolve(n)?)
            .with_kernel(self.kernel)
            .with_ridge(self.ridge)
            .with_level(self.level))
    }

    /// SHA-256 of the configuration with `workers` cleared, as lowercase hex.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.workers = None;
        let json = serde_json::to_string(&canonical).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub(crate) fn thread_pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers.unwrap_or(0))
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
    }
}
