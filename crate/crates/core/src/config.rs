//! TOML run configuration.
//!
//! ```toml
//! output_dir = "out"
//! metric_k = 20
//!
//! [synth]
//! n_users = 12500
//!
//! [sakm]
//! mode = "per_region"
//! eta = 5.0
//!
//! [fgis]
//! rounds = 10
//!
//! [experiment]
//! betas = [0.0, 100.0]
//! seeds = 10
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::features::DEFAULT_DIM;
use crate::fgis::FgisConfig;
use crate::predictor::PredictorSpec;
use crate::sakm::{ProxyMode, SakmParams};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Projection dimension.
    pub dim: usize,
    pub seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SakmSection {
    pub mode: ProxyMode,
    pub eta: f64,
    pub tau: f64,
    pub max_iter: usize,
    pub n_init: usize,
    pub seed: u64,
    pub max_permutations: u64,
}

impl Default for SakmSection {
    fn default() -> Self {
        let p = SakmParams::default();
        Self {
            mode: ProxyMode::default(),
            eta: p.eta,
            tau: p.tau,
            max_iter: p.max_iter,
            n_init: p.n_init,
            seed: p.seed,
            max_permutations: p.max_permutations,
        }
    }
}

impl SakmSection {
    pub fn params(&self) -> SakmParams {
        SakmParams {
            eta: self.eta,
            tau: self.tau,
            max_iter: self.max_iter,
            n_init: self.n_init,
            seed: self.seed,
            max_permutations: self.max_permutations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub betas: Vec<f64>,
    /// Number of replicate seeds, starting at `fgis.seed`.
    pub seeds: usize,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { betas: vec![0.0, 1.0, 10.0, 100.0], seeds: 10, bootstrap_resamples: 1000, bootstrap_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    /// `k` of Acc@k.
    pub metric_k: usize,
    pub synth: SynthConfig,
    pub features: FeatureConfig,
    pub sakm: SakmSection,
    pub predictor: PredictorSpec,
    pub fgis: FgisConfig,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            metric_k: 20,
            synth: SynthConfig::default(),
            features: FeatureConfig::default(),
            sakm: SakmSection::default(),
            predictor: PredictorSpec::default(),
            fgis: FgisConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let config: Self =
            toml::from_str(text).map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_toml(&text, path)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.synth.validate().map_err(|e| invalid(&e))?;
        self.sakm.params().validate().map_err(|e| invalid(&e))?;
        self.predictor.validate().map_err(|e| invalid(&e))?;
        self.fgis.validate().map_err(|e| invalid(&e))?;
        if self.features.dim < 2 {
            return Err(ConfigError::Invalid("features.dim must be at least 2".into()));
        }
        if self.metric_k == 0 {
            return Err(ConfigError::Invalid("metric_k must be positive".into()));
        }
        if self.experiment.betas.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(ConfigError::Invalid("experiment.betas must be finite and non-negative".into()));
        }
        if self.experiment.seeds == 0 {
            return Err(ConfigError::Invalid("experiment.seeds must be positive".into()));
        }
        Ok(())
    }
}
