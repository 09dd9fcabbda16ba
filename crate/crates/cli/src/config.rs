//! Run configuration, loaded from TOML and overridden by flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use roadrisk::align::Metric;
use roadrisk::causal::{EmbeddingSource, EstimatorConfig, TreatmentSpec};
use roadrisk::gnn::{FusionConfig, MessagePassingConfig, Task};
use roadrisk::ingest::WeatherPolicy;
use roadrisk::synth::SynthSpec;
use roadrisk::train::TrainConfig;
use roadrisk::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub nodes: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub accidents: Option<PathBuf>,
    pub accidents_matched: Option<PathBuf>,
    pub weather: Option<PathBuf>,
    pub volume: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub snapshots: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub frame: Option<PathBuf>,
}

/// Year ranges as `YYYY` or `YYYY-YYYY`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: Option<String>,
    pub valid: Option<String>,
    pub test: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CausalConfig {
    pub treatment: String,
    pub estimator: EstimatorConfig,
    pub embedding: EmbeddingSource,
    /// Width in mm of the precipitation bins.
    pub bin_width: f64,
}

impl Default for CausalConfig {
    fn default() -> Self {
        CausalConfig {
            treatment: TreatmentSpec::winter().to_string(),
            estimator: EstimatorConfig::default(),
            embedding: EmbeddingSource::default(),
            bin_width: 10.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub task: Task,
    pub metric: Metric,
    pub weather_policy: WeatherPolicy,
    /// `YYYY-MM..YYYY-MM`; inferred from the data when absent.
    pub range: Option<String>,
    pub ablate_groups: Option<String>,
    pub paths: Paths,
    pub split: SplitConfig,
    pub mp: MessagePassingConfig,
    pub fusion: FusionConfig,
    pub train: TrainConfig,
    pub causal: CausalConfig,
    pub synth: SynthSpec,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_keeps_defaults() {
        let c: RunConfig = toml::from_str("seed = 7\n[mp]\nhidden = 64\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.mp.hidden, 64);
        assert_eq!(c.mp.embed_dim, MessagePassingConfig::default().embed_dim);
        assert_eq!(c.train, TrainConfig::default());
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(toml::from_str::<RunConfig>("sead = 1\n").is_err());
    }

    #[test]
    fn round_trip() {
        let c = RunConfig::default();
        let back: RunConfig = toml::from_str(&toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
