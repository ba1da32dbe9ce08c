//! Project configuration, read from TOML.
//!
//! Relative paths resolve against the directory holding the config file.
//! Two backends are always available without declaration: `mock` (seeded
//! generation) and `mock-embed` (seeded embedding), both keyed on the
//! project seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use forge_core::analytics::{Aggregation, EngagementMetric, Metric};
use forge_core::corpus::{Dataset, FilterRules};
use forge_core::gateway::{BackendDescriptor, Gateway, GatewayError, GatewayOptions, RetryPolicy};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: toml::de::Error,
    },
    #[error("unknown backend {0:?}")]
    UnknownBackend(String),
    #[error("invalid value for {field}: {message}")]
    Invalid { field: &'static str, message: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub gateway: GatewayConfig,
    pub backends: BTreeMap<String, BackendDescriptor>,
    pub extract: BackendChoice,
    pub embed: EmbedConfig,
    pub cluster: ClusterConfig,
    pub diagnose: DiagnoseConfig,
    pub naming: BackendChoice,
    pub validation: ValidationConfig,
    pub analytics: AnalyticsConfig,
    pub viz: VizConfig,
    pub quality: QualityConfig,
    pub stance: StanceConfig,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 42,
            corpus: CorpusConfig::default(),
            gateway: GatewayConfig::default(),
            backends: BTreeMap::new(),
            extract: BackendChoice::default(),
            embed: EmbedConfig::default(),
            cluster: ClusterConfig::default(),
            diagnose: DiagnoseConfig::default(),
            naming: BackendChoice::default(),
            validation: ValidationConfig::default(),
            analytics: AnalyticsConfig::default(),
            viz: VizConfig::default(),
            quality: QualityConfig::default(),
            stance: StanceConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub channels: PathBuf,
    pub videos: PathBuf,
    pub filters: FilterRules,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            channels: "channels.jsonl".into(),
            videos: "videos.jsonl".into(),
            filters: FilterRules::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub embed_batch_size: usize,
    /// Request/response log, appended to when set.
    pub audit: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        let opts = GatewayOptions::default();
        GatewayConfig {
            max_in_flight: opts.max_in_flight,
            timeout_secs: opts.timeout.as_secs(),
            max_retries: opts.retry.max_retries,
            base_delay_ms: opts.retry.base_delay.as_millis() as u64,
            max_delay_ms: opts.retry.max_delay.as_millis() as u64,
            embed_batch_size: opts.embed_batch_size,
            audit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendChoice {
    pub backend: String,
}

impl Default for BackendChoice {
    fn default() -> Self {
        BackendChoice { backend: "mock".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub backend: String,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            backend: "mock-embed".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub k: usize,
    pub max_iter: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            k: 100,
            max_iter: forge_core::clusters::DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseConfig {
    /// `start:stop:step`, inclusive.
    pub elbow: String,
    pub silhouette: bool,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        DiagnoseConfig {
            elbow: "10:200:10".into(),
            silhouette: false,
        }
    }
}

/// Parses `start:stop:step` into the k values it spans.
pub fn parse_k_range(range: &str) -> Result<Vec<usize>, ConfigError> {
    let bad = |m: &str| ConfigError::Invalid {
        field: "diagnose.elbow",
        message: format!("{range:?}: {m}"),
    };
    let parts: Vec<usize> = range
        .split(':')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad("expected start:stop:step"))?;
    let [start, stop, step] = parts[..] else {
        return Err(bad("expected start:stop:step"));
    };
    if start == 0 || step == 0 || stop < start {
        return Err(bad("need 0 < start <= stop and step > 0"));
    }
    Ok((start..=stop).step_by(step).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub per_dataset: BTreeMap<Dataset, usize>,
    pub max_words: usize,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            per_dataset: BTreeMap::new(),
            max_words: forge_core::themes::DEFAULT_MAX_WORDS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticsConfig {
    pub min_occurrence: usize,
    pub metrics: Vec<EngagementMetric>,
    pub aggregation: Aggregation,
}

impl Default for AnalyticsConfig {
    fn default() -> Self {
        AnalyticsConfig {
            min_occurrence: forge_core::analytics::DEFAULT_MIN_OCCURRENCE,
            metrics: vec![EngagementMetric::CommentPerView, EngagementMetric::LikePerView],
            aggregation: Aggregation::MeanOfRatios,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VizConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub metric: Metric,
    /// Restricts the map to one dataset; every dataset when absent.
    pub dataset: Option<Dataset>,
}

impl Default for VizConfig {
    fn default() -> Self {
        VizConfig {
            perplexity: 30.0,
            iterations: 1000,
            metric: Metric::Cosine,
            dataset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityConfig {
    /// JSON object mapping group name to channel ids. Without it, channels
    /// are grouped by dataset and orientation.
    pub groups: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StanceConfig {
    pub targets: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub backend: String,
    pub threshold: f64,
    pub credit: f64,
    pub datasets: Vec<Dataset>,
}

impl Default for StanceConfig {
    fn default() -> Self {
        StanceConfig {
            targets: None,
            gold: None,
            backend: "mock".into(),
            threshold: forge_core::stance::DEFAULT_THRESHOLD,
            credit: forge_core::stance::DEFAULT_PARTIAL_CREDIT,
            datasets: vec![Dataset::News],
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg: Config = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Serialized form recorded in the store manifest.
    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn backend(&self, name: &str) -> Result<BackendDescriptor, ConfigError> {
        if let Some(d) = self.backends.get(name) {
            return Ok(d.clone());
        }
        match name {
            "mock" => Ok(BackendDescriptor::mock_generation(self.seed)),
            "mock-embed" => Ok(BackendDescriptor::mock_embedding(self.seed)),
            other => Err(ConfigError::UnknownBackend(other.to_string())),
        }
    }

    pub fn gateway_options(&self) -> GatewayOptions {
        let g = &self.gateway;
        GatewayOptions {
            retry: RetryPolicy {
                max_retries: g.max_retries,
                base_delay: Duration::from_millis(g.base_delay_ms),
                max_delay: Duration::from_millis(g.max_delay_ms),
            },
            max_in_flight: g.max_in_flight,
            timeout: Duration::from_secs(g.timeout_secs),
            embed_batch_size: g.embed_batch_size,
            audit_path: g.audit.as_ref().map(|p| self.resolve(p)),
        }
    }

    pub fn gateway(&self, backend: &str) -> Result<Gateway, ConfigError> {
        Ok(Gateway::new(self.backend(backend)?, self.gateway_options())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg: Config = toml::from_str(
            r#"
            seed = 7
            [cluster]
            k = 12
            [backends.nemo]
            kind = "RemoteGeneration"
            endpoint = "http://localhost:9000/generate"
            model_name = "nemo"
            api_key_env = "NEMO_KEY"
            [stance]
            credit = 0.25
            "#,
        )
        .unwrap();
        assert_eq!(cfg.cluster.k, 12);
        assert_eq!(cfg.cluster.max_iter, 300);
        assert_eq!(cfg.stance.threshold, 85.0);
        assert_eq!(cfg.backend("mock").unwrap().seed, Some(7));
        assert_eq!(cfg.backend("nemo").unwrap().model_name, "nemo");
        assert!(matches!(cfg.backend("gpt"), Err(ConfigError::UnknownBackend(_))));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Config>("[cluster]\nkk = 3\n").is_err());
    }

    #[test]
    fn k_ranges() {
        assert_eq!(parse_k_range("10:50:20").unwrap(), [10, 30, 50]);
        assert_eq!(parse_k_range("5:5:1").unwrap(), [5]);
        assert!(parse_k_range("0:10:1").is_err());
        assert!(parse_k_range("10:5:1").is_err());
        assert!(parse_k_range("1:2").is_err());
    }
}
