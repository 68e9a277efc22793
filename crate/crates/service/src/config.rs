//! TOML configuration. Every field has a default, so an empty file is a
//! valid offline configuration. Provider credentials come only from the
//! environment variables named here.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use wrapped_core::aggregate::SubgroupConfig;
use wrapped_core::cluster::ClusterConfig;
use wrapped_core::ingest::FilterConfig;
use wrapped_core::pipeline::PipelineConfig;
use wrapped_core::profiler::ProfilerConfig;
use wrapped_core::providers::{
    Budgeted, Embedder, Generator, HashEmbedder, MockGenerator, ProviderError, RemoteEmbedder, RemoteGenerator,
    RemoteSettings,
};
use wrapped_core::redact::{EntityDetector, GazetteerDetector, ProcessDetector, RedactError};
use wrapped_core::usage::TierThresholds;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Detector(#[from] RedactError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub server: ServerConfig,
    pub providers: ProvidersConfig,
    pub pipeline: PipelineSection,
    pub thresholds: Thresholds,
    pub rate_limit: RateLimitConfig,
    pub retention: RetentionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    /// Directory of the persistent store (profiles, usage, session metadata).
    pub store_dir: PathBuf,
    /// Concurrent pipeline jobs.
    pub workers: usize,
    pub max_upload_bytes: usize,
    /// Use the first `X-Forwarded-For` address as the client address.
    pub trust_forwarded_for: bool,
    /// Report served by `GET /aggregate` while no session has completed.
    pub offline_report: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            store_dir: PathBuf::from("wrapped-store"),
            workers: 2,
            max_upload_bytes: 256 * 1024 * 1024,
            trust_forwarded_for: false,
            offline_report: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DetectorConfig {
    #[default]
    Gazetteer,
    Process {
        program: String,
        #[serde(default)]
        args: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersConfig {
    pub kind: ProviderKind,
    /// Required when `kind = "remote"`.
    pub generator: Option<RemoteSettings>,
    /// Remote embeddings; the offline hash embedder is used when absent.
    pub embedder: Option<RemoteSettings>,
    /// Directory of recorded mock replies.
    pub fixtures_dir: Option<PathBuf>,
    /// Hard cap on estimated tokens per process lifetime.
    pub token_cap: Option<u64>,
    pub hash_dim: usize,
    pub detector: DetectorConfig,
}

impl Default for ProvidersConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            generator: None,
            embedder: None,
            fixtures_dir: None,
            token_cap: None,
            hash_dim: 256,
            detector: DetectorConfig::Gazetteer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub year: i32,
    pub min_chars: usize,
    pub truncate_chars: usize,
    pub strip_code: bool,
    pub budget_tokens: usize,
    pub max_retries: u32,
    pub parallel: bool,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let f = FilterConfig::for_year(2025);
        let p = ProfilerConfig::default();
        Self {
            year: f.year,
            min_chars: f.min_chars,
            truncate_chars: f.truncate_chars,
            strip_code: f.strip_code,
            budget_tokens: p.budget_tokens,
            max_retries: p.max_retries,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub heavy: usize,
    pub light: usize,
    pub min_n: usize,
    pub threshold_pp: f64,
    pub min_cluster_size: usize,
    pub seed: u64,
    pub restarts: usize,
    pub min_top_level: usize,
    pub max_top_level: usize,
    pub max_rounds: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        let t = TierThresholds::default();
        let c = ClusterConfig::default();
        let s = SubgroupConfig::default();
        Self {
            heavy: t.heavy,
            light: t.light,
            min_n: s.min_n,
            threshold_pp: s.threshold_pp,
            min_cluster_size: c.min_cluster_size,
            seed: c.seed,
            restarts: c.restarts,
            min_top_level: c.min_top_level,
            max_top_level: c.max_top_level,
            max_rounds: c.max_rounds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateLimitConfig {
    pub capacity: u32,
    pub refill_per_day: u32,
}

impl Default for RateLimitConfig {
    fn default() -> Self {
        Self {
            capacity: 3,
            refill_per_day: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetentionConfig {
    pub session_ttl_days: u32,
    /// Refuse remote providers that do not send the no-retention option.
    pub require_zero_retention: bool,
}

impl Default for RetentionConfig {
    fn default() -> Self {
        Self {
            session_ttl_days: 7,
            require_zero_retention: true,
        }
    }
}

/// Constructed provider stack.
#[derive(Clone)]
pub struct Providers {
    pub generator: Arc<dyn Generator>,
    pub embedder: Arc<dyn Embedder>,
    pub detector: Arc<dyn EntityDetector>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.filter().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.rate_limit.capacity == 0 || self.rate_limit.refill_per_day == 0 {
            return invalid("rate_limit needs capacity >= 1 and refill_per_day > 0");
        }
        if self.thresholds.light > self.thresholds.heavy {
            return invalid("thresholds.light must not exceed thresholds.heavy");
        }
        if self.thresholds.min_top_level > self.thresholds.max_top_level {
            return invalid("thresholds.min_top_level must not exceed max_top_level");
        }
        if self.server.workers == 0 {
            return invalid("server.workers must be at least 1");
        }
        if self.retention.session_ttl_days == 0 {
            return invalid("retention.session_ttl_days must be at least 1");
        }
        if self.providers.kind == ProviderKind::Remote && self.providers.generator.is_none() {
            return invalid("providers.kind = \"remote\" needs a [providers.generator] section");
        }
        if self.retention.require_zero_retention {
            let generator = self.providers.generator.as_ref().filter(|_| self.providers.kind == ProviderKind::Remote);
            if generator.into_iter().chain(&self.providers.embedder).any(|s| !s.zero_retention) {
                return invalid("retention.require_zero_retention is set but a remote provider has zero_retention = false");
            }
        }
        Ok(())
    }

    pub fn filter(&self) -> FilterConfig {
        FilterConfig {
            year: self.pipeline.year,
            min_chars: self.pipeline.min_chars,
            truncate_chars: self.pipeline.truncate_chars,
            strip_code: self.pipeline.strip_code,
        }
    }

    pub fn exec(&self) -> wrapped_core::Execution {
        if self.pipeline.parallel {
            wrapped_core::Execution::Parallel
        } else {
            wrapped_core::Execution::Sequential
        }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            filter: self.filter(),
            tiers: TierThresholds {
                heavy: self.thresholds.heavy,
                light: self.thresholds.light,
            },
            profiler: ProfilerConfig {
                budget_tokens: self.pipeline.budget_tokens,
                max_retries: self.pipeline.max_retries,
                exec: self.exec(),
            },
            exec: self.exec(),
        }
    }

    pub fn cluster_config(&self) -> ClusterConfig {
        let t = &self.thresholds;
        ClusterConfig {
            min_cluster_size: t.min_cluster_size,
            seed: t.seed,
            restarts: t.restarts,
            min_top_level: t.min_top_level,
            max_top_level: t.max_top_level,
            max_rounds: t.max_rounds,
            max_retries: self.pipeline.max_retries,
            exec: self.exec(),
            ..ClusterConfig::default()
        }
    }

    pub fn subgroup_config(&self) -> SubgroupConfig {
        SubgroupConfig {
            min_n: self.thresholds.min_n,
            threshold_pp: self.thresholds.threshold_pp,
        }
    }

    pub fn session_ttl(&self) -> chrono::Duration {
        chrono::Duration::days(i64::from(self.retention.session_ttl_days))
    }

    /// Builds generator, embedder and detector. Remote providers read their
    /// API keys from the environment here.
    pub fn build_providers(&self) -> Result<Providers, ConfigError> {
        let p = &self.providers;
        let generator: Arc<dyn Generator> = match p.kind {
            ProviderKind::Mock => match &p.fixtures_dir {
                Some(dir) => Arc::new(MockGenerator::from_dir(dir).map_err(|e| ConfigError::Read {
                    path: dir.clone(),
                    source: e,
                })?),
                None => Arc::new(MockGenerator::new()),
            },
            ProviderKind::Remote => {
                let settings = p.generator.clone().expect("validated");
                Arc::new(RemoteGenerator::from_env(settings)?)
            }
        };
        let generator: Arc<dyn Generator> = match p.token_cap {
            Some(cap) => Arc::new(Budgeted::new(generator, cap)),
            None => generator,
        };
        let embedder: Arc<dyn Embedder> = match &p.embedder {
            Some(settings) => Arc::new(RemoteEmbedder::from_env(settings.clone())?),
            None => Arc::new(HashEmbedder::new(p.hash_dim.max(1)).with_execution(self.exec())),
        };
        let detector: Arc<dyn EntityDetector> = match &p.detector {
            DetectorConfig::Gazetteer => Arc::new(GazetteerDetector::default()),
            DetectorConfig::Process { program, args } => Arc::new(ProcessDetector::spawn(program, args)?),
        };
        Ok(Providers {
            generator,
            embedder,
            detector,
        })
    }
}
