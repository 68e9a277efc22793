//! One participant end to end: year selection and usage telemetry, then
//! filtering, redaction and profiling. Also the run manifest written next to
//! every batch output.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::ParticipantRecord;
use crate::ingest::{filter_corpus, select_year, Conversation, FilterConfig, IngestError};
use crate::profiler::{profile_corpus, prompts, ProfileError, ProfilerConfig};
use crate::providers::{Embedder, Generator, ProviderError, RetentionMode};
use crate::redact::{redact_corpus, EntityDetector, RedactError, RedactionAudit};
use crate::usage::{compute_usage, TierThresholds, UsageStats};
use crate::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub filter: FilterConfig,
    pub tiers: TierThresholds,
    pub profiler: ProfilerConfig,
    pub exec: Execution,
}

impl PipelineConfig {
    pub fn for_year(year: i32) -> Self {
        Self {
            filter: FilterConfig::for_year(year),
            tiers: TierThresholds::default(),
            profiler: ProfilerConfig::default(),
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Redact(#[from] RedactError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

impl PipelineError {
    /// Stable machine-readable reason.
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::Ingest(IngestError::InvalidConfig(_)) => "invalid_config",
            PipelineError::Ingest(_) => "ingest_failed",
            PipelineError::Redact(_) => "redaction_failed",
            PipelineError::Profile(ProfileError::EmptyCorpus) => "empty_corpus",
            PipelineError::Profile(ProfileError::MessageExceedsBudget { .. }) => "message_over_budget",
            PipelineError::Profile(ProfileError::Provider(e)) => match e {
                ProviderError::ProviderUnreachable(_) => "provider_unreachable",
                ProviderError::SchemaViolation { .. } => "schema_violation",
                ProviderError::BudgetExceeded { .. } => "budget_exceeded",
                _ => "provider_failed",
            },
            PipelineError::Profile(_) => "profile_failed",
        }
    }
}

/// Usage telemetry over the analysis year, before length filtering.
pub fn participant_usage(participant_id: &str, conversations: &[Conversation], config: &PipelineConfig) -> UsageStats {
    compute_usage(participant_id, &select_year(conversations, config.filter.year), config.tiers)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantRun {
    pub record: ParticipantRecord,
    pub audit: RedactionAudit,
    pub dropped_count: usize,
    pub truncated_count: usize,
}

/// Runs every per-participant stage. The returned record holds no message
/// text.
pub fn run_participant(
    participant_id: &str,
    conversations: &[Conversation],
    detector: &dyn EntityDetector,
    gen: &dyn Generator,
    config: &PipelineConfig,
) -> Result<ParticipantRun, PipelineError> {
    config.filter.validate()?;
    let usage = participant_usage(participant_id, conversations, config);
    let filtered = filter_corpus(participant_id, conversations, &config.filter);
    let redacted = redact_corpus(&filtered, detector, config.exec)?;
    let profile = profile_corpus(&redacted, gen, &config.profiler)?;
    Ok(ParticipantRun {
        record: ParticipantRecord {
            profile,
            usage,
            demographics: None,
        },
        audit: redacted.audit().clone(),
        dropped_count: filtered.dropped_count,
        truncated_count: filtered.truncated_count,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderInfo {
    pub fingerprint: String,
    pub retention: RetentionMode,
    pub reproducible: bool,
}

impl ProviderInfo {
    pub fn generator(gen: &dyn Generator) -> Self {
        Self {
            fingerprint: gen.fingerprint(),
            retention: gen.retention(),
            reproducible: gen.reproducible(),
        }
    }

    /// Embedders are deterministic functions of their input.
    pub fn embedder(embedder: &dyn Embedder) -> Self {
        Self {
            fingerprint: embedder.fingerprint(),
            retention: embedder.retention(),
            reproducible: true,
        }
    }
}

/// Provenance of one batch output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub prompt_checksums: BTreeMap<String, String>,
    pub generator: ProviderInfo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedder: Option<ProviderInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<String>,
    /// Whether a rerun on the same input reproduces the output byte for byte.
    pub reproducible: bool,
    pub participants: usize,
    pub config: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, gen: &dyn Generator, config: serde_json::Value) -> Self {
        let generator = ProviderInfo::generator(gen);
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            prompt_checksums: prompts::checksums(),
            reproducible: generator.reproducible,
            generator,
            embedder: None,
            detector: None,
            participants: 0,
            config,
        }
    }

    pub fn with_embedder(mut self, embedder: &dyn Embedder) -> Self {
        self.embedder = Some(ProviderInfo::embedder(embedder));
        self
    }

    pub fn with_detector(mut self, detector: &dyn EntityDetector) -> Self {
        self.detector = Some(detector.name().to_string());
        self
    }
}
