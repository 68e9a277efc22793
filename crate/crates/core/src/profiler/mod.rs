//! Facet profile extraction.
//!
//! A redacted corpus is packed into chronological chunks, each chunk gets
//! one independent generation call, and the per-chunk profiles are merged by
//! a synthesis call. Every profile leaving this module has passed
//! [`FacetProfile::validate`].

pub mod prompts;

use std::sync::OnceLock;

use chrono::Utc;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::ingest::Timestamp;
use crate::providers::{generate, GenerationParams, GenerationRequest, Generator, ProviderError, SchemaId, INPUT_MARKER};
use crate::redact::RedactedCorpus;

pub const TOPIC_COUNT: usize = 5;
pub const RED_FLAG_COUNT: usize = 3;
pub const GREEN_FLAG_COUNT: usize = 3;
pub const DEFAULT_BUDGET_TOKENS: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("message {index} needs {estimate} tokens, over the chunk budget of {budget}")]
    MessageExceedsBudget { index: usize, estimate: usize, budget: usize },
    #[error("corpus has no messages")]
    EmptyCorpus,
    #[error("chunk has no messages")]
    EmptyChunk,
    #[error("nothing to synthesize")]
    NoPartials,
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// The facet fields a model is asked for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Facets {
    pub top_topics: Vec<String>,
    pub red_flags: Vec<String>,
    pub green_flags: Vec<String>,
    #[serde(deserialize_with = "one_string")]
    pub communication_style: String,
    pub time_travel: String,
    pub archetype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notable_memories: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ai_personality: Option<String>,
}

/// Accepts `"x"` or `["x"]`.
fn one_string<'de, D: serde::Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrList {
        One(String),
        List(Vec<String>),
    }
    match OneOrList::deserialize(d)? {
        OneOrList::One(s) => Ok(s),
        OneOrList::List(mut v) if v.len() == 1 => Ok(v.remove(0)),
        OneOrList::List(v) => Err(serde::de::Error::custom(format!(
            "communication_style must be exactly 1 item, got {}",
            v.len()
        ))),
    }
}

fn placeholder_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<[A-Z_]+>").expect("placeholder pattern compiles"))
}

/// Empty, or nothing but placeholders, whitespace and punctuation.
fn is_contentless(s: &str) -> bool {
    !placeholder_regex().replace_all(s, "").chars().any(char::is_alphanumeric)
}

impl Facets {
    pub fn validate(&self) -> Result<(), String> {
        let lists = [
            ("top_topics", &self.top_topics, TOPIC_COUNT),
            ("red_flags", &self.red_flags, RED_FLAG_COUNT),
            ("green_flags", &self.green_flags, GREEN_FLAG_COUNT),
        ];
        for (name, items, want) in lists {
            if items.len() != want {
                return Err(format!("{name} must have exactly {want} items, got {}", items.len()));
            }
            if let Some(i) = items.iter().position(|s| is_contentless(s)) {
                return Err(format!("{name}[{i}] is empty or placeholder-only"));
            }
        }
        for (name, s) in [
            ("communication_style", &self.communication_style),
            ("time_travel", &self.time_travel),
            ("archetype", &self.archetype),
        ] {
            if is_contentless(s) {
                return Err(format!("{name} is empty or placeholder-only"));
            }
        }
        Ok(())
    }

    /// Parses and validates a model reply.
    pub fn parse(raw: &str) -> Result<Self, String> {
        let facets: Facets = serde_json::from_str(raw).map_err(|e| format!("not a profile object: {e}"))?;
        facets.validate()?;
        Ok(facets)
    }
}

/// One participant's profile. Deserialization re-runs validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "UncheckedProfile")]
pub struct FacetProfile {
    pub participant_id: String,
    #[serde(flatten)]
    pub facets: Facets,
    pub generated_at: Timestamp,
    pub provider_fingerprint: String,
}

#[derive(Deserialize)]
struct UncheckedProfile {
    participant_id: String,
    #[serde(flatten)]
    facets: Facets,
    generated_at: Timestamp,
    provider_fingerprint: String,
}

impl TryFrom<UncheckedProfile> for FacetProfile {
    type Error = String;

    fn try_from(p: UncheckedProfile) -> Result<Self, String> {
        p.facets.validate()?;
        Ok(FacetProfile {
            participant_id: p.participant_id,
            facets: p.facets,
            generated_at: p.generated_at,
            provider_fingerprint: p.provider_fingerprint,
        })
    }
}

impl FacetProfile {
    pub fn validate(&self) -> Result<(), ProfileError> {
        self.facets.validate().map_err(ProfileError::InvalidProfile)
    }
}

/// `ceil(chars / 4)`.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChunkMessage {
    /// 1-based position of the source conversation in the corpus.
    pub conversation: usize,
    pub timestamp: Option<Timestamp>,
    pub text: String,
}

impl ChunkMessage {
    /// `[conversation N | YYYY-MM-DD] text`, with line breaks flattened.
    pub fn history_line(&self) -> String {
        let date = self
            .timestamp
            .map(|t| t.local_date().format("%Y-%m-%d").to_string())
            .unwrap_or_else(|| "undated".into());
        let text = self.text.replace(['\r', '\n'], " ");
        format!("[conversation {} | {date}] {text}", self.conversation)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Chunk {
    pub index: usize,
    pub messages: Vec<ChunkMessage>,
    pub estimated_tokens: usize,
}

impl Chunk {
    pub fn history(&self) -> String {
        self.messages
            .iter()
            .map(ChunkMessage::history_line)
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn latest(&self) -> Option<Timestamp> {
        self.messages.iter().filter_map(|m| m.timestamp).max()
    }
}

/// Every message of the corpus in chronological order (stable on ties).
pub fn chronological_messages(corpus: &RedactedCorpus) -> Vec<ChunkMessage> {
    let mut all: Vec<ChunkMessage> = corpus
        .conversations()
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| {
            c.messages.iter().map(move |m| ChunkMessage {
                conversation: ci + 1,
                timestamp: m.timestamp,
                text: m.text.clone(),
            })
        })
        .collect();
    all.sort_by_key(|m| m.timestamp);
    all
}

/// Greedy chronological packing: a chunk closes when the next message would
/// push it past `budget_tokens`.
pub fn chunk_history(corpus: &RedactedCorpus, budget_tokens: usize) -> Result<Vec<Chunk>, ProfileError> {
    let messages = chronological_messages(corpus);
    let mut chunks: Vec<Chunk> = Vec::new();
    let mut current = Chunk {
        index: 0,
        messages: Vec::new(),
        estimated_tokens: 0,
    };
    for (index, m) in messages.into_iter().enumerate() {
        let estimate = estimate_tokens(&m.text);
        if estimate > budget_tokens {
            return Err(ProfileError::MessageExceedsBudget {
                index,
                estimate,
                budget: budget_tokens,
            });
        }
        if !current.messages.is_empty() && current.estimated_tokens + estimate > budget_tokens {
            let next = Chunk {
                index: current.index + 1,
                messages: Vec::new(),
                estimated_tokens: 0,
            };
            chunks.push(std::mem::replace(&mut current, next));
        }
        current.estimated_tokens += estimate;
        current.messages.push(m);
    }
    if !current.messages.is_empty() {
        chunks.push(current);
    }
    Ok(chunks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfilerConfig {
    pub budget_tokens: usize,
    pub max_retries: u32,
    pub exec: Execution,
}

impl Default for ProfilerConfig {
    fn default() -> Self {
        Self {
            budget_tokens: DEFAULT_BUDGET_TOKENS,
            max_retries: 3,
            exec: Execution::default(),
        }
    }
}

fn stamp(gen: &dyn Generator, latest: Option<Timestamp>) -> Timestamp {
    match latest {
        Some(t) if gen.reproducible() => t,
        _ => Timestamp::from_utc(Utc::now()),
    }
}

/// The extraction request for one chunk.
pub fn profile_request(chunk: &Chunk) -> GenerationRequest {
    let user = format!("{}\n{}\n{INPUT_MARKER}\n{}", prompts::PROFILE_USER, prompts::OUTPUT_FORMAT, chunk.history());
    GenerationRequest::new(prompts::SYSTEM, user, GenerationParams::PROFILE, SchemaId::FacetProfile)
}

/// One stateless generation call for one chunk.
pub fn extract_profile(
    participant_id: &str,
    chunk: &Chunk,
    gen: &dyn Generator,
    max_retries: u32,
) -> Result<FacetProfile, ProfileError> {
    if chunk.messages.is_empty() {
        return Err(ProfileError::EmptyChunk);
    }
    let facets = generate(gen, &profile_request(chunk), max_retries, Facets::parse)?;
    Ok(FacetProfile {
        participant_id: participant_id.to_string(),
        facets,
        generated_at: stamp(gen, chunk.latest()),
        provider_fingerprint: gen.fingerprint(),
    })
}

#[derive(Serialize)]
struct SynthesisPayload<'a> {
    profiles: Vec<&'a Facets>,
}

/// Merges per-chunk profiles. A single partial is returned as is.
pub fn synthesize(
    partials: Vec<FacetProfile>,
    gen: &dyn Generator,
    max_retries: u32,
) -> Result<FacetProfile, ProfileError> {
    match partials.len() {
        0 => return Err(ProfileError::NoPartials),
        1 => return Ok(partials.into_iter().next().expect("one partial")),
        _ => {}
    }
    let payload = SynthesisPayload {
        profiles: partials.iter().map(|p| &p.facets).collect(),
    };
    let payload = serde_json::to_string(&payload).expect("facets serialize");
    let user = format!("{}\n{INPUT_MARKER}\n{payload}", prompts::SYNTHESIS);
    let req = GenerationRequest::new(prompts::SYSTEM, user, GenerationParams::PROFILE, SchemaId::FacetProfile);
    let facets = generate(gen, &req, max_retries, Facets::parse)?;
    Ok(FacetProfile {
        participant_id: partials[0].participant_id.clone(),
        facets,
        generated_at: stamp(gen, partials.iter().map(|p| p.generated_at).max()),
        provider_fingerprint: gen.fingerprint(),
    })
}

/// Chunk, extract (at most `max_in_flight` chunks at a time), synthesize.
pub fn profile_corpus(
    corpus: &RedactedCorpus,
    gen: &dyn Generator,
    config: &ProfilerConfig,
) -> Result<FacetProfile, ProfileError> {
    let chunks = chunk_history(corpus, config.budget_tokens)?;
    if chunks.is_empty() {
        return Err(ProfileError::EmptyCorpus);
    }
    log::info!("profiling {} in {} chunk(s)", corpus.participant_id(), chunks.len());
    let partials = config.exec.map_bounded(&chunks, gen.max_in_flight(), |chunk| {
        extract_profile(corpus.participant_id(), chunk, gen, config.max_retries)
    });
    let partials = partials.into_iter().collect::<Result<Vec<_>, _>>()?;
    synthesize(partials, gen, config.max_retries)
}
