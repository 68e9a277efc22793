//! PII removal.
//!
//! Spans come from two sources: a pluggable [`EntityDetector`] for people,
//! places and organisations, and two built-in regexes for email addresses and
//! phone numbers. Spans are merged, then replaced right-to-left by fixed
//! placeholder tokens. Nothing downstream of this module ever sees text that
//! has not been through [`redact_corpus`].

mod detectors;

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::ingest::{Conversation, FilteredCorpus};

pub use detectors::{GazetteerDetector, ProcessDetector, ScriptedDetector, SerializedDetector};

/// Email contract pattern.
pub const EMAIL_PATTERN: &str = r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}";

/// Phone contract pattern: an optional `+` country code (1-3 digits), then
/// either 7-14 digits, or one parenthesised group of 2-4 digits followed by
/// 5-10 more. Digits may be separated by single spaces, dots or hyphens.
/// Every match holds 7-14 digits after the country code. Dates written as
/// `2025-03-01` also match; that over-redaction is accepted.
pub const PHONE_PATTERN: &str =
    r"(?:\+\d{1,3}[ .-]?)?(?:\(\d{2,4}\)[ .-]?\d(?:[ .-]?\d){4,9}|\d(?:[ .-]?\d){6,13})";

const PLACEHOLDER_PATTERN: &str = r"<(?:PERSON|LOCATION|ORG|EMAIL|PHONE)>";

/// Detector label carried by regex-produced spans.
pub const REGEX_DETECTOR: &str = "regex";

pub fn email_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(EMAIL_PATTERN).expect("email pattern compiles"))
}

pub fn phone_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(PHONE_PATTERN).expect("phone pattern compiles"))
}

fn placeholder_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(PLACEHOLDER_PATTERN).expect("placeholder pattern compiles"))
}

/// True when `text` still contains something the contract regexes match.
pub fn contains_contact_pii(text: &str) -> bool {
    email_regex().is_match(text) || phone_regex().is_match(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EntityKind {
    Person,
    Location,
    Org,
    Email,
    Phone,
}

impl EntityKind {
    pub const ALL: [EntityKind; 5] = [
        EntityKind::Person,
        EntityKind::Location,
        EntityKind::Org,
        EntityKind::Email,
        EntityKind::Phone,
    ];

    pub fn placeholder(self) -> &'static str {
        match self {
            EntityKind::Person => "<PERSON>",
            EntityKind::Location => "<LOCATION>",
            EntityKind::Org => "<ORG>",
            EntityKind::Email => "<EMAIL>",
            EntityKind::Phone => "<PHONE>",
        }
    }

    /// Accepts NER-style labels; GPE and LOC fold into `Location`.
    pub fn from_label(label: &str) -> Option<Self> {
        match label.trim().to_ascii_uppercase().as_str() {
            "PERSON" | "PER" => Some(EntityKind::Person),
            "LOCATION" | "GPE" | "LOC" => Some(EntityKind::Location),
            "ORG" | "ORGANIZATION" => Some(EntityKind::Org),
            "EMAIL" => Some(EntityKind::Email),
            "PHONE" => Some(EntityKind::Phone),
            _ => None,
        }
    }
}

/// A detected entity in character (unicode scalar) offsets, end exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub kind: EntityKind,
    pub detector: String,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, kind: EntityKind, detector: impl Into<String>) -> Self {
        Self {
            start,
            end,
            kind,
            detector: detector.into(),
        }
    }

    fn len(&self) -> usize {
        self.end - self.start
    }

    fn is_regex(&self) -> bool {
        self.detector == REGEX_DETECTOR
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RedactError {
    #[error("entity detector unavailable: {0}")]
    DetectorUnavailable(String),
    #[error("invalid span: {0}")]
    InvalidSpan(String),
}

/// Named-entity capability for PERSON / LOCATION / ORG.
pub trait EntityDetector: Send + Sync {
    fn name(&self) -> &str;
    fn detect(&self, text: &str) -> Result<Vec<EntitySpan>, RedactError>;
}

impl<D: EntityDetector + ?Sized> EntityDetector for Box<D> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn detect(&self, text: &str) -> Result<Vec<EntitySpan>, RedactError> {
        (**self).detect(text)
    }
}

impl<D: EntityDetector + ?Sized> EntityDetector for std::sync::Arc<D> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn detect(&self, text: &str) -> Result<Vec<EntitySpan>, RedactError> {
        (**self).detect(text)
    }
}

/// Byte offset of every char start, plus `text.len()` as a sentinel.
struct CharIndex(Vec<usize>);

impl CharIndex {
    fn new(text: &str) -> Self {
        let mut starts: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        starts.push(text.len());
        Self(starts)
    }

    fn char_len(&self) -> usize {
        self.0.len() - 1
    }

    fn to_char(&self, byte: usize) -> usize {
        self.0.binary_search(&byte).expect("regex offsets fall on char boundaries")
    }

    fn to_byte(&self, ch: usize) -> usize {
        self.0[ch]
    }
}

fn regex_spans(text: &str, index: &CharIndex) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    for (re, kind) in [(email_regex(), EntityKind::Email), (phone_regex(), EntityKind::Phone)] {
        spans.extend(
            re.find_iter(text)
                .map(|m| EntitySpan::new(index.to_char(m.start()), index.to_char(m.end()), kind, REGEX_DETECTOR)),
        );
    }
    spans
}

/// Detects entities and merges overlapping spans.
///
/// Overlapping spans collapse into their union. The kind of a merged span is
/// taken from the longest regex span in the group, or from the longest
/// detector span when no regex matched. Touching spans stay separate.
/// Detector spans overlapping an existing placeholder are discarded so that
/// redaction is idempotent.
pub fn detect_entities(text: &str, detector: &dyn EntityDetector) -> Result<Vec<EntitySpan>, RedactError> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let index = CharIndex::new(text);
    let protected: Vec<(usize, usize)> = placeholder_regex()
        .find_iter(text)
        .map(|m| (index.to_char(m.start()), index.to_char(m.end())))
        .collect();

    let mut spans = regex_spans(text, &index);
    for span in detector.detect(text)? {
        if span.start >= span.end || span.end > index.char_len() {
            return Err(RedactError::DetectorUnavailable(format!(
                "{} returned span {}..{} outside text of {} chars",
                detector.name(),
                span.start,
                span.end,
                index.char_len()
            )));
        }
        if protected.iter().any(|&(s, e)| span.start < e && s < span.end) {
            continue;
        }
        spans.push(span);
    }
    Ok(merge_spans(spans))
}

fn merge_spans(mut spans: Vec<EntitySpan>) -> Vec<EntitySpan> {
    spans.sort_by(|a, b| a.start.cmp(&b.start).then(b.end.cmp(&a.end)));
    let mut merged = Vec::new();
    let mut group: Vec<EntitySpan> = Vec::new();
    let mut group_end = 0;
    for span in spans {
        if !group.is_empty() && span.start >= group_end {
            merged.push(collapse(std::mem::take(&mut group)));
        }
        group_end = if group.is_empty() { span.end } else { group_end.max(span.end) };
        group.push(span);
    }
    if !group.is_empty() {
        merged.push(collapse(group));
    }
    merged
}

fn collapse(group: Vec<EntitySpan>) -> EntitySpan {
    let start = group.iter().map(|s| s.start).min().expect("non-empty group");
    let end = group.iter().map(|s| s.end).max().expect("non-empty group");
    let has_regex = group.iter().any(EntitySpan::is_regex);
    let winner = group
        .iter()
        .filter(|s| s.is_regex() == has_regex)
        .min_by(|a, b| {
            b.len()
                .cmp(&a.len())
                .then(a.start.cmp(&b.start))
                .then(a.kind.cmp(&b.kind))
        })
        .expect("non-empty group");
    EntitySpan::new(start, end, winner.kind, winner.detector.clone())
}

/// Replaces each span with its kind's placeholder. Spans must be in bounds
/// and pairwise non-overlapping; they need not be sorted.
pub fn redact(text: &str, spans: &[EntitySpan]) -> Result<String, RedactError> {
    let index = CharIndex::new(text);
    let mut ordered: Vec<&EntitySpan> = spans.iter().collect();
    ordered.sort_by_key(|s| (s.start, s.end));
    for s in &ordered {
        if s.start >= s.end || s.end > index.char_len() {
            return Err(RedactError::InvalidSpan(format!(
                "{}..{} against {} chars",
                s.start,
                s.end,
                index.char_len()
            )));
        }
    }
    for pair in ordered.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(RedactError::InvalidSpan(format!(
                "{}..{} overlaps {}..{}",
                pair[0].start, pair[0].end, pair[1].start, pair[1].end
            )));
        }
    }
    let mut out = text.to_string();
    for s in ordered.iter().rev() {
        out.replace_range(index.to_byte(s.start)..index.to_byte(s.end), s.kind.placeholder());
    }
    Ok(out)
}

/// Per-kind replacement counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedactionAudit {
    pub counts: BTreeMap<EntityKind, usize>,
    pub messages_redacted: usize,
}

impl Default for RedactionAudit {
    fn default() -> Self {
        Self {
            counts: EntityKind::ALL.iter().map(|&k| (k, 0)).collect(),
            messages_redacted: 0,
        }
    }
}

impl RedactionAudit {
    pub fn count(&self, kind: EntityKind) -> usize {
        self.counts.get(&kind).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

/// A corpus whose every message has been through [`redact`]. Only
/// [`redact_corpus`] can build one, which is what lets provider-facing code
/// accept it as proof of redaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RedactedCorpus {
    participant_id: String,
    conversations: Vec<Conversation>,
    dropped_count: usize,
    truncated_count: usize,
    audit: RedactionAudit,
}

impl RedactedCorpus {
    pub fn participant_id(&self) -> &str {
        &self.participant_id
    }

    pub fn conversations(&self) -> &[Conversation] {
        &self.conversations
    }

    pub fn dropped_count(&self) -> usize {
        self.dropped_count
    }

    pub fn truncated_count(&self) -> usize {
        self.truncated_count
    }

    pub fn audit(&self) -> &RedactionAudit {
        &self.audit
    }

    pub fn message_count(&self) -> usize {
        self.conversations.iter().map(|c| c.messages.len()).sum()
    }

    /// Re-runs redaction over already redacted text. Exposed so callers can
    /// check idempotence; the result is again a `RedactedCorpus`.
    pub fn as_filtered(&self) -> FilteredCorpus {
        FilteredCorpus {
            participant_id: self.participant_id.clone(),
            conversations: self.conversations.clone(),
            dropped_count: self.dropped_count,
            truncated_count: self.truncated_count,
        }
    }
}

/// Redacts every message. Any detector failure aborts the whole corpus.
pub fn redact_corpus(
    corpus: &FilteredCorpus,
    detector: &dyn EntityDetector,
    exec: Execution,
) -> Result<RedactedCorpus, RedactError> {
    let texts: Vec<&str> = corpus
        .conversations
        .iter()
        .flat_map(|c| c.messages.iter().map(|m| m.text.as_str()))
        .collect();

    let results = exec.map(&texts, |text| {
        let spans = detect_entities(text, detector)?;
        let redacted = redact(text, &spans)?;
        Ok::<_, RedactError>((redacted, spans))
    });

    let mut audit = RedactionAudit::default();
    let mut redacted_iter = Vec::with_capacity(results.len());
    for r in results {
        let (text, spans) = r?;
        if !spans.is_empty() {
            audit.messages_redacted += 1;
        }
        for s in &spans {
            *audit.counts.entry(s.kind).or_default() += 1;
        }
        redacted_iter.push(text);
    }

    let mut texts = redacted_iter.into_iter();
    let conversations = corpus
        .conversations
        .iter()
        .map(|c| {
            let mut c = c.clone();
            for m in &mut c.messages {
                m.text = texts.next().expect("one result per message");
            }
            c
        })
        .collect();

    Ok(RedactedCorpus {
        participant_id: corpus.participant_id.clone(),
        conversations,
        dropped_count: corpus.dropped_count,
        truncated_count: corpus.truncated_count,
        audit,
    })
}
