//! Archive parsing and preprocessing.
//!
//! Three input shapes are understood: the ChatGPT export (a node graph per
//! conversation), the Claude export (flat message lists) and the neutral
//! schema, which is simply the serde form of [`NeutralArchive`]. Any of them
//! may arrive wrapped in a zip file.

mod chatgpt;
mod claude;
mod filter;
mod types;

use std::io::{Cursor, Read};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

pub use filter::{filter_corpus, select_year, strip_code_blocks, truncate_chars};
pub use types::{Conversation, FilterConfig, FilteredCorpus, Message, Role, Source, Timestamp};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IngestError {
    #[error("malformed archive: {0}")]
    MalformedArchive(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("archive contains no conversations")]
    EmptyArchive,
    #[error("invalid filter configuration: {0}")]
    InvalidConfig(String),
}

/// The neutral, vendor-independent file format: one file per participant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeutralArchive {
    pub participant_id: String,
    pub conversations: Vec<Conversation>,
}

impl NeutralArchive {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("neutral archive serializes")
    }
}

/// A conversation that could not be read and was left out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedConversation {
    pub index: usize,
    pub id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedArchive {
    /// Present only for the neutral schema.
    pub participant_id: Option<String>,
    pub conversations: Vec<Conversation>,
    pub skipped: Vec<SkippedConversation>,
}

/// Parses an archive in the declared format.
pub fn parse_archive(bytes: &[u8], format: Source) -> Result<Vec<Conversation>, IngestError> {
    parse_archive_report(bytes, format).map(|p| p.conversations)
}

/// Like [`parse_archive`], also returning the per-conversation skip report.
pub fn parse_archive_report(bytes: &[u8], format: Source) -> Result<ParsedArchive, IngestError> {
    let json = unwrap_container(bytes, format)?;
    let mut parsed = match format {
        Source::Neutral => parse_neutral(&json)?,
        Source::ChatgptExport => chatgpt::parse(&json)?,
        Source::ClaudeExport => claude::parse(&json)?,
    };
    if parsed.conversations.is_empty() {
        if parsed.skipped.is_empty() {
            return Err(IngestError::EmptyArchive);
        }
        return Err(IngestError::MalformedArchive(format!(
            "all {} conversations unreadable (first: {})",
            parsed.skipped.len(),
            parsed.skipped[0].reason
        )));
    }
    for conv in &mut parsed.conversations {
        normalize_conversation(conv);
    }
    for skip in &parsed.skipped {
        log::warn!("skipped conversation #{}: {}", skip.index, skip.reason);
    }
    Ok(parsed)
}

/// Resolves the archive format: an explicit flag wins, then the filename,
/// then the content itself.
pub fn detect_format(
    declared: Option<&str>,
    filename: Option<&str>,
    bytes: &[u8],
) -> Result<Source, IngestError> {
    if let Some(flag) = declared {
        if flag != "auto" {
            return Source::parse_flag(flag)
                .ok_or_else(|| IngestError::UnsupportedFormat(flag.to_string()));
        }
    }
    if let Some(name) = filename {
        let name = name.to_ascii_lowercase();
        for (needle, source) in [
            ("neutral", Source::Neutral),
            ("chatgpt", Source::ChatgptExport),
            ("openai", Source::ChatgptExport),
            ("claude", Source::ClaudeExport),
        ] {
            if name.contains(needle) {
                return Ok(source);
            }
        }
    }
    sniff_format(bytes)
}

fn sniff_format(bytes: &[u8]) -> Result<Source, IngestError> {
    if bytes.is_empty() {
        return Err(IngestError::MalformedArchive("zero-byte input".into()));
    }
    let json = unwrap_container(bytes, Source::Neutral)?;
    let value: serde_json::Value = serde_json::from_slice(&json)
        .map_err(|e| IngestError::MalformedArchive(format!("not JSON: {e}")))?;
    if value.get("participant_id").is_some() && value.get("conversations").is_some() {
        return Ok(Source::Neutral);
    }
    let first = value.as_array().and_then(|a| a.first());
    match first {
        Some(c) if c.get("mapping").is_some() => Ok(Source::ChatgptExport),
        Some(c) if c.get("chat_messages").is_some() => Ok(Source::ClaudeExport),
        Some(_) => Err(IngestError::UnsupportedFormat("unrecognized conversation shape".into())),
        None if value.is_array() => Err(IngestError::EmptyArchive),
        None => Err(IngestError::UnsupportedFormat("unrecognized top-level shape".into())),
    }
}

const ZIP_MAGIC: &[u8] = b"PK\x03\x04";
const EMPTY_ZIP_MAGIC: &[u8] = b"PK\x05\x06";

fn unwrap_container(bytes: &[u8], format: Source) -> Result<Vec<u8>, IngestError> {
    if bytes.is_empty() {
        return Err(IngestError::MalformedArchive("zero-byte input".into()));
    }
    if !(bytes.starts_with(ZIP_MAGIC) || bytes.starts_with(EMPTY_ZIP_MAGIC)) {
        return Ok(bytes.to_vec());
    }
    let mut zip = zip::ZipArchive::new(Cursor::new(bytes))
        .map_err(|e| IngestError::MalformedArchive(format!("unreadable zip: {e}")))?;
    let names: Vec<String> = zip.file_names().map(str::to_string).collect();
    let preferred = match format {
        Source::Neutral => None,
        Source::ChatgptExport | Source::ClaudeExport => names
            .iter()
            .find(|n| n.rsplit('/').next() == Some("conversations.json")),
    };
    let mut json_names: Vec<&String> = names.iter().filter(|n| n.ends_with(".json")).collect();
    json_names.sort();
    let entry = preferred
        .or_else(|| json_names.first().copied())
        .ok_or_else(|| IngestError::MalformedArchive("zip holds no .json file".into()))?
        .clone();
    let mut file = zip
        .by_name(&entry)
        .map_err(|e| IngestError::MalformedArchive(format!("zip entry {entry}: {e}")))?;
    let mut out = Vec::new();
    file.read_to_end(&mut out)
        .map_err(|e| IngestError::MalformedArchive(format!("zip entry {entry}: {e}")))?;
    Ok(out)
}

fn parse_neutral(json: &[u8]) -> Result<ParsedArchive, IngestError> {
    let archive: NeutralArchive = serde_json::from_slice(json)
        .map_err(|e| IngestError::MalformedArchive(format!("neutral schema: {e}")))?;
    Ok(ParsedArchive {
        participant_id: Some(archive.participant_id),
        conversations: archive.conversations,
        skipped: Vec::new(),
    })
}

/// NFC-normalizes text, fills missing timestamps from the conversation and
/// sorts messages by time. Messages that still lack a timestamp sort first;
/// ties keep source order.
fn normalize_conversation(conv: &mut Conversation) {
    for msg in &mut conv.messages {
        if !is_nfc(&msg.text) {
            msg.text = msg.text.nfc().collect();
        }
        if msg.timestamp.is_none() {
            msg.timestamp = conv.created_at;
        }
    }
    conv.messages.sort_by_key(|m| m.timestamp.map(|t| t.utc()));
}

fn is_nfc(text: &str) -> bool {
    matches!(
        unicode_normalization::is_nfc_quick(text.chars()),
        unicode_normalization::IsNormalized::Yes
    )
}
