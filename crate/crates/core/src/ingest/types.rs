use std::fmt;

use chrono::{DateTime, Datelike, FixedOffset, NaiveDate, SecondsFormat, TimeZone, Timelike, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Who authored a message. Unknown roles in vendor archives map to `Tool`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    User,
    Assistant,
    System,
    Tool,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::System => "system",
            Role::Tool => "tool",
        }
    }

    /// Lenient mapping used for every source format.
    pub fn from_label(label: &str) -> Self {
        match label.trim().to_ascii_lowercase().as_str() {
            "user" | "human" => Role::User,
            "assistant" | "model" => Role::Assistant,
            "system" => Role::System,
            _ => Role::Tool,
        }
    }
}

impl Serialize for Role {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Role {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let label = String::deserialize(d)?;
        Ok(Role::from_label(&label))
    }
}

/// Where a conversation came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    ChatgptExport,
    ClaudeExport,
    Neutral,
}

impl Source {
    pub fn parse_flag(flag: &str) -> Option<Self> {
        match flag.trim().to_ascii_lowercase().as_str() {
            "chatgpt" | "chatgpt_export" | "openai" => Some(Source::ChatgptExport),
            "claude" | "claude_export" | "anthropic" => Some(Source::ClaudeExport),
            "neutral" => Some(Source::Neutral),
            _ => None,
        }
    }
}

/// A UTC instant at seconds precision, remembering the offset the source
/// recorded it in (if any). Serialized as RFC 3339.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Timestamp {
    utc: DateTime<Utc>,
    offset_minutes: Option<i32>,
}

impl PartialOrd for Timestamp {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Timestamp {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.utc
            .cmp(&other.utc)
            .then(self.offset_minutes.cmp(&other.offset_minutes))
    }
}

impl Timestamp {
    pub fn from_utc(utc: DateTime<Utc>) -> Self {
        Self {
            utc: truncate_secs(utc),
            offset_minutes: None,
        }
    }

    pub fn with_offset(utc: DateTime<Utc>, offset_minutes: i32) -> Option<Self> {
        FixedOffset::east_opt(offset_minutes * 60)?;
        Some(Self {
            utc: truncate_secs(utc),
            offset_minutes: Some(offset_minutes),
        })
    }

    pub fn from_epoch_secs(secs: f64) -> Option<Self> {
        if !secs.is_finite() {
            return None;
        }
        Utc.timestamp_opt(secs.floor() as i64, 0)
            .single()
            .map(Self::from_utc)
    }

    /// Parses RFC 3339. A trailing `Z` means "no recorded offset"; an explicit
    /// `+hh:mm` is kept as the original offset.
    pub fn parse_rfc3339(raw: &str) -> Option<Self> {
        let raw = raw.trim();
        let parsed = DateTime::parse_from_rfc3339(raw).ok()?;
        let utc = parsed.with_timezone(&Utc);
        if raw.ends_with('Z') || raw.ends_with('z') {
            Some(Self::from_utc(utc))
        } else {
            Self::with_offset(utc, parsed.offset().local_minus_utc() / 60)
        }
    }

    pub fn utc(&self) -> DateTime<Utc> {
        self.utc
    }

    pub fn offset_minutes(&self) -> Option<i32> {
        self.offset_minutes
    }

    /// Wall-clock time in the original offset, or UTC when none was recorded.
    pub fn local(&self) -> DateTime<FixedOffset> {
        let offset = FixedOffset::east_opt(self.offset_minutes.unwrap_or(0) * 60)
            .expect("offset validated at construction");
        self.utc.with_timezone(&offset)
    }

    pub fn local_year(&self) -> i32 {
        self.local().year()
    }

    pub fn local_hour(&self) -> u32 {
        self.local().hour()
    }

    pub fn local_date(&self) -> NaiveDate {
        self.local().date_naive()
    }

    pub fn to_rfc3339(&self) -> String {
        match self.offset_minutes {
            None => self.utc.to_rfc3339_opts(SecondsFormat::Secs, true),
            Some(_) => self.local().to_rfc3339_opts(SecondsFormat::Secs, false),
        }
    }
}

fn truncate_secs(utc: DateTime<Utc>) -> DateTime<Utc> {
    Utc.timestamp_opt(utc.timestamp(), 0).single().unwrap_or(utc)
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_rfc3339())
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_rfc3339())
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Timestamp::parse_rfc3339(&raw)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid RFC 3339 timestamp: {raw}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub id: String,
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub source: Source,
    /// Conversation-level time; messages without their own timestamp inherit it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<Timestamp>,
    pub messages: Vec<Message>,
}

impl Conversation {
    pub fn user_messages(&self) -> impl Iterator<Item = &Message> {
        self.messages.iter().filter(|m| m.role == Role::User)
    }
}

/// Preprocessing knobs. Defaults keep messages of 10..=400 characters with
/// code fences removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub year: i32,
    #[serde(default = "FilterConfig::default_min_chars")]
    pub min_chars: usize,
    #[serde(default = "FilterConfig::default_truncate_chars")]
    pub truncate_chars: usize,
    #[serde(default = "FilterConfig::default_strip_code")]
    pub strip_code: bool,
}

impl FilterConfig {
    fn default_min_chars() -> usize {
        10
    }
    fn default_truncate_chars() -> usize {
        400
    }
    fn default_strip_code() -> bool {
        true
    }

    pub fn for_year(year: i32) -> Self {
        Self {
            year,
            min_chars: Self::default_min_chars(),
            truncate_chars: Self::default_truncate_chars(),
            strip_code: Self::default_strip_code(),
        }
    }

    pub fn validate(&self) -> Result<(), super::IngestError> {
        if self.min_chars == 0 || self.min_chars > self.truncate_chars {
            return Err(super::IngestError::InvalidConfig(format!(
                "require 0 < min_chars ({}) <= truncate_chars ({})",
                self.min_chars, self.truncate_chars
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilteredCorpus {
    pub participant_id: String,
    pub conversations: Vec<Conversation>,
    pub dropped_count: usize,
    pub truncated_count: usize,
}

impl FilteredCorpus {
    pub fn message_count(&self) -> usize {
        self.conversations.iter().map(|c| c.messages.len()).sum()
    }
}
