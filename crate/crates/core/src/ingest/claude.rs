//! Claude `conversations.json`: a flat, chronological message list per
//! conversation with `human`/`assistant` senders.

use serde::Deserialize;
use serde_json::Value;

use super::{Conversation, IngestError, Message, ParsedArchive, Role, SkippedConversation, Source, Timestamp};

#[derive(Debug, Deserialize)]
struct RawConversation {
    uuid: Option<String>,
    name: Option<String>,
    created_at: Option<String>,
    chat_messages: Vec<RawMessage>,
}

#[derive(Debug, Deserialize)]
struct RawMessage {
    uuid: Option<String>,
    sender: String,
    #[serde(default)]
    text: Option<String>,
    created_at: Option<String>,
    #[serde(default)]
    content: Vec<RawBlock>,
}

#[derive(Debug, Deserialize)]
struct RawBlock {
    #[serde(rename = "type")]
    kind: Option<String>,
    text: Option<String>,
}

pub(super) fn parse(json: &[u8]) -> Result<ParsedArchive, IngestError> {
    let top: Value = serde_json::from_slice(json)
        .map_err(|e| IngestError::MalformedArchive(format!("not JSON: {e}")))?;
    let items = top
        .as_array()
        .ok_or_else(|| IngestError::MalformedArchive("expected a list of conversations".into()))?;

    let mut conversations = Vec::with_capacity(items.len());
    let mut skipped = Vec::new();
    for (index, item) in items.iter().enumerate() {
        match RawConversation::deserialize(item) {
            Ok(raw) => conversations.push(convert(raw, index)),
            Err(e) => skipped.push(SkippedConversation {
                index,
                id: item.get("uuid").and_then(Value::as_str).map(str::to_string),
                reason: e.to_string(),
            }),
        }
    }
    Ok(ParsedArchive {
        participant_id: None,
        conversations,
        skipped,
    })
}

fn convert(raw: RawConversation, index: usize) -> Conversation {
    let id = raw.uuid.unwrap_or_else(|| format!("claude-{index}"));
    let messages = raw
        .chat_messages
        .into_iter()
        .enumerate()
        .map(|(i, m)| {
            let text = match m.text.filter(|t| !t.is_empty()) {
                Some(t) => t,
                None => m
                    .content
                    .iter()
                    .filter(|b| b.kind.as_deref().unwrap_or("text") == "text")
                    .filter_map(|b| b.text.as_deref())
                    .collect::<Vec<_>>()
                    .join("\n"),
            };
            Message {
                id: m.uuid.unwrap_or_else(|| format!("{id}-{i}")),
                role: Role::from_label(&m.sender),
                text,
                timestamp: m.created_at.as_deref().and_then(Timestamp::parse_rfc3339),
            }
        })
        .collect();
    Conversation {
        id,
        title: raw.name.filter(|t| !t.is_empty()),
        source: Source::ClaudeExport,
        created_at: raw.created_at.as_deref().and_then(Timestamp::parse_rfc3339),
        messages,
    }
}
