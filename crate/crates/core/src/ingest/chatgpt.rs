//! ChatGPT `conversations.json`: each conversation is a node mapping where a
//! node carries an optional message and a parent link. Regenerations create
//! branches; only the chain ending at `current_node` is the visible history.

use std::collections::{HashMap, HashSet};

use serde::Deserialize;
use serde_json::Value;

use super::{Conversation, IngestError, Message, ParsedArchive, Role, SkippedConversation, Source, Timestamp};

#[derive(Debug, Deserialize)]
struct RawConversation {
    id: Option<String>,
    conversation_id: Option<String>,
    title: Option<String>,
    create_time: Option<f64>,
    current_node: Option<String>,
    mapping: HashMap<String, RawNode>,
}

#[derive(Debug, Deserialize)]
struct RawNode {
    message: Option<RawMessage>,
    parent: Option<String>,
    #[serde(default)]
    children: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct RawMessage {
    id: Option<String>,
    author: RawAuthor,
    create_time: Option<f64>,
    content: Option<RawContent>,
}

#[derive(Debug, Deserialize)]
struct RawAuthor {
    role: String,
}

#[derive(Debug, Deserialize)]
struct RawContent {
    #[serde(default)]
    parts: Vec<Value>,
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
        let id_hint = item
            .get("id")
            .or_else(|| item.get("conversation_id"))
            .and_then(Value::as_str)
            .map(str::to_string);
        match RawConversation::deserialize(item)
            .map_err(|e| e.to_string())
            .and_then(|raw| convert(raw, index))
        {
            Ok(conv) => conversations.push(conv),
            Err(reason) => skipped.push(SkippedConversation {
                index,
                id: id_hint,
                reason,
            }),
        }
    }
    Ok(ParsedArchive {
        participant_id: None,
        conversations,
        skipped,
    })
}

fn convert(raw: RawConversation, index: usize) -> Result<Conversation, String> {
    let id = raw
        .id
        .clone()
        .or_else(|| raw.conversation_id.clone())
        .unwrap_or_else(|| format!("chatgpt-{index}"));
    let chain = linearize(&raw.mapping, raw.current_node.as_deref())?;
    let messages = chain
        .into_iter()
        .filter_map(|node_id| {
            let node = &raw.mapping[node_id];
            node.message.as_ref().map(|m| Message {
                id: m.id.clone().unwrap_or_else(|| node_id.to_string()),
                role: Role::from_label(&m.author.role),
                text: extract_text(m.content.as_ref()),
                timestamp: m.create_time.and_then(Timestamp::from_epoch_secs),
            })
        })
        .collect();
    Ok(Conversation {
        id,
        title: raw.title.filter(|t| !t.is_empty()),
        source: Source::ChatgptExport,
        created_at: raw.create_time.and_then(Timestamp::from_epoch_secs),
        messages,
    })
}

/// Node ids from root to leaf along the visible branch.
fn linearize<'a>(mapping: &'a HashMap<String, RawNode>, current: Option<&'a str>) -> Result<Vec<&'a str>, String> {
    let leaf = match current {
        Some(id) if mapping.contains_key(id) => id,
        Some(id) => return Err(format!("current_node {id} not in mapping")),
        None => default_leaf(mapping)?,
    };
    let mut chain = Vec::new();
    let mut seen = HashSet::new();
    let mut cursor = Some(leaf);
    while let Some(id) = cursor {
        if !seen.insert(id) {
            return Err(format!("parent cycle at node {id}"));
        }
        chain.push(id);
        cursor = match mapping.get(id).and_then(|n| n.parent.as_deref()) {
            Some(parent) if mapping.contains_key(parent) => Some(parent),
            Some(parent) => return Err(format!("dangling parent {parent}")),
            None => None,
        };
    }
    chain.reverse();
    Ok(chain)
}

/// Without `current_node`, follow the most recent child from the root.
fn default_leaf(mapping: &HashMap<String, RawNode>) -> Result<&str, String> {
    let mut roots: Vec<&str> = mapping
        .iter()
        .filter(|(_, n)| n.parent.is_none())
        .map(|(id, _)| id.as_str())
        .collect();
    roots.sort();
    let mut cursor = *roots.first().ok_or("no root node")?;
    let mut steps = 0;
    while let Some(next) = mapping[cursor].children.last() {
        if !mapping.contains_key(next) || steps > mapping.len() {
            break;
        }
        cursor = next;
        steps += 1;
    }
    Ok(cursor)
}

fn extract_text(content: Option<&RawContent>) -> String {
    let Some(content) = content else {
        return String::new();
    };
    let parts: Vec<&str> = content.parts.iter().filter_map(Value::as_str).collect();
    if parts.is_empty() {
        content.text.clone().unwrap_or_default()
    } else {
        parts.join("\n")
    }
}
