use super::{Conversation, FilterConfig, FilteredCorpus, Role};

const FENCE: &str = "```";

/// Removes fenced code regions.
///
/// A region opens at any triple backtick and runs through the end of the
/// first later line that starts with a triple backtick (newline included).
/// An unclosed fence removes everything to the end of the text. Text outside
/// regions is returned byte-for-byte.
pub fn strip_code_blocks(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find(FENCE) {
        out.push_str(&rest[..open]);
        let region = &rest[open..];
        match closing_line_end(region) {
            Some(end) => rest = &region[end..],
            None => return out,
        }
    }
    out.push_str(rest);
    out
}

/// Byte offset just past the closing fence line, relative to the region start.
fn closing_line_end(region: &str) -> Option<usize> {
    let mut line_start = region.find('\n')? + 1;
    while line_start < region.len() {
        let line_len = region[line_start..].find('\n');
        if region[line_start..].starts_with(FENCE) {
            return Some(match line_len {
                Some(n) => line_start + n + 1,
                None => region.len(),
            });
        }
        line_start += line_len? + 1;
    }
    None
}

/// The first `max` unicode scalar values of `text`.
pub fn truncate_chars(text: &str, max: usize) -> &str {
    match text.char_indices().nth(max) {
        Some((byte, _)) => &text[..byte],
        None => text,
    }
}

/// Applies the preprocessing rules: user messages of the configured year,
/// code fences stripped, too-short messages dropped, long ones truncated.
/// Messages without a timestamp cannot be placed in a year and are dropped.
pub fn filter_corpus(participant_id: &str, conversations: &[Conversation], cfg: &FilterConfig) -> FilteredCorpus {
    let mut dropped = 0;
    let mut truncated = 0;
    let mut kept_conversations = Vec::new();

    for conv in conversations {
        let mut kept = Vec::new();
        for msg in conv.user_messages() {
            let in_year = msg.timestamp.is_some_and(|t| t.local_year() == cfg.year);
            if !in_year {
                dropped += 1;
                continue;
            }
            let text = if cfg.strip_code {
                strip_code_blocks(&msg.text)
            } else {
                msg.text.clone()
            };
            let len = text.chars().count();
            if len < cfg.min_chars {
                dropped += 1;
                continue;
            }
            let text = if len > cfg.truncate_chars {
                truncated += 1;
                truncate_chars(&text, cfg.truncate_chars).to_string()
            } else {
                text
            };
            let mut msg = msg.clone();
            msg.text = text;
            kept.push(msg);
        }
        if !kept.is_empty() {
            kept_conversations.push(Conversation {
                messages: kept,
                ..shell(conv)
            });
        }
    }

    FilteredCorpus {
        participant_id: participant_id.to_string(),
        conversations: kept_conversations,
        dropped_count: dropped,
        truncated_count: truncated,
    }
}

/// User messages of one calendar year (local offset when known), with no
/// length filtering. Conversations left empty are removed. This is the raw
/// usage view that telemetry is computed from.
pub fn select_year(conversations: &[Conversation], year: i32) -> Vec<Conversation> {
    conversations
        .iter()
        .filter_map(|conv| {
            let messages: Vec<_> = conv
                .messages
                .iter()
                .filter(|m| m.role == Role::User)
                .filter(|m| m.timestamp.is_some_and(|t| t.local_year() == year))
                .cloned()
                .collect();
            (!messages.is_empty()).then(|| Conversation {
                messages,
                ..shell(conv)
            })
        })
        .collect()
}

fn shell(conv: &Conversation) -> Conversation {
    Conversation {
        id: conv.id.clone(),
        title: conv.title.clone(),
        source: conv.source,
        created_at: conv.created_at,
        messages: Vec::new(),
    }
}
