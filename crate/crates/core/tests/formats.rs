use wrapped_core::ingest::{detect_format, parse_archive_report, select_year, Source};
use wrapped_core::usage::{compute_usage, TierThresholds};

// One conversation, one user turn and one reply, in each export format.
const NEUTRAL: &str = r#"{"participant_id": "p", "conversations": [{"id": "c1", "title": "Soup",
  "source": "neutral", "messages": [
    {"id": "m1", "role": "user", "text": "what can I cook with leeks", "timestamp": "2025-06-01T12:00:01Z"},
    {"id": "m2", "role": "assistant", "text": "Soup.", "timestamp": "2025-06-01T12:00:02Z"}]}]}"#;

const CLAUDE: &str = r#"[{"uuid": "c1", "name": "Soup", "created_at": "2025-06-01T12:00:00Z",
  "chat_messages": [
    {"uuid": "m1", "sender": "human", "text": "what can I cook with leeks", "created_at": "2025-06-01T12:00:01Z"},
    {"uuid": "m2", "sender": "assistant", "text": "Soup.", "created_at": "2025-06-01T12:00:02Z"}]}]"#;

const CHATGPT: &str = r#"[{"id": "c1", "title": "Soup", "create_time": 1748779200.0, "current_node": "n2",
  "mapping": {
    "root": {"id": "root", "message": null, "parent": null, "children": ["n1"]},
    "n1": {"id": "n1", "parent": "root", "children": ["n2"],
      "message": {"id": "m1", "author": {"role": "user"}, "create_time": 1748779201.0,
        "content": {"content_type": "text", "parts": ["what can I cook with leeks"]}}},
    "n2": {"id": "n2", "parent": "n1", "children": [],
      "message": {"id": "m2", "author": {"role": "assistant"}, "create_time": 1748779202.0,
        "content": {"content_type": "text", "parts": ["Soup."]}}}}}]"#;

#[test]
fn formats_are_detected_from_content() {
    assert_eq!(detect_format(None, None, NEUTRAL.as_bytes()).unwrap(), Source::Neutral);
    assert_eq!(detect_format(None, None, CLAUDE.as_bytes()).unwrap(), Source::ClaudeExport);
    assert_eq!(detect_format(None, None, CHATGPT.as_bytes()).unwrap(), Source::ChatgptExport);
    assert_eq!(detect_format(Some("claude"), None, NEUTRAL.as_bytes()).unwrap(), Source::ClaudeExport);
    assert!(detect_format(Some("myspace"), None, NEUTRAL.as_bytes()).is_err());
}

#[test]
fn every_format_yields_the_same_usage() {
    let usage: Vec<_> = [NEUTRAL, CLAUDE, CHATGPT]
        .iter()
        .map(|raw| {
            let source = detect_format(None, None, raw.as_bytes()).unwrap();
            let parsed = parse_archive_report(raw.as_bytes(), source).unwrap();
            assert!(parsed.skipped.is_empty());
            let convs = select_year(&parsed.conversations, 2025);
            let texts: Vec<&str> = convs.iter().flat_map(|c| &c.messages).map(|m| m.text.as_str()).collect();
            assert_eq!(texts, ["what can I cook with leeks"]);
            compute_usage("p", &convs, TierThresholds::default())
        })
        .collect();
    assert_eq!(usage[0], usage[1]);
    assert_eq!(usage[0], usage[2]);
    assert_eq!(usage[0].peak_hour, 12);
}
