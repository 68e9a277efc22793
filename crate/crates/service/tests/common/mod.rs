#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::{TimeZone, Utc};
use tempfile::TempDir;

use wrapped_core::ingest::{Conversation, Message, NeutralArchive, Role, Source, Timestamp};
use wrapped_core::providers::{Generator, ProviderError, ScriptedGenerator};
use wrapped_service::clock::ManualClock;
use wrapped_service::service::StatusResponse;
use wrapped_service::session::SessionState;
use wrapped_service::{Config, Service};

pub const TOPICS: [(&str, [&str; 4]); 6] = [
    (
        "cooking",
        [
            "How long should I roast a whole chicken with lemon and garlic?",
            "Suggest a vegetarian lasagna recipe that serves six people",
            "What can I cook with leftover rice, spinach and eggs tonight?",
            "Convert this bread recipe from cups to grams for baking",
        ],
    ),
    (
        "programming",
        [
            "Why does my Python script raise a KeyError when parsing JSON?",
            "Explain the difference between a process and a thread in Rust",
            "Refactor this JavaScript function to use async and await",
            "How do I write a unit test for a function that reads files?",
        ],
    ),
    (
        "travel",
        [
            "Plan a four day itinerary for a first trip to Lisbon in spring",
            "Which documents do I need for a train journey across borders?",
            "Compare budget hostels and guesthouses near the old harbour",
            "What should I pack for a hiking holiday in rainy weather?",
        ],
    ),
    (
        "fitness",
        [
            "Create a beginner running plan to finish a 10k in eight weeks",
            "How much protein should I eat after strength training sessions?",
            "Suggest stretching exercises for lower back pain after desk work",
            "Is cycling or swimming better for knee friendly cardio workouts?",
        ],
    ),
    (
        "finance",
        [
            "Help me build a monthly budget spreadsheet for rent and groceries",
            "Explain how index funds differ from actively managed funds",
            "Should I pay off my student loan early or invest the savings?",
            "How do I estimate quarterly taxes as a freelance designer?",
        ],
    ),
    (
        "writing",
        [
            "Edit this cover letter so it sounds confident but not arrogant",
            "Give feedback on the opening paragraph of my short story draft",
            "Rewrite these meeting notes as a clear summary email for the team",
            "Suggest a stronger title for my essay about urban gardening",
        ],
    ),
];

pub const NAMES: [&str; 5] = ["Alice", "Benjamin", "Catherine", "Carlos", "Amelia"];

/// Known PII strings planted in participant `index`'s messages.
pub fn seeded_pii(index: usize) -> Vec<String> {
    vec![
        format!("alice.moreau{index}@example.com"),
        format!("617-555-01{:02}", index % 100),
        format!("{} Whitfield", NAMES[index % NAMES.len()]),
    ]
}

fn ts(day: u32, hour: u32, minute: u32) -> Timestamp {
    let base = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
    Timestamp::from_utc(base + chrono::Duration::days(i64::from(day)) + chrono::Duration::hours(i64::from(hour)) + chrono::Duration::minutes(i64::from(minute)))
}

/// A deterministic synthetic participant. Participants with different
/// indexes have different usage fingerprints.
pub fn participant(index: usize, conversations: usize) -> NeutralArchive {
    let pii = seeded_pii(index);
    let convs = (0..conversations)
        .map(|c| {
            let (topic, prompts) = TOPICS[(index + c * (index % 2 + 1)) % TOPICS.len()];
            let n = 1 + (index * 3 + c) % 4;
            let day = ((index * 37 + c * 11) % 360) as u32;
            let mut messages = Vec::new();
            for m in 0..n {
                let mut text = format!("{} (follow-up {c}.{m})", prompts[(m + c) % 4]);
                if c == 0 && m == 0 {
                    text = format!("{text} Please email {} or call {} for {}.", pii[0], pii[1], pii[2]);
                }
                let hour = ((7 + index * 5 + c * 3 + m) % 24) as u32;
                messages.push(Message {
                    id: format!("c{c}-u{m}"),
                    role: Role::User,
                    text,
                    timestamp: Some(ts(day, hour, (m * 7 % 60) as u32)),
                });
                messages.push(Message {
                    id: format!("c{c}-a{m}"),
                    role: Role::Assistant,
                    text: format!("Here is a detailed answer about {topic}, part {m}."),
                    timestamp: Some(ts(day, hour, (m * 7 % 60 + 1) as u32)),
                });
            }
            Conversation {
                id: format!("conv-{index}-{c}"),
                title: Some(format!("{topic} chat {c}")),
                source: Source::Neutral,
                created_at: Some(ts(day, 0, 0)),
                messages,
            }
        })
        .collect();
    NeutralArchive {
        participant_id: format!("participant-{index:02}"),
        conversations: convs,
    }
}

pub fn archive_bytes(archive: &NeutralArchive) -> Vec<u8> {
    archive.to_json().into_bytes()
}

/// Every user message text in the archive.
pub fn user_texts(archive: &NeutralArchive) -> Vec<String> {
    archive
        .conversations
        .iter()
        .flat_map(|c| c.user_messages().map(|m| m.text.clone()))
        .collect()
}

/// Files under `root` containing any needle, with the needle found.
pub fn scan(root: &Path, needles: &[String]) -> Vec<(PathBuf, String)> {
    let mut hits = Vec::new();
    for entry in walk(root) {
        let bytes = std::fs::read(&entry).unwrap_or_default();
        let text = String::from_utf8_lossy(&bytes);
        for n in needles {
            if text.contains(n.as_str()) {
                hits.push((entry.clone(), n.clone()));
            }
        }
    }
    hits
}

pub fn walk(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

pub fn unreachable_generator() -> Arc<dyn Generator> {
    Arc::new(ScriptedGenerator::new(|_, _| Err(ProviderError::ProviderUnreachable("connection refused".into()))))
}

pub struct Harness {
    pub dir: TempDir,
    pub clock: ManualClock,
    pub svc: Arc<Service>,
}

pub fn start() -> chrono::DateTime<Utc> {
    Utc.with_ymd_and_hms(2026, 2, 1, 9, 0, 0).unwrap()
}

pub fn test_config(store: &Path) -> Config {
    let mut cfg = Config::default();
    cfg.server.store_dir = store.to_path_buf();
    cfg.providers.hash_dim = 64;
    cfg
}

pub fn harness_with(generator: Option<Arc<dyn Generator>>, tweak: impl FnOnce(&mut Config)) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = test_config(&dir.path().join("store"));
    tweak(&mut cfg);
    let mut providers = cfg.build_providers().unwrap();
    if let Some(g) = generator {
        providers.generator = g;
    }
    let clock = ManualClock::new(start());
    let svc = Service::new(cfg, providers, Arc::new(clock.clone())).unwrap();
    Harness { dir, clock, svc }
}

pub fn harness() -> Harness {
    harness_with(None, |_| {})
}

impl Harness {
    pub fn store_root(&self) -> PathBuf {
        self.svc.store().root().to_path_buf()
    }

    pub fn upload(&self, archive: &NeutralArchive, addr: &str) -> String {
        self.svc
            .upload(&archive_bytes(archive), Some("neutral"), None, addr)
            .expect("upload accepted")
            .session_id
    }
}

/// Polls until the session leaves `processing`.
pub async fn wait_terminal(svc: &Service, token: &str) -> StatusResponse {
    for _ in 0..2000 {
        let status = svc.status(token).expect("status");
        if status.state != SessionState::Processing {
            return status;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    panic!("session still processing after 10 s");
}
