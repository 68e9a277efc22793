use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde_json::{json, Value};

use super::{GenerationRequest, Generator, ProviderError, RetentionMode, SchemaId};

const STOPWORDS: &str = include_str!("../../assets/stopwords.txt");

fn stopwords() -> &'static std::collections::HashSet<&'static str> {
    static SET: std::sync::OnceLock<std::collections::HashSet<&'static str>> = std::sync::OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

/// The `n` most frequent content words of `text` (alphabetic, at least four
/// letters, not a stopword or placeholder name), most frequent first, ties
/// alphabetical.
pub fn extract_keywords(text: &str, n: usize) -> Vec<String> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for token in text.split(|c: char| !c.is_alphabetic()) {
        if token.chars().count() < 4 {
            continue;
        }
        let lower = token.to_lowercase();
        if stopwords().contains(lower.as_str()) {
            continue;
        }
        *counts.entry(lower).or_default() += 1;
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.into_iter().take(n).map(|(w, _)| w).collect()
}

fn title_case(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

const FALLBACK_WORDS: [&str; 5] = ["everyday", "planning", "writing", "learning", "reflection"];

/// Offline generator. Requests whose fingerprint has a registered fixture
/// replay it verbatim; anything else gets a schema-valid reply built by
/// substituting payload keywords into fixed templates.
#[derive(Default)]
pub struct MockGenerator {
    fixtures: HashMap<String, String>,
    calls: AtomicUsize,
    capture: Option<Mutex<Vec<GenerationRequest>>>,
}

impl MockGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Keeps a copy of every request for later inspection.
    pub fn with_capture(mut self) -> Self {
        self.capture = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn with_fixture(mut self, fingerprint: impl Into<String>, response: impl Into<String>) -> Self {
        self.fixtures.insert(fingerprint.into(), response.into());
        self
    }

    /// Loads `<fingerprint>.json` files from a directory.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut gen = Self::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                gen.fixtures.insert(stem.to_string(), std::fs::read_to_string(&path)?);
            }
        }
        Ok(gen)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn captured(&self) -> Vec<GenerationRequest> {
        self.capture
            .as_ref()
            .map(|c| c.lock().expect("capture lock").clone())
            .unwrap_or_default()
    }

    fn fallback(req: &GenerationRequest) -> String {
        let payload = req.payload();
        match req.response_schema {
            SchemaId::FacetProfile => match serde_json::from_str::<Value>(payload) {
                Ok(Value::Object(obj)) if obj.contains_key("profiles") => merge_profiles(&obj["profiles"]),
                _ => profile_template(payload),
            },
            SchemaId::ClusterLabel => {
                let items = string_list(payload, "items");
                json!({ "name": label_from(&items.join(" "), "Miscellaneous") }).to_string()
            }
            SchemaId::ParentProposals => {
                let labels = string_list(payload, "labels");
                let n = labels.len();
                let target = n.min(5.max(n.div_ceil(4)));
                let parents: Vec<String> = (0..target)
                    .map(|j| format!("{} and Related", labels[j * n / target]))
                    .collect();
                json!({ "parents": parents }).to_string()
            }
            SchemaId::ParentMerges => {
                let candidates = string_list(payload, "candidates");
                let mut by_name: BTreeMap<String, Vec<usize>> = BTreeMap::new();
                for (i, c) in candidates.iter().enumerate() {
                    by_name.entry(c.to_lowercase()).or_default().push(i);
                }
                let groups: Vec<Vec<usize>> = by_name.into_values().filter(|g| g.len() > 1).collect();
                json!({ "merge_groups": groups }).to_string()
            }
            SchemaId::ParentAssignments => {
                let children = string_list(payload, "children").len();
                let parents = string_list(payload, "parents").len().max(1);
                let assignments: Vec<usize> = (0..children).map(|i| i * parents / children.max(1)).collect();
                json!({ "assignments": assignments }).to_string()
            }
            SchemaId::ParentNames => {
                let parsed: Value = serde_json::from_str(payload).unwrap_or(Value::Null);
                let mut names: Vec<String> = Vec::new();
                for p in parsed["parents"].as_array().map(Vec::as_slice).unwrap_or_default() {
                    let children: Vec<&str> = p["children"]
                        .as_array()
                        .map(|c| c.iter().filter_map(Value::as_str).collect())
                        .unwrap_or_default();
                    let current = p["name"].as_str().unwrap_or("Unnamed").to_string();
                    let label = label_from(&children.join(" "), &current);
                    // A clash would make the next dedup step merge distinct parents.
                    names.push(if names.contains(&label) { current } else { label });
                }
                json!({ "names": names }).to_string()
            }
        }
    }
}

fn string_list(payload: &str, key: &str) -> Vec<String> {
    serde_json::from_str::<Value>(payload)
        .ok()
        .and_then(|v| v.get(key).cloned())
        .and_then(|v| serde_json::from_value(v).ok())
        .unwrap_or_default()
}

fn label_from(text: &str, default: &str) -> String {
    let kws = extract_keywords(text, 2);
    match kws.as_slice() {
        [] => default.to_string(),
        [a] => title_case(a),
        [a, b, ..] => format!("{} & {}", title_case(a), title_case(b)),
    }
}

fn profile_template(payload: &str) -> String {
    let mut kws = extract_keywords(payload, 5);
    for filler in FALLBACK_WORDS {
        if kws.len() >= 5 {
            break;
        }
        if !kws.iter().any(|k| k == filler) {
            kws.push(filler.to_string());
        }
    }
    let k: Vec<String> = kws.iter().map(|w| title_case(w)).collect();
    json!({
        "top_topics": k.iter().map(|w| format!("{w} questions and projects")).collect::<Vec<_>>(),
        "red_flags": [
            format!("Leaning on AI for every {} decision", kws[0]),
            format!("Re-asking about {} until it feels perfect", kws[1]),
            format!("Outsourcing {} thinking instead of trying first", kws[2]),
        ],
        "green_flags": [
            format!("Curious follow-up questions about {}", kws[0]),
            format!("Using AI to understand {} rather than copy answers", kws[3]),
            format!("Setting clear goals around {}", kws[4]),
        ],
        "communication_style": format!("Treats the AI as a patient {} study partner", kws[0]),
        "time_travel": format!("A year spent circling {}, {} and {}.", kws[0], kws[1], kws[2]),
        "archetype": format!("The {} Explorer", k[0]),
    })
    .to_string()
}

/// Synthesis fallback: per field, the items seen in the most partials win,
/// ties going to the earliest seen.
fn merge_profiles(profiles: &Value) -> String {
    let empty = Vec::new();
    let profiles = profiles.as_array().unwrap_or(&empty);
    let pick = |key: &str, n: usize| -> Vec<String> {
        let mut seen: Vec<(String, usize)> = Vec::new();
        for p in profiles {
            let items: Vec<&str> = match &p[key] {
                Value::Array(xs) => xs.iter().filter_map(Value::as_str).collect(),
                Value::String(s) => vec![s.as_str()],
                _ => Vec::new(),
            };
            for item in items {
                match seen.iter_mut().find(|(s, _)| s == item) {
                    Some((_, c)) => *c += 1,
                    None => seen.push((item.to_string(), 1)),
                }
            }
        }
        let mut order: Vec<usize> = (0..seen.len()).collect();
        order.sort_by(|&a, &b| seen[b].1.cmp(&seen[a].1).then(a.cmp(&b)));
        order.into_iter().take(n).map(|i| seen[i].0.clone()).collect()
    };
    let one = |key: &str| pick(key, 1).into_iter().next().unwrap_or_default();
    json!({
        "top_topics": pick("top_topics", 5),
        "red_flags": pick("red_flags", 3),
        "green_flags": pick("green_flags", 3),
        "communication_style": one("communication_style"),
        "time_travel": one("time_travel"),
        "archetype": one("archetype"),
    })
    .to_string()
}

impl Generator for MockGenerator {
    fn generate_text(&self, req: &GenerationRequest) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(c) = &self.capture {
            c.lock().expect("capture lock").push(req.clone());
        }
        Ok(self
            .fixtures
            .get(&req.fingerprint())
            .cloned()
            .unwrap_or_else(|| Self::fallback(req)))
    }

    fn fingerprint(&self) -> String {
        format!("mock-generator/fixtures={}", self.fixtures.len())
    }

    fn retention(&self) -> RetentionMode {
        RetentionMode::Local
    }

    fn reproducible(&self) -> bool {
        true
    }

    fn max_in_flight(&self) -> usize {
        usize::MAX
    }
}

type ScriptFn = dyn Fn(&GenerationRequest, usize) -> Result<String, ProviderError> + Send + Sync;

/// Generator driven by a closure that sees each request and its zero-based
/// call index. Counts and records calls.
pub struct ScriptedGenerator {
    script: Box<ScriptFn>,
    calls: AtomicUsize,
    log: Mutex<Vec<GenerationRequest>>,
}

impl ScriptedGenerator {
    pub fn new<F>(script: F) -> Self
    where
        F: Fn(&GenerationRequest, usize) -> Result<String, ProviderError> + Send + Sync + 'static,
    {
        Self {
            script: Box::new(script),
            calls: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
        }
    }

    /// Replies with the same text to every request.
    pub fn constant(reply: impl Into<String>) -> Self {
        let reply = reply.into();
        Self::new(move |_, _| Ok(reply.clone()))
    }

    /// Hierarchy script: every round proposes `parents` names ("Group 0",
    /// ...), merges nothing, assigns child `i` to parent `i % parents` and
    /// keeps the names. Other schemas get the [`MockGenerator`] templates.
    pub fn fixed_parents(parents: usize) -> Self {
        let fallback = MockGenerator::new();
        Self::new(move |req, _| {
            let payload: Value = serde_json::from_str(req.payload()).unwrap_or(Value::Null);
            let reply = match req.response_schema {
                SchemaId::ParentProposals => {
                    json!({ "parents": (0..parents).map(|j| format!("Group {j}")).collect::<Vec<_>>() })
                }
                SchemaId::ParentMerges => json!({ "merge_groups": [] }),
                SchemaId::ParentAssignments => {
                    let n = payload["children"].as_array().map_or(0, Vec::len);
                    let p = payload["parents"].as_array().map_or(1, Vec::len).max(1);
                    json!({ "assignments": (0..n).map(|i| i % p).collect::<Vec<_>>() })
                }
                SchemaId::ParentNames => {
                    let names: Vec<Value> = payload["parents"]
                        .as_array()
                        .map(|ps| ps.iter().map(|p| p["name"].clone()).collect())
                        .unwrap_or_default();
                    json!({ "names": names })
                }
                _ => return fallback.generate_text(req),
            };
            Ok(reply.to_string())
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<GenerationRequest> {
        self.log.lock().expect("log lock").clone()
    }
}

impl Generator for ScriptedGenerator {
    fn generate_text(&self, req: &GenerationRequest) -> Result<String, ProviderError> {
        let index = self.calls.fetch_add(1, Ordering::SeqCst);
        self.log.lock().expect("log lock").push(req.clone());
        (self.script)(req, index)
    }

    fn fingerprint(&self) -> String {
        "scripted-generator".into()
    }

    fn retention(&self) -> RetentionMode {
        RetentionMode::Local
    }

    fn reproducible(&self) -> bool {
        true
    }

    fn max_in_flight(&self) -> usize {
        usize::MAX
    }
}
