//! Bundled [`EntityDetector`] implementations.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Mutex, OnceLock};

use regex::Regex;
use serde::Deserialize;

use super::{EntityDetector, EntityKind, EntitySpan, RedactError};

fn char_offset(text: &str, byte: usize) -> usize {
    text[..byte].chars().count()
}

fn word_list(raw: &'static str) -> HashSet<&'static str> {
    raw.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

/// Rule baseline: capitalised word runs checked against shipped name, place
/// and organisation-suffix lists, plus honorifics. Works without any model.
pub struct GazetteerDetector {
    names: HashSet<&'static str>,
    places: HashSet<&'static str>,
    org_suffixes: HashSet<&'static str>,
}

impl Default for GazetteerDetector {
    fn default() -> Self {
        Self {
            names: word_list(include_str!("../../assets/gazetteer/first_names.txt")),
            places: word_list(include_str!("../../assets/gazetteer/places.txt")),
            org_suffixes: word_list(include_str!("../../assets/gazetteer/org_suffixes.txt")),
        }
    }
}

const HONORIFICS: [&str; 5] = ["Mr. ", "Mrs. ", "Ms. ", "Dr. ", "Prof. "];

fn capitalized_run() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"[A-Z][A-Za-z'\-]+(?: [A-Z][A-Za-z'\-]+)*").expect("run pattern compiles")
    })
}

impl GazetteerDetector {
    fn classify_run(&self, text: &str, run_start: usize, run: &str, out: &mut Vec<EntitySpan>) {
        let words: Vec<(usize, &str)> = run
            .split(' ')
            .scan(0usize, |pos, w| {
                let at = *pos;
                *pos += w.len() + 1;
                Some((run_start + at, w))
            })
            .collect();
        let span = |from: usize, to: usize, kind| {
            let (b0, _) = words[from];
            let (b1, w1) = words[to - 1];
            EntitySpan::new(char_offset(text, b0), char_offset(text, b1 + w1.len()), kind, "gazetteer")
        };

        if words.len() > 1 && self.org_suffixes.contains(words[words.len() - 1].1) {
            out.push(span(0, words.len(), EntityKind::Org));
            return;
        }
        if HONORIFICS.iter().any(|h| text[..run_start].ends_with(h)) {
            out.push(span(0, words.len(), EntityKind::Person));
            return;
        }

        let mut i = 0;
        while i < words.len() {
            if i + 1 < words.len() {
                let pair = format!("{} {}", words[i].1, words[i + 1].1);
                if self.places.contains(pair.as_str()) {
                    out.push(span(i, i + 2, EntityKind::Location));
                    i += 2;
                    continue;
                }
            }
            if self.places.contains(words[i].1) {
                out.push(span(i, i + 1, EntityKind::Location));
                i += 1;
                continue;
            }
            if self.names.contains(words[i].1) {
                let mut j = i + 1;
                while j < words.len() && !self.places.contains(words[j].1) && !self.names.contains(words[j].1) {
                    j += 1;
                }
                out.push(span(i, j, EntityKind::Person));
                i = j;
                continue;
            }
            i += 1;
        }
    }
}

impl EntityDetector for GazetteerDetector {
    fn name(&self) -> &str {
        "gazetteer"
    }

    fn detect(&self, text: &str) -> Result<Vec<EntitySpan>, RedactError> {
        let mut out = Vec::new();
        for m in capitalized_run().find_iter(text) {
            self.classify_run(text, m.start(), m.as_str(), &mut out);
        }
        Ok(out)
    }
}

type ScriptFn = dyn Fn(&str) -> Result<Vec<(usize, usize, EntityKind)>, String> + Send + Sync;

/// Test fixture detector driven by a closure returning char-offset spans.
pub struct ScriptedDetector {
    label: String,
    script: Box<ScriptFn>,
}

impl ScriptedDetector {
    pub fn new<F>(label: impl Into<String>, script: F) -> Self
    where
        F: Fn(&str) -> Result<Vec<(usize, usize, EntityKind)>, String> + Send + Sync + 'static,
    {
        Self {
            label: label.into(),
            script: Box::new(script),
        }
    }

    /// PERSON for every token that starts with an uppercase ASCII letter.
    pub fn capitalized_tokens() -> Self {
        Self::new("scripted-capitalized", |text| {
            static RE: OnceLock<Regex> = OnceLock::new();
            let re = RE.get_or_init(|| Regex::new(r"[A-Z][A-Za-z]*").expect("token pattern"));
            Ok(re
                .find_iter(text)
                .map(|m| (char_offset(text, m.start()), char_offset(text, m.end()), EntityKind::Person))
                .collect())
        })
    }

    /// PERSON for every occurrence of the given literal names.
    pub fn names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).filter(|n| !n.is_empty()).collect();
        Self::new("scripted-names", move |text| {
            let mut spans = Vec::new();
            for name in &names {
                for (byte, _) in text.match_indices(name.as_str()) {
                    let start = char_offset(text, byte);
                    spans.push((start, start + name.chars().count(), EntityKind::Person));
                }
            }
            Ok(spans)
        })
    }

    /// Never finds anything.
    pub fn none() -> Self {
        Self::new("scripted-none", |_| Ok(Vec::new()))
    }

    /// Always fails, to exercise abort paths.
    pub fn failing(reason: &'static str) -> Self {
        Self::new("scripted-failing", move |_| Err(reason.to_string()))
    }
}

impl EntityDetector for ScriptedDetector {
    fn name(&self) -> &str {
        &self.label
    }

    fn detect(&self, text: &str) -> Result<Vec<EntitySpan>, RedactError> {
        let spans = (self.script)(text).map_err(RedactError::DetectorUnavailable)?;
        Ok(spans
            .into_iter()
            .map(|(s, e, k)| EntitySpan::new(s, e, k, self.label.clone()))
            .collect())
    }
}

/// Funnels calls through a mutex, for detectors that are not safe to call
/// concurrently.
pub struct SerializedDetector<D> {
    label: String,
    inner: Mutex<D>,
}

impl<D: EntityDetector> SerializedDetector<D> {
    pub fn new(inner: D) -> Self {
        Self {
            label: format!("serialized({})", inner.name()),
            inner: Mutex::new(inner),
        }
    }
}

impl<D: EntityDetector> EntityDetector for SerializedDetector<D> {
    fn name(&self) -> &str {
        &self.label
    }

    fn detect(&self, text: &str) -> Result<Vec<EntitySpan>, RedactError> {
        let guard = self
            .inner
            .lock()
            .map_err(|_| RedactError::DetectorUnavailable("detector mutex poisoned".into()))?;
        guard.detect(text)
    }
}

/// Adapter for an external NER process.
///
/// Wire protocol, one exchange per message:
/// request is the UTF-8 byte length in decimal, one space, the text bytes
/// and a newline; the response is a single line holding a JSON array of
/// `{"start": .., "end": .., "kind": ..}` in char offsets. Kinds other than
/// PERSON/GPE/LOC/LOCATION/ORG are ignored.
pub struct ProcessDetector {
    label: String,
    io: Mutex<ProcessIo>,
}

struct ProcessIo {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

#[derive(Deserialize)]
struct WireSpan {
    start: usize,
    end: usize,
    kind: String,
}

impl ProcessDetector {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, RedactError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| RedactError::DetectorUnavailable(format!("spawn {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            label: format!("process({program})"),
            io: Mutex::new(ProcessIo { child, stdin, stdout }),
        })
    }
}

impl EntityDetector for ProcessDetector {
    fn name(&self) -> &str {
        &self.label
    }

    fn detect(&self, text: &str) -> Result<Vec<EntitySpan>, RedactError> {
        let unavailable = |what: String| RedactError::DetectorUnavailable(format!("{}: {what}", self.label));
        let mut io = self.io.lock().map_err(|_| unavailable("mutex poisoned".into()))?;
        let io = &mut *io;
        write!(io.stdin, "{} ", text.len())
            .and_then(|_| io.stdin.write_all(text.as_bytes()))
            .and_then(|_| io.stdin.write_all(b"\n"))
            .and_then(|_| io.stdin.flush())
            .map_err(|e| unavailable(format!("write: {e}")))?;
        let mut line = String::new();
        let n = io
            .stdout
            .read_line(&mut line)
            .map_err(|e| unavailable(format!("read: {e}")))?;
        if n == 0 {
            return Err(unavailable("process closed its output".into()));
        }
        let wire: Vec<WireSpan> =
            serde_json::from_str(line.trim()).map_err(|e| unavailable(format!("bad response: {e}")))?;
        Ok(wire
            .into_iter()
            .filter_map(|w| {
                let kind = EntityKind::from_label(&w.kind)?;
                matches!(kind, EntityKind::Person | EntityKind::Location | EntityKind::Org)
                    .then(|| EntitySpan::new(w.start, w.end, kind, self.label.clone()))
            })
            .collect())
    }
}

impl Drop for ProcessDetector {
    fn drop(&mut self) {
        if let Ok(io) = self.io.get_mut() {
            let _ = io.child.kill();
            let _ = io.child.wait();
        }
    }
}
