//! Storage. [`EphemeralStore`] is the only place raw conversations live and
//! is never written to disk. [`DirStore`] persists derived data only:
//! participant records and session metadata.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use wrapped_core::aggregate::ParticipantRecord;
use wrapped_core::ingest::Conversation;

use crate::session::Session;

#[derive(Debug)]
pub struct RawEntry {
    pub conversations: Vec<Conversation>,
}

/// In-memory raw conversations keyed by session key.
#[derive(Debug, Default)]
pub struct EphemeralStore {
    entries: Mutex<HashMap<String, RawEntry>>,
}

impl EphemeralStore {
    pub fn insert(&self, key: &str, entry: RawEntry) {
        self.entries.lock().expect("raw store lock").insert(key.to_string(), entry);
    }

    pub fn with<R>(&self, key: &str, f: impl FnOnce(&mut RawEntry) -> R) -> Option<R> {
        self.entries.lock().expect("raw store lock").get_mut(key).map(f)
    }

    /// Removes and returns the entry; the caller becomes its only owner.
    pub fn take(&self, key: &str) -> Option<RawEntry> {
        self.entries.lock().expect("raw store lock").remove(key)
    }

    pub fn purge(&self, key: &str) -> bool {
        self.take(key).is_some()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.lock().expect("raw store lock").contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("raw store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// JSON files under one directory:
/// `records/<participant>.json` and `sessions/<key>.json`.
#[derive(Debug, Clone)]
pub struct DirStore {
    root: PathBuf,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

fn read_all<T: serde::de::DeserializeOwned>(dir: &Path) -> io::Result<Vec<T>> {
    let mut paths: Vec<PathBuf> = match fs::read_dir(dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect(),
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let bytes = fs::read(p)?;
            serde_json::from_slice(&bytes).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", p.display())))
        })
        .collect()
}

fn safe_name(id: &str) -> io::Result<&str> {
    if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("unsafe store name {id:?}")));
    }
    Ok(id)
}

impl DirStore {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("records"))?;
        fs::create_dir_all(root.join("sessions"))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn put_record(&self, record: &ParticipantRecord) -> io::Result<String> {
        let id = safe_name(record.participant_id())?;
        let json = serde_json::to_vec_pretty(record).map_err(io::Error::other)?;
        write_atomic(&self.root.join("records").join(format!("{id}.json")), &json)?;
        Ok(id.to_string())
    }

    pub fn record(&self, participant_id: &str) -> io::Result<ParticipantRecord> {
        let path = self.root.join("records").join(format!("{}.json", safe_name(participant_id)?));
        serde_json::from_slice(&fs::read(path)?).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    /// All records, ordered by file name.
    pub fn records(&self) -> io::Result<Vec<ParticipantRecord>> {
        read_all(&self.root.join("records"))
    }

    pub fn put_session(&self, session: &Session) -> io::Result<()> {
        let json = serde_json::to_vec_pretty(session).map_err(io::Error::other)?;
        write_atomic(&self.root.join("sessions").join(format!("{}.json", safe_name(&session.key)?)), &json)
    }

    pub fn sessions(&self) -> io::Result<Vec<Session>> {
        read_all(&self.root.join("sessions"))
    }

    /// Every file under the store root, for audits.
    pub fn files(&self) -> io::Result<Vec<PathBuf>> {
        fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> io::Result<()> {
            for e in fs::read_dir(dir)? {
                let p = e?.path();
                if p.is_dir() {
                    walk(&p, out)?;
                } else {
                    out.push(p);
                }
            }
            Ok(())
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out)?;
        out.sort();
        Ok(out)
    }
}
