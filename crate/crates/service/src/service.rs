//! The participant workflow behind the HTTP API: upload, review, process,
//! report, plus the aggregate rebuilt from retained records.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tokio::task::JoinHandle;

use wrapped_core::aggregate::{run_study, AggregateReport, Demographics, ParticipantRecord};
use wrapped_core::ingest::{detect_format, parse_archive_report, select_year, Conversation};
use wrapped_core::pipeline::{run_participant, PipelineConfig};
use wrapped_core::profiler::FacetProfile;
use wrapped_core::redact::RedactionAudit;
use wrapped_core::usage::{compute_usage, UsageStats};

use crate::clock::Clock;
use crate::config::{Config, Providers};
use crate::error::ServiceError;
use crate::ratelimit::TokenBucket;
use crate::session::{client_fingerprint, new_token, token_key, Failure, Session, SessionState};
use crate::store::{DirStore, EphemeralStore, RawEntry};

type Result<T> = std::result::Result<T, ServiceError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationPreview {
    pub id: String,
    pub title: Option<String>,
    /// User messages in the analysis year.
    pub message_count: usize,
    pub first_date: Option<NaiveDate>,
    pub last_date: Option<NaiveDate>,
}

/// Metadata only: no message text ever appears here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preview {
    pub conversations: Vec<ConversationPreview>,
    pub deleted_conversations: Vec<String>,
    pub usage: UsageStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadResponse {
    pub session_id: String,
    pub state: SessionState,
    pub skipped_conversations: usize,
    pub preview: Preview,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusResponse {
    pub state: SessionState,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantReport {
    pub profile: FacetProfile,
    pub usage: UsageStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<RedactionAudit>,
}

/// Optional body of `POST /sessions/{id}/process`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessRequest {
    #[serde(default)]
    pub demographics: Option<Demographics>,
}

fn preview_row(c: &Conversation) -> ConversationPreview {
    let dates: Vec<NaiveDate> = c.user_messages().filter_map(|m| m.timestamp).map(|t| t.local_date()).collect();
    ConversationPreview {
        id: c.id.clone(),
        title: c.title.clone(),
        message_count: c.user_messages().count(),
        first_date: dates.iter().min().copied(),
        last_date: dates.iter().max().copied(),
    }
}

fn short(key: &str) -> &str {
    &key[..12.min(key.len())]
}

pub struct Service {
    config: Config,
    providers: Providers,
    clock: Arc<dyn Clock>,
    limiter: TokenBucket,
    salt: [u8; 32],
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    raw: EphemeralStore,
    store: DirStore,
    fingerprints: Mutex<HashSet<String>>,
    workers: Arc<Semaphore>,
    offline: Option<AggregateReport>,
    generation: AtomicU64,
    cache: Mutex<Option<(u64, AggregateReport)>>,
}

impl Service {
    /// Opens the store and restores session metadata. Sessions that were
    /// mid-flight lost their raw data with the previous process and are
    /// closed out as failed or purged.
    pub fn new(config: Config, providers: Providers, clock: Arc<dyn Clock>) -> Result<Arc<Self>> {
        config.validate().map_err(ServiceError::internal)?;
        let store = DirStore::open(&config.server.store_dir).map_err(ServiceError::internal)?;
        let offline = match &config.server.offline_report {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Internal(format!("{}: {e}", path.display())))?;
                Some(AggregateReport::from_json(&text).map_err(ServiceError::internal)?)
            }
            None => None,
        };
        let now = clock.now();
        let mut sessions = HashMap::new();
        let mut fingerprints = HashSet::new();
        for mut s in store.sessions().map_err(ServiceError::internal)? {
            let closed = match s.state {
                SessionState::Uploaded | SessionState::Reviewing => Some(SessionState::Purged),
                SessionState::Processing => {
                    s.failure = Some(Failure {
                        code: "interrupted".into(),
                        message: "the service restarted while this session was processing".into(),
                    });
                    Some(SessionState::Failed)
                }
                _ => None,
            };
            if let Some(to) = closed {
                s.transition(to, now).map_err(ServiceError::internal)?;
                store.put_session(&s).map_err(ServiceError::internal)?;
            }
            if s.state == SessionState::Complete {
                fingerprints.extend(s.usage_fingerprint.clone());
            }
            sessions.insert(s.key.clone(), Arc::new(Mutex::new(s)));
        }
        Ok(Arc::new(Self {
            limiter: TokenBucket::new(config.rate_limit.capacity, config.rate_limit.refill_per_day),
            workers: Arc::new(Semaphore::new(config.server.workers)),
            salt: rand::random(),
            config,
            providers,
            clock,
            sessions: Mutex::new(sessions),
            raw: EphemeralStore::default(),
            store,
            fingerprints: Mutex::new(fingerprints),
            offline,
            generation: AtomicU64::new(0),
            cache: Mutex::new(None),
        }))
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn store(&self) -> &DirStore {
        &self.store
    }

    /// Sessions whose raw conversations are still held in memory.
    pub fn raw_sessions(&self) -> usize {
        self.raw.len()
    }

    fn pipeline_config(&self) -> PipelineConfig {
        self.config.pipeline_config()
    }

    fn persist(&self, s: &Session) -> Result<()> {
        debug_assert!(s.check_invariants().is_ok(), "{:?}", s.check_invariants());
        self.store.put_session(s).map_err(|e| {
            log::error!("session {}: cannot persist metadata: {e}", short(&s.key));
            ServiceError::internal(e)
        })
    }

    fn expired(&self, s: &Session, now: DateTime<Utc>) -> bool {
        now - s.created_at >= self.config.session_ttl()
    }

    /// Purges raw data of an expired session. Processing sessions are left
    /// to their job.
    fn expire(&self, s: &mut Session, now: DateTime<Utc>) {
        if matches!(s.state, SessionState::Uploaded | SessionState::Reviewing) {
            self.raw.purge(&s.key);
            if s.transition(SessionState::Purged, now).is_ok() {
                let _ = self.persist(s);
            }
            log::info!("session {} expired and purged", short(&s.key));
        }
    }

    fn session(&self, token: &str) -> Result<Arc<Mutex<Session>>> {
        let key = token_key(token);
        let cell = self.sessions.lock().expect("session map lock").get(&key).cloned();
        let cell = cell.ok_or(ServiceError::UnknownSession)?;
        let now = self.clock.now();
        {
            let mut s = cell.lock().expect("session lock");
            if self.expired(&s, now) {
                self.expire(&mut s, now);
                return Err(ServiceError::UnknownSession);
            }
        }
        Ok(cell)
    }

    fn preview_of(&self, s: &Session) -> Result<Preview> {
        let conversations = self
            .raw
            .with(&s.key, |e| e.conversations.iter().map(preview_row).collect())
            .ok_or_else(|| ServiceError::Internal("raw data missing for a reviewing session".into()))?;
        Ok(Preview {
            conversations,
            deleted_conversations: s.deleted_conversations.iter().cloned().collect(),
            usage: s.usage.clone().expect("reviewing sessions carry usage"),
        })
    }

    fn require(s: &Session, state: SessionState) -> Result<()> {
        if s.state != state {
            return Err(ServiceError::WrongState {
                state: s.state,
                failure: s.failure.clone(),
            });
        }
        Ok(())
    }

    /// Parses an archive into a new reviewing session. Every attempt takes a
    /// rate-limit token, including ones that fail to parse.
    pub fn upload(&self, bytes: &[u8], format: Option<&str>, filename: Option<&str>, client_address: &str) -> Result<UploadResponse> {
        let now = self.clock.now();
        let client = client_fingerprint(&self.salt, client_address);
        self.limiter
            .try_acquire(&client, now)
            .map_err(|retry_after_secs| ServiceError::RateLimited { retry_after_secs })?;
        let source = detect_format(format, filename, bytes)?;
        let parsed = parse_archive_report(bytes, source)?;
        let cfg = self.pipeline_config();
        let conversations = select_year(&parsed.conversations, cfg.filter.year);
        if conversations.is_empty() {
            return Err(ServiceError::EmptyArchive);
        }
        let participant_id = format!("p-{}", hex::encode(rand::random::<[u8; 8]>()));
        let token = new_token();
        let key = token_key(&token);
        let mut session = Session::new(key.clone(), participant_id.clone(), client, now);
        session.usage = Some(compute_usage(&participant_id, &conversations, cfg.tiers));
        self.raw.insert(&key, RawEntry { conversations });
        session.transition(SessionState::Reviewing, now).map_err(ServiceError::internal)?;
        let preview = self.preview_of(&session)?;
        if let Err(e) = self.persist(&session) {
            self.raw.purge(&key);
            return Err(e);
        }
        let state = session.state;
        self.sessions.lock().expect("session map lock").insert(key.clone(), Arc::new(Mutex::new(session)));
        log::info!("session {} created with {} conversations", short(&key), preview.conversations.len());
        Ok(UploadResponse {
            session_id: token,
            state,
            skipped_conversations: parsed.skipped.len(),
            preview,
        })
    }

    pub fn preview(&self, token: &str) -> Result<Preview> {
        let cell = self.session(token)?;
        let s = cell.lock().expect("session lock");
        Self::require(&s, SessionState::Reviewing)?;
        self.preview_of(&s)
    }

    /// Removes one conversation from the raw store. Deleting an id twice is
    /// a no-op.
    pub fn delete_conversation(&self, token: &str, conversation_id: &str) -> Result<Preview> {
        let cell = self.session(token)?;
        let mut s = cell.lock().expect("session lock");
        Self::require(&s, SessionState::Reviewing)?;
        if s.deleted_conversations.contains(conversation_id) {
            return self.preview_of(&s);
        }
        let tiers = self.pipeline_config().tiers;
        let pid = s.participant_id.clone();
        let usage = self
            .raw
            .with(&s.key, |e| {
                let before = e.conversations.len();
                e.conversations.retain(|c| c.id != conversation_id);
                (before != e.conversations.len()).then(|| compute_usage(&pid, &e.conversations, tiers))
            })
            .ok_or_else(|| ServiceError::Internal("raw data missing for a reviewing session".into()))?
            .ok_or_else(|| ServiceError::UnknownConversation(conversation_id.to_string()))?;
        s.deleted_conversations.insert(conversation_id.to_string());
        s.usage = Some(usage);
        s.updated_at = self.clock.now();
        self.persist(&s)?;
        self.preview_of(&s)
    }

    /// Starts the pipeline job. The raw conversations move out of the shared
    /// store into the job, which drops them when it ends.
    pub fn process(self: &Arc<Self>, token: &str, request: ProcessRequest) -> Result<(StatusResponse, JoinHandle<()>)> {
        let cell = self.session(token)?;
        let mut s = cell.lock().expect("session lock");
        Self::require(&s, SessionState::Reviewing)?;
        let usage = s.usage.clone().expect("reviewing sessions carry usage");
        if usage.conversation_count == 0 {
            return Err(ServiceError::EmptyArchive);
        }
        let fingerprint = usage.fingerprint();
        if !self.fingerprints.lock().expect("fingerprint lock").insert(fingerprint.clone()) {
            log::info!("session {} rejected as duplicate", short(&s.key));
            return Err(ServiceError::DuplicateSubmission);
        }
        let Some(raw) = self.raw.take(&s.key) else {
            self.fingerprints.lock().expect("fingerprint lock").remove(&fingerprint);
            return Err(ServiceError::Internal("raw data missing for a reviewing session".into()));
        };
        s.usage_fingerprint = Some(fingerprint);
        s.transition(SessionState::Processing, self.clock.now()).map_err(ServiceError::internal)?;
        self.persist(&s)?;
        let status = self.status_of(&s);
        let key = s.key.clone();
        let participant_id = s.participant_id.clone();
        drop(s);

        let svc = Arc::clone(self);
        let handle = tokio::spawn(async move {
            let _permit = Arc::clone(&svc.workers).acquire_owned().await.expect("worker pool open");
            let job = Arc::clone(&svc);
            let outcome = tokio::task::spawn_blocking(move || {
                let RawEntry { conversations } = raw;
                let cfg = job.pipeline_config();
                let p = &job.providers;
                run_participant(&participant_id, &conversations, &*p.detector, &*p.generator, &cfg).map_err(|e| Failure {
                    code: e.code().to_string(),
                    message: e.to_string(),
                })
            })
            .await
            .unwrap_or_else(|e| {
                Err(Failure {
                    code: "internal".into(),
                    message: format!("pipeline job aborted: {e}"),
                })
            });
            svc.finish(&key, outcome.map(|run| (run, request.demographics)));
        });
        Ok((status, handle))
    }

    fn finish(&self, key: &str, outcome: std::result::Result<(wrapped_core::pipeline::ParticipantRun, Option<Demographics>), Failure>) {
        let Some(cell) = self.sessions.lock().expect("session map lock").get(key).cloned() else {
            return;
        };
        let mut s = cell.lock().expect("session lock");
        let now = self.clock.now();
        let outcome = outcome.and_then(|(run, demographics)| {
            let record = ParticipantRecord {
                demographics,
                ..run.record
            };
            self.store
                .put_record(&record)
                .map(|id| (id, run.audit))
                .map_err(|e| Failure {
                    code: "store_failed".into(),
                    message: e.to_string(),
                })
        });
        match outcome {
            Ok((profile_ref, audit)) => {
                self.generation.fetch_add(1, Ordering::SeqCst);
                s.profile_ref = Some(profile_ref);
                s.audit = Some(audit);
                s.transition(SessionState::Complete, now).expect("processing -> complete");
                log::info!("session {} complete", short(key));
            }
            Err(failure) => {
                if let Some(fp) = &s.usage_fingerprint {
                    self.fingerprints.lock().expect("fingerprint lock").remove(fp);
                }
                log::warn!("session {} failed: {}", short(key), failure.code);
                s.failure = Some(failure);
                s.transition(SessionState::Failed, now).expect("processing -> failed");
            }
        }
        self.raw.purge(key);
        let _ = self.persist(&s);
    }

    fn status_of(&self, s: &Session) -> StatusResponse {
        StatusResponse {
            state: s.state,
            created_at: s.created_at,
            updated_at: s.updated_at,
            expires_at: s.created_at + self.config.session_ttl(),
            failure: s.failure.clone(),
        }
    }

    pub fn status(&self, token: &str) -> Result<StatusResponse> {
        let cell = self.session(token)?;
        let s = cell.lock().expect("session lock");
        Ok(self.status_of(&s))
    }

    pub fn report(&self, token: &str) -> Result<ParticipantReport> {
        let cell = self.session(token)?;
        let s = cell.lock().expect("session lock");
        Self::require(&s, SessionState::Complete)?;
        let profile_ref = s.profile_ref.as_deref().expect("complete sessions carry a profile");
        let record = self.store.record(profile_ref).map_err(ServiceError::internal)?;
        Ok(ParticipantReport {
            profile: record.profile,
            usage: record.usage,
            audit: s.audit.clone(),
        })
    }

    /// Rebuilds the aggregate from retained records, or falls back to the
    /// offline report. Blocking.
    pub fn aggregate(&self) -> Result<AggregateReport> {
        let mut cache = self.cache.lock().expect("aggregate cache lock");
        let generation = self.generation.load(Ordering::SeqCst);
        if let Some((g, report)) = cache.as_ref() {
            if *g == generation {
                return Ok(report.clone());
            }
        }
        let records = self.store.records().map_err(ServiceError::internal)?;
        if records.is_empty() {
            return self.offline.clone().ok_or(ServiceError::NoData);
        }
        let p = &self.providers;
        let (report, _) = run_study(
            records,
            &*p.embedder,
            &*p.generator,
            &self.config.cluster_config(),
            self.config.subgroup_config(),
        )
        .map_err(ServiceError::internal)?;
        *cache = Some((generation, report.clone()));
        Ok(report)
    }

    /// Purges expired sessions still holding raw data. Returns how many.
    pub fn sweep(&self) -> usize {
        let now = self.clock.now();
        let cells: Vec<_> = self.sessions.lock().expect("session map lock").values().cloned().collect();
        let mut purged = 0;
        for cell in cells {
            let mut s = cell.lock().expect("session lock");
            if self.expired(&s, now) && matches!(s.state, SessionState::Uploaded | SessionState::Reviewing) {
                self.expire(&mut s, now);
                purged += 1;
            }
        }
        purged
    }
}
