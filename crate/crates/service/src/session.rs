//! Session lifecycle.
//!
//! ```text
//! uploaded -> reviewing -> processing -> complete
//!    |            |             \------> failed
//!    \------------+--> purged
//! ```
//!
//! `purged` covers sessions abandoned or expired before processing. Entering
//! any terminal state drops the raw-store reference.

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use wrapped_core::redact::RedactionAudit;
use wrapped_core::usage::UsageStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Uploaded,
    Reviewing,
    Processing,
    Complete,
    Purged,
    Failed,
}

impl SessionState {
    pub const ALL: [SessionState; 6] = [
        SessionState::Uploaded,
        SessionState::Reviewing,
        SessionState::Processing,
        SessionState::Complete,
        SessionState::Purged,
        SessionState::Failed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SessionState::Uploaded => "uploaded",
            SessionState::Reviewing => "reviewing",
            SessionState::Processing => "processing",
            SessionState::Complete => "complete",
            SessionState::Purged => "purged",
            SessionState::Failed => "failed",
        }
    }

    /// The declared edges; everything else is rejected.
    pub fn can_transition(self, to: SessionState) -> bool {
        use SessionState::*;
        matches!(
            (self, to),
            (Uploaded, Reviewing)
                | (Uploaded, Purged)
                | (Reviewing, Processing)
                | (Reviewing, Purged)
                | (Processing, Complete)
                | (Processing, Failed)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, SessionState::Complete | SessionState::Purged | SessionState::Failed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("illegal session transition {} -> {}", from.as_str(), to.as_str())]
pub struct IllegalTransition {
    pub from: SessionState,
    pub to: SessionState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub code: String,
    pub message: String,
}

/// A fresh 256-bit session token, hex encoded.
pub fn new_token() -> String {
    hex::encode(rand::random::<[u8; 32]>())
}

/// Storage key for a token. Only this digest is kept or logged.
pub fn token_key(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

/// Salted digest of a client address.
pub fn client_fingerprint(salt: &[u8], address: &str) -> String {
    let mut h = Sha256::new();
    h.update(salt);
    h.update(address.as_bytes());
    hex::encode(h.finalize())
}

/// Session metadata. Holds no message text, so it may be persisted as is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    /// Digest of the session token.
    pub key: String,
    pub state: SessionState,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub client_fingerprint: String,
    pub participant_id: String,
    /// Present only while raw messages sit in the ephemeral store.
    pub raw_store_ref: Option<String>,
    /// Present only in `complete`.
    pub profile_ref: Option<String>,
    pub usage_fingerprint: Option<String>,
    pub usage: Option<UsageStats>,
    pub audit: Option<RedactionAudit>,
    pub failure: Option<Failure>,
    pub deleted_conversations: BTreeSet<String>,
}

impl Session {
    pub fn new(key: String, participant_id: String, client_fingerprint: String, now: DateTime<Utc>) -> Self {
        Self {
            raw_store_ref: Some(key.clone()),
            key,
            state: SessionState::Uploaded,
            created_at: now,
            updated_at: now,
            client_fingerprint,
            participant_id,
            profile_ref: None,
            usage_fingerprint: None,
            usage: None,
            audit: None,
            failure: None,
            deleted_conversations: BTreeSet::new(),
        }
    }

    pub fn transition(&mut self, to: SessionState, now: DateTime<Utc>) -> Result<(), IllegalTransition> {
        if !self.state.can_transition(to) {
            return Err(IllegalTransition { from: self.state, to });
        }
        self.state = to;
        self.updated_at = now;
        if to.is_terminal() {
            self.raw_store_ref = None;
        }
        if to != SessionState::Complete {
            self.profile_ref = None;
        }
        Ok(())
    }

    /// Checks the stored-field invariants of the current state.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.state.is_terminal() && self.raw_store_ref.is_some() {
            return Err(format!("{} session still references raw data", self.state.as_str()));
        }
        if self.profile_ref.is_some() != (self.state == SessionState::Complete) {
            return Err("profile_ref must be present exactly in complete".into());
        }
        Ok(())
    }
}
