//! Participant-facing HTTP service and batch CLI around `wrapped-core`.
//!
//! Raw conversations live only in memory, inside a session, until the
//! session reaches a terminal state. The persistent store holds participant
//! records and session metadata.

pub mod api;
pub mod cli;
pub mod clock;
pub mod config;
pub mod error;
pub mod ratelimit;
pub mod service;
pub mod session;
pub mod store;

pub use config::Config;
pub use error::ServiceError;
pub use service::Service;
