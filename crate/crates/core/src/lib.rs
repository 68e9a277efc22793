//! Chat-history "wrapped" profiling pipeline.
//!
//! Stages run in order: [`ingest`] parses vendor or neutral archives and
//! applies the preprocessing filters, [`redact`] strips PII before any model
//! sees the text, [`profiler`] extracts per-participant facet profiles,
//! [`usage`] computes telemetry, [`cluster`] groups facet items into
//! two-level hierarchies and [`aggregate`] builds the cross-participant report.
//! [`pipeline`] chains the per-participant stages.

pub mod aggregate;
pub mod cluster;
pub mod exec;
pub mod ingest;
pub mod pipeline;
pub mod profiler;
pub mod providers;
pub mod redact;
pub mod usage;

pub use exec::Execution;
