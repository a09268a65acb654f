//! Error types shared across the crate.

use thiserror::Error;

/// A configuration value failed validation.
///
/// `field` is a dotted path such as `workload.demand_weights` or
/// `fleet[3].decode_rate`.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid configuration at `{field}`: {reason}")]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// Violations detected while the event loop is running.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("event scheduled in the past: t={at} ms while clock is at {now} ms")]
    EventInPast { at: u64, now: u64 },
    #[error("request id {0} submitted twice")]
    DuplicateRequest(u64),
    #[error("unknown node {0}")]
    UnknownNode(u32),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}
