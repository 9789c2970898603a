//! Job service, REST API and batch CLI around the slideforge pipeline.

pub mod api;
pub mod cache;
pub mod cleanup;
pub mod cli;
pub mod config;
pub mod jobs;
pub mod pipeline;
pub mod upload;

use std::sync::Arc;

use chrono::{DateTime, Utc};

/// Source of wall-clock time, injectable for deterministic runs.
pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(Utc::now)
}

/// A clock frozen at `at`.
pub fn fixed_clock(at: DateTime<Utc>) -> Clock {
    Arc::new(move || at)
}
