//! Periodic-probe availability measurement with bounded retries.
//!
//! The crate simulates ground-truth outage timelines and samples them with the
//! slot/retry schedule of a probing campaign, runs the same schedule live over
//! HTTP, and analyzes the resulting attempt logs: availability estimators, the
//! retry overestimation factor, SLA claim tests, and outage censoring.

pub mod config;
pub mod detection;
pub mod error;
pub mod estimators;
pub mod jsonl;
pub mod model;
pub mod prober;
pub mod simulator;

pub use error::{ConfigError, EstimateError, LogError};
pub use model::{aggregate_counts, expected_tries, AttemptCounts, AttemptLog, AttemptRecord, CampaignConfig, Cause, Mode, OutageEvent, Outcome, Timeline};
