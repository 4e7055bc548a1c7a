use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid {field}: {reason}")]
    Field { field: &'static str, reason: String },
    #[error("invalid timeline: {0}")]
    Timeline(String),
    #[error("invalid outage process: {0}")]
    Process(String),
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("missing [{0}] section")]
    MissingSection(&'static str),
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("malformed attempt log at record {line} (vantage {vantage}, slot {slot}): {reason}")]
    Structure { line: usize, vantage: u32, slot: u64, reason: String },
    #[error("slot {slot} of vantage {vantage} stops at failed attempt {last_attempt} below retry_max {retry_max}")]
    Incomplete { vantage: u32, slot: u64, last_attempt: u32, retry_max: u32 },
    #[error("inconsistent attempt counts: {0}")]
    Counts(String),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("log contains {0} vantage points; split it before per-stream analysis")]
    MixedVantage(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error, PartialEq)]
pub enum EstimateError {
    #[error("insufficient data: {0}")]
    InsufficientData(&'static str),
    #[error("argument out of domain: {0}")]
    Domain(String),
}
