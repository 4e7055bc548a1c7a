//! Report documents emitted by `estimate` and `detect` and merged by `report`.

use std::collections::BTreeMap;

use cloudprobe_core::config::ConfigFile;
use cloudprobe_core::detection::{DetectionReport, SlaMetrics};
use cloudprobe_core::estimators::{EstimateSet, SlaTestResult};
use cloudprobe_core::AttemptCounts;
use serde::{Deserialize, Serialize};

pub const SCHEMA_ID: &str = "cloudprobe-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    /// SHA-256 of the attempt log every fragment of a report must share.
    pub log_digest: String,
    /// SHA-256 of each input file, keyed by role (`log`, `truth`, `config`).
    pub inputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsPair {
    pub detected: SlaMetrics,
    #[serde(rename = "true")]
    pub truth: SlaMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<AttemptCounts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate_set: Option<EstimateSet>,
    /// Why `estimate_set` is missing, when the log had no first attempts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub insufficient_data: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sla_tests: Option<Vec<SlaTestResult>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sla_metrics: Option<MetricsPair>,
}

impl Report {
    pub fn new(log_digest: String, inputs: BTreeMap<String, String>, config: Option<&ConfigFile>) -> Self {
        Self {
            schema: SCHEMA_ID.to_owned(),
            provenance: Provenance { tool_version: env!("CARGO_PKG_VERSION").to_owned(), log_digest, inputs },
            config: config.map(|c| serde_json::to_value(c).expect("config serializes")),
            counts: None,
            estimate_set: None,
            insufficient_data: None,
            sla_tests: None,
            detection: None,
            sla_metrics: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug)]
pub enum MergeError {
    Empty,
    Schema(String),
    Digest { expected: String, found: String },
    Conflict(&'static str),
}

impl std::fmt::Display for MergeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MergeError::Empty => f.write_str("no fragments to merge"),
            MergeError::Schema(s) => write!(f, "unsupported report schema {s:?}"),
            MergeError::Digest { expected, found } => write!(f, "fragments reference different logs ({expected} vs {found})"),
            MergeError::Conflict(field) => write!(f, "fragments disagree on {field}"),
        }
    }
}

fn take<T: PartialEq>(field: &'static str, into: &mut Option<T>, from: Option<T>) -> Result<(), MergeError> {
    match (into.as_ref(), from) {
        (_, None) => Ok(()),
        (None, Some(v)) => {
            *into = Some(v);
            Ok(())
        }
        (Some(a), Some(b)) if *a == b => Ok(()),
        _ => Err(MergeError::Conflict(field)),
    }
}

/// Combines fragments computed from the same attempt log into one report.
pub fn merge(fragments: Vec<Report>) -> Result<Report, MergeError> {
    let mut it = fragments.into_iter();
    let mut out = it.next().ok_or(MergeError::Empty)?;
    if out.schema != SCHEMA_ID {
        return Err(MergeError::Schema(out.schema));
    }
    for frag in it {
        if frag.schema != SCHEMA_ID {
            return Err(MergeError::Schema(frag.schema));
        }
        if frag.provenance.log_digest != out.provenance.log_digest {
            return Err(MergeError::Digest { expected: out.provenance.log_digest, found: frag.provenance.log_digest });
        }
        for (role, digest) in frag.provenance.inputs {
            match out.provenance.inputs.get(&role) {
                Some(d) if *d != digest => return Err(MergeError::Conflict("input digests")),
                _ => {
                    out.provenance.inputs.insert(role, digest);
                }
            }
        }
        take("config", &mut out.config, frag.config)?;
        take("counts", &mut out.counts, frag.counts)?;
        take("estimate_set", &mut out.estimate_set, frag.estimate_set)?;
        take("insufficient_data", &mut out.insufficient_data, frag.insufficient_data)?;
        take("sla_tests", &mut out.sla_tests, frag.sla_tests)?;
        take("detection", &mut out.detection, frag.detection)?;
        take("sla_metrics", &mut out.sla_metrics, frag.sla_metrics)?;
    }
    Ok(out)
}
