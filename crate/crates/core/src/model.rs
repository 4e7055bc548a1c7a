//! Domain types shared by the simulator, the live prober and the analysis code.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use url::Url;

use crate::error::{ConfigError, LogError};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Whether a campaign is synthesized from a ground-truth timeline or run live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Simulate,
    Live,
}

/// Probe schedule and retry policy of a measurement campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    /// Time between consecutive first attempts (T).
    pub probe_interval_s: f64,
    pub horizon_days: f64,
    pub vantage_points: u32,
    /// Maximum attempts per slot, first attempt included.
    pub retry_max: u32,
    #[serde(default = "default_retry_gap")]
    pub retry_gap_s: f64,
    #[serde(default)]
    pub seed: u64,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    /// Phase step between vantage points: vantage `v` probes at
    /// `(v * vantage_phase_s) mod T + k * T`. Zero keeps all vantage points in lock-step.
    #[serde(default)]
    pub vantage_phase_s: f64,
}

fn default_retry_gap() -> f64 {
    1.0
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field: &'static str, reason: String| Err(ConfigError::Field { field, reason });
        if !(self.probe_interval_s.is_finite() && self.probe_interval_s > 0.0) {
            return bad("probe_interval_s", format!("must be > 0, got {}", self.probe_interval_s));
        }
        if !(self.horizon_days.is_finite() && self.horizon_days > 0.0) {
            return bad("horizon_days", format!("must be > 0, got {}", self.horizon_days));
        }
        if self.vantage_points == 0 {
            return bad("vantage_points", "must be >= 1".into());
        }
        if self.retry_max == 0 {
            return bad("retry_max", "must be >= 1".into());
        }
        if !(self.retry_gap_s.is_finite() && self.retry_gap_s >= 0.0) {
            return bad("retry_gap_s", format!("must be >= 0, got {}", self.retry_gap_s));
        }
        if self.retry_window_s() >= self.probe_interval_s {
            return bad(
                "retry_gap_s",
                format!(
                    "retry window {} s (retry_gap_s * (retry_max - 1)) must be shorter than probe_interval_s {}",
                    self.retry_window_s(),
                    self.probe_interval_s
                ),
            );
        }
        if !(self.vantage_phase_s.is_finite() && self.vantage_phase_s >= 0.0) {
            return bad("vantage_phase_s", format!("must be >= 0, got {}", self.vantage_phase_s));
        }
        match (self.mode, &self.target) {
            (Mode::Live, None) => return bad("target", "required in live mode".into()),
            (_, Some(target)) => {
                let url = Url::parse(target)
                    .map_err(|e| ConfigError::Field { field: "target", reason: e.to_string() })?;
                if url.scheme() != "http" && url.scheme() != "https" {
                    return bad("target", format!("unsupported URL scheme {:?}", url.scheme()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn horizon_s(&self) -> f64 {
        self.horizon_days * SECONDS_PER_DAY
    }

    /// Time between the first and the last possible attempt of a slot.
    pub fn retry_window_s(&self) -> f64 {
        self.retry_gap_s * f64::from(self.retry_max - 1)
    }

    /// Number of slots each vantage point runs over the horizon.
    pub fn slots_per_vantage(&self) -> u64 {
        // the epsilon absorbs representation error when the horizon is an exact multiple of T
        (self.horizon_s() / self.probe_interval_s * (1.0 + 1e-12)).floor() as u64
    }

    /// Phase offset of the given vantage point within a slot.
    pub fn vantage_offset_s(&self, vantage: u32) -> f64 {
        (f64::from(vantage) * self.vantage_phase_s) % self.probe_interval_s
    }

    /// Timestamp of the first attempt of a slot.
    pub fn slot_epoch_s(&self, vantage: u32, slot: u64) -> f64 {
        self.vantage_offset_s(vantage) + slot as f64 * self.probe_interval_s
    }
}

/// Number of first attempts a campaign issues: one per slot per vantage point.
///
/// The published campaign tables follow this arithmetic up to per-vantage rounding
/// (11-minute slots over 75 days give 9818 slots per vantage point, so 54 vantage
/// points yield 530172 rather than a rounded-up figure).
pub fn expected_tries(config: &CampaignConfig) -> Result<u64, ConfigError> {
    config.validate()?;
    Ok(u64::from(config.vantage_points) * config.slots_per_vantage())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cause {
    Cloud,
    Network,
}

/// One outage over the half-open interval `[start_s, start_s + duration_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutageEvent {
    pub start_s: f64,
    pub duration_s: f64,
    pub cause: Cause,
}

impl OutageEvent {
    pub fn end_s(&self) -> f64 {
        self.start_s + self.duration_s
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start_s <= t && t < self.end_s()
    }
}

/// Ground truth: every outage that happened over a campaign horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timeline {
    horizon_s: f64,
    events: Vec<OutageEvent>,
}

impl Timeline {
    /// Sorts `events` by start time and checks that they fit the horizon and that
    /// events of the same cause do not overlap.
    pub fn new(horizon_s: f64, mut events: Vec<OutageEvent>) -> Result<Self, ConfigError> {
        if !(horizon_s.is_finite() && horizon_s > 0.0) {
            return Err(ConfigError::Field { field: "horizon_s", reason: format!("must be > 0, got {horizon_s}") });
        }
        for ev in &events {
            if !(ev.duration_s.is_finite() && ev.duration_s > 0.0) {
                return Err(ConfigError::Timeline(format!("outage at {} s has nonpositive duration {}", ev.start_s, ev.duration_s)));
            }
            if !(ev.start_s >= 0.0 && ev.end_s() <= horizon_s) {
                return Err(ConfigError::Timeline(format!(
                    "outage [{}, {}) lies outside the horizon [0, {horizon_s})",
                    ev.start_s,
                    ev.end_s()
                )));
            }
        }
        events.sort_by(|a, b| a.start_s.total_cmp(&b.start_s).then(a.cause.cmp(&b.cause)));
        for cause in [Cause::Cloud, Cause::Network] {
            let mut prev_end = f64::NEG_INFINITY;
            for ev in events.iter().filter(|e| e.cause == cause) {
                if ev.start_s < prev_end {
                    return Err(ConfigError::Timeline(format!("overlapping {cause:?} outages at {} s", ev.start_s)));
                }
                prev_end = ev.end_s();
            }
        }
        Ok(Self { horizon_s, events })
    }

    pub fn empty(horizon_s: f64) -> Result<Self, ConfigError> {
        Self::new(horizon_s, Vec::new())
    }

    pub fn horizon_s(&self) -> f64 {
        self.horizon_s
    }

    pub fn events(&self) -> &[OutageEvent] {
        &self.events
    }

    pub fn events_of(&self, cause: Cause) -> impl Iterator<Item = &OutageEvent> {
        self.events.iter().filter(move |e| e.cause == cause)
    }

    /// Cause of the outage covering `t`, preferring cloud over network.
    pub fn cause_at(&self, t: f64) -> Option<Cause> {
        let idx = self.events.partition_point(|e| e.start_s <= t);
        let mut network = false;
        // events are sorted by start; only the latest-starting event of each cause can cover t
        let mut seen_cloud = false;
        let mut seen_network = false;
        for ev in self.events[..idx].iter().rev() {
            match ev.cause {
                Cause::Cloud if !seen_cloud => {
                    seen_cloud = true;
                    if ev.contains(t) {
                        return Some(Cause::Cloud);
                    }
                }
                Cause::Network if !seen_network => {
                    seen_network = true;
                    network = ev.contains(t);
                }
                _ => {}
            }
            if seen_cloud && seen_network {
                break;
            }
        }
        network.then_some(Cause::Network)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    CloudFail,
    NetworkFail,
    Fail,
}

impl Outcome {
    pub fn is_success(self) -> bool {
        self == Outcome::Success
    }
}

/// Why a live probe attempt failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailReason {
    Dns,
    Connect,
    Timeout,
    Status,
    Digest,
}

impl fmt::Display for FailReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FailReason::Dns => "dns",
            FailReason::Connect => "connect",
            FailReason::Timeout => "timeout",
            FailReason::Status => "status",
            FailReason::Digest => "digest",
        };
        f.write_str(s)
    }
}

/// One probe attempt, serialized as one line of the attempt log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttemptRecord {
    pub ts_s: f64,
    pub vantage: u32,
    pub slot: u64,
    /// 1-based attempt index within the slot.
    pub attempt: u32,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<FailReason>,
}

/// Append-only sequence of attempt records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttemptLog {
    records: Vec<AttemptRecord>,
}

impl AttemptLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: AttemptRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[AttemptRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sorted, deduplicated vantage identifiers present in the log.
    pub fn vantages(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.records.iter().map(|r| r.vantage).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Splits into one log per vantage point, in ascending vantage order.
    pub fn split_by_vantage(&self) -> Vec<(u32, AttemptLog)> {
        let mut by: std::collections::BTreeMap<u32, AttemptLog> = Default::default();
        for r in &self.records {
            by.entry(r.vantage).or_default().push(r.clone());
        }
        by.into_iter().collect()
    }

    /// Checks the slot/attempt structure: attempts of a slot are numbered 1, 2, ...
    /// without gaps, nothing follows a success, and timestamps never decrease
    /// within a vantage stream.
    ///
    /// With `retry_max` given, also rejects attempt indices above it and failed
    /// attempts below it that were not retried.
    pub fn validate(&self, retry_max: Option<u32>) -> Result<(), LogError> {
        #[derive(Clone, Copy)]
        struct SlotState {
            last_attempt: u32,
            done: bool,
        }
        let mut slots: HashMap<(u32, u64), SlotState> = HashMap::new();
        let mut last_ts: HashMap<u32, f64> = HashMap::new();
        for (line, r) in self.records.iter().enumerate() {
            let line = line + 1;
            if !r.ts_s.is_finite() {
                return Err(LogError::Structure { line, vantage: r.vantage, slot: r.slot, reason: "non-finite timestamp".into() });
            }
            if let Some(prev) = last_ts.insert(r.vantage, r.ts_s) {
                if r.ts_s < prev {
                    return Err(LogError::Structure {
                        line,
                        vantage: r.vantage,
                        slot: r.slot,
                        reason: format!("timestamp {} precedes {prev}", r.ts_s),
                    });
                }
            }
            if let Some(max) = retry_max {
                if r.attempt > max {
                    return Err(LogError::Structure {
                        line,
                        vantage: r.vantage,
                        slot: r.slot,
                        reason: format!("attempt {} exceeds retry_max {max}", r.attempt),
                    });
                }
            }
            let key = (r.vantage, r.slot);
            let expected = match slots.get(&key) {
                None => 1,
                Some(st) if st.done => {
                    return Err(LogError::Structure {
                        line,
                        vantage: r.vantage,
                        slot: r.slot,
                        reason: format!("attempt {} after the slot succeeded", r.attempt),
                    })
                }
                Some(st) => st.last_attempt + 1,
            };
            if r.attempt != expected {
                return Err(LogError::Structure {
                    line,
                    vantage: r.vantage,
                    slot: r.slot,
                    reason: format!("attempt {} where {expected} was expected", r.attempt),
                });
            }
            slots.insert(key, SlotState { last_attempt: r.attempt, done: r.outcome.is_success() });
        }
        if let Some(max) = retry_max {
            let mut open: Vec<_> = slots.iter().filter(|(_, st)| !st.done && st.last_attempt < max).map(|(k, st)| (*k, st.last_attempt)).collect();
            open.sort_unstable();
            if let Some(((vantage, slot), last)) = open.first() {
                return Err(LogError::Incomplete { vantage: *vantage, slot: *slot, last_attempt: *last, retry_max: max });
            }
        }
        Ok(())
    }

    /// Largest attempt index in the log, or 1 for an empty log.
    pub fn max_attempt(&self) -> u32 {
        self.records.iter().map(|r| r.attempt).max().unwrap_or(1)
    }
}

impl FromIterator<AttemptRecord> for AttemptLog {
    fn from_iter<I: IntoIterator<Item = AttemptRecord>>(iter: I) -> Self {
        Self { records: iter.into_iter().collect() }
    }
}

impl From<Vec<AttemptRecord>> for AttemptLog {
    fn from(records: Vec<AttemptRecord>) -> Self {
        Self { records }
    }
}

/// Per-attempt-index counters: `y[i]` i-th attempts issued, `x[i]` of them successful.
///
/// Index 0 holds the first attempt. Every failed attempt below `retry_max` is
/// followed by a retry, so `y[i + 1] == y[i] - x[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptCounts {
    y: Vec<u64>,
    x: Vec<u64>,
}

impl AttemptCounts {
    pub fn zeros(retry_max: u32) -> Self {
        let n = retry_max.max(1) as usize;
        Self { y: vec![0; n], x: vec![0; n] }
    }

    pub fn from_vectors(y: Vec<u64>, x: Vec<u64>) -> Result<Self, LogError> {
        if y.is_empty() || y.len() != x.len() {
            return Err(LogError::Counts(format!("y and x must be nonempty and of equal length ({} vs {})", y.len(), x.len())));
        }
        for i in 0..y.len() {
            if x[i] > y[i] {
                return Err(LogError::Counts(format!("x{} = {} exceeds y{} = {}", i + 1, x[i], i + 1, y[i])));
            }
            if i + 1 < y.len() && y[i + 1] != y[i] - x[i] {
                return Err(LogError::Counts(format!("y{} = {} but y{} - x{} = {}", i + 2, y[i + 1], i + 1, i + 1, y[i] - x[i])));
            }
        }
        Ok(Self { y, x })
    }

    /// Aggregates a structurally valid log. `retry_max` fixes the vector length.
    pub fn from_log(log: &AttemptLog, retry_max: u32) -> Result<Self, LogError> {
        log.validate(Some(retry_max))?;
        let mut counts = Self::zeros(retry_max);
        for r in log.records() {
            let i = (r.attempt - 1) as usize;
            counts.y[i] += 1;
            if r.outcome.is_success() {
                counts.x[i] += 1;
            }
        }
        debug_assert!(Self::from_vectors(counts.y.clone(), counts.x.clone()).is_ok());
        Ok(counts)
    }

    pub fn retry_max(&self) -> u32 {
        self.y.len() as u32
    }

    pub fn y(&self) -> &[u64] {
        &self.y
    }

    pub fn x(&self) -> &[u64] {
        &self.x
    }

    pub fn y1(&self) -> u64 {
        self.y[0]
    }

    pub fn x1(&self) -> u64 {
        self.x[0]
    }

    pub fn total_successes(&self) -> u64 {
        self.x.iter().sum()
    }

    pub fn total_attempts(&self) -> u64 {
        self.y.iter().sum()
    }

    /// Sums two campaigns' counts, padding the shorter retry policy with zeros.
    pub fn merge(&self, other: &AttemptCounts) -> AttemptCounts {
        let n = self.y.len().max(other.y.len());
        let get = |v: &[u64], i: usize| v.get(i).copied().unwrap_or(0);
        let y = (0..n).map(|i| get(&self.y, i) + get(&other.y, i)).collect();
        let x = (0..n).map(|i| get(&self.x, i) + get(&other.x, i)).collect();
        AttemptCounts { y, x }
    }
}

/// Counts the attempts of a log; see [`AttemptCounts::from_log`].
pub fn aggregate_counts(log: &AttemptLog, retry_max: u32) -> Result<AttemptCounts, LogError> {
    AttemptCounts::from_log(log, retry_max)
}
