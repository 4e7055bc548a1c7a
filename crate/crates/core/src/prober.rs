//! Live HTTP probing on the same slot/retry schedule as the simulator.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use url::Url;

use crate::error::{ConfigError, LogError};
use crate::jsonl::encode_record;
use crate::model::{AttemptRecord, CampaignConfig, FailReason, Mode, Outcome};

pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;

/// Probe settings as written in the `[probe]` section of a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSettings {
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_statuses")]
    pub success_statuses: Vec<u16>,
    /// Hex SHA-256 the response body must match.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_sha256: Option<String>,
}

fn default_timeout_ms() -> u64 {
    DEFAULT_TIMEOUT_MS
}

fn default_statuses() -> Vec<u16> {
    vec![200]
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self { timeout_ms: DEFAULT_TIMEOUT_MS, success_statuses: default_statuses(), expected_sha256: None }
    }
}

/// An object to fetch and the conditions under which the fetch counts as a success.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeTarget {
    url: Url,
    timeout: Duration,
    success_statuses: BTreeSet<u16>,
    expected_sha256: Option<String>,
}

impl ProbeTarget {
    pub fn new(url: &str, settings: &ProbeSettings) -> Result<Self, ConfigError> {
        let url = Url::parse(url).map_err(|e| ConfigError::Field { field: "target", reason: e.to_string() })?;
        if url.scheme() != "http" && url.scheme() != "https" {
            return Err(ConfigError::Field { field: "target", reason: format!("unsupported URL scheme {:?}", url.scheme()) });
        }
        if settings.timeout_ms == 0 {
            return Err(ConfigError::Field { field: "timeout_ms", reason: "must be > 0".into() });
        }
        if settings.success_statuses.is_empty() {
            return Err(ConfigError::Field { field: "success_statuses", reason: "must not be empty".into() });
        }
        let expected_sha256 = match &settings.expected_sha256 {
            Some(h) if h.len() != 64 || !h.chars().all(|c| c.is_ascii_hexdigit()) => {
                return Err(ConfigError::Field { field: "expected_sha256", reason: "must be 64 hex digits".into() })
            }
            h => h.as_ref().map(|h| h.to_ascii_lowercase()),
        };
        Ok(Self {
            url,
            timeout: Duration::from_millis(settings.timeout_ms),
            success_statuses: settings.success_statuses.iter().copied().collect(),
            expected_sha256,
        })
    }

    pub fn url(&self) -> &Url {
        &self.url
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOutcome {
    pub outcome: Outcome,
    pub latency_ms: Option<f64>,
    pub reason: Option<FailReason>,
}

impl ProbeOutcome {
    pub fn success(latency_ms: f64) -> Self {
        Self { outcome: Outcome::Success, latency_ms: Some(latency_ms), reason: None }
    }

    pub fn fail(reason: FailReason) -> Self {
        Self { outcome: Outcome::Fail, latency_ms: None, reason: Some(reason) }
    }
}

/// One way of checking whether a service answers. HTTP is the only
/// implementation; an ICMP echo adapter would plug in here.
pub trait ProbeAdapter {
    fn probe(&self) -> ProbeOutcome;
}

/// Fetches the target object with a GET. Redirects are not followed.
pub struct HttpProbe {
    target: ProbeTarget,
    client: reqwest::blocking::Client,
}

impl HttpProbe {
    pub fn new(target: ProbeTarget) -> Result<Self, ConfigError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(target.timeout)
            .redirect(reqwest::redirect::Policy::none())
            .user_agent(concat!("cloudprobe/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| ConfigError::Field { field: "target", reason: e.to_string() })?;
        Ok(Self { target, client })
    }
}

fn classify(err: &reqwest::Error) -> FailReason {
    if err.is_timeout() {
        return FailReason::Timeout;
    }
    let mut source: Option<&dyn std::error::Error> = Some(err);
    while let Some(e) = source {
        let text = e.to_string().to_ascii_lowercase();
        if text.contains("dns error") || text.contains("failed to lookup address") || text.contains("name or service not known") {
            return FailReason::Dns;
        }
        if let Some(io) = e.downcast_ref::<io::Error>() {
            if io.kind() == io::ErrorKind::TimedOut {
                return FailReason::Timeout;
            }
        }
        source = e.source();
    }
    FailReason::Connect
}

impl ProbeAdapter for HttpProbe {
    fn probe(&self) -> ProbeOutcome {
        let started = Instant::now();
        let response = match self.client.get(self.target.url.clone()).send() {
            Ok(r) => r,
            Err(e) => {
                debug!("probe {} failed: {e}", self.target.url);
                return ProbeOutcome::fail(classify(&e));
            }
        };
        if !self.target.success_statuses.contains(&response.status().as_u16()) {
            debug!("probe {} returned {}", self.target.url, response.status());
            return ProbeOutcome::fail(FailReason::Status);
        }
        let body = match response.bytes() {
            Ok(b) => b,
            Err(e) => return ProbeOutcome::fail(classify(&e)),
        };
        let latency_ms = started.elapsed().as_secs_f64() * 1e3;
        if let Some(expected) = &self.target.expected_sha256 {
            if hex::encode(Sha256::digest(&body)) != *expected {
                return ProbeOutcome::fail(FailReason::Digest);
            }
        }
        ProbeOutcome::success(latency_ms)
    }
}

/// Single GET against `target`.
pub fn probe_once(target: &ProbeTarget) -> Result<ProbeOutcome, ConfigError> {
    Ok(HttpProbe::new(target.clone())?.probe())
}

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write attempt log (last completed slot: {last_completed_slot:?}): {source}")]
    LogWrite { last_completed_slot: Option<u64>, source: io::Error },
    #[error("cannot prepare campaign files: {0}")]
    Setup(#[source] io::Error),
    #[error("bad checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error(transparent)]
    Log(#[from] LogError),
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Continue after the slot recorded in the checkpoint file.
    pub resume: bool,
    /// Stop after this many slots in this run, leaving a resumable campaign.
    pub max_slots: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSummary {
    pub first_slot: u64,
    pub slots_run: u64,
    pub last_completed_slot: Option<u64>,
    pub finished: bool,
}

/// Reads the last completed slot index from a checkpoint file, if it exists.
pub fn read_checkpoint(path: &Path) -> Result<Option<u64>, ProbeError> {
    match fs::read_to_string(path) {
        Ok(text) => text
            .trim()
            .parse()
            .map(Some)
            .map_err(|e| ProbeError::Checkpoint { path: path.to_owned(), reason: format!("{e}: {:?}", text.trim()) }),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(ProbeError::Setup(e)),
    }
}

fn write_checkpoint(path: &Path, slot: u64) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, format!("{slot}\n"))?;
    fs::rename(&tmp, path)
}

/// Drops records past the checkpoint, including a torn final line, and returns
/// the largest timestamp kept.
fn truncate_log(path: &Path, last_completed: Option<u64>) -> Result<f64, ProbeError> {
    let mut kept = String::new();
    let mut last_ts: f64 = 0.0;
    if path.exists() {
        let file = File::open(path).map_err(ProbeError::Setup)?;
        for line in BufReader::new(file).lines() {
            let line = line.map_err(ProbeError::Setup)?;
            let Ok(rec) = serde_json::from_str::<AttemptRecord>(&line) else { continue };
            if last_completed.is_some_and(|c| rec.slot <= c) {
                last_ts = last_ts.max(rec.ts_s);
                kept.push_str(&encode_record(&rec));
            }
        }
    }
    let tmp = path.with_extension("truncate.tmp");
    fs::write(&tmp, kept).map_err(ProbeError::Setup)?;
    fs::rename(&tmp, path).map_err(ProbeError::Setup)?;
    Ok(last_ts)
}

fn sleep_until(deadline: Instant) {
    let now = Instant::now();
    if deadline > now {
        thread::sleep(deadline - now);
    }
}

/// Runs the slot schedule of `config` against `adapter`, appending each attempt to
/// `log_path` and recording each completed slot in `checkpoint_path`.
///
/// Slot `k` starts at `origin + k T` regardless of how long earlier slots took;
/// a slot that overruns only delays the next one until the schedule catches up.
pub fn run_campaign(
    adapter: &dyn ProbeAdapter,
    config: &CampaignConfig,
    log_path: &Path,
    checkpoint_path: &Path,
    options: &RunOptions,
) -> Result<CampaignSummary, ProbeError> {
    config.validate()?;
    if config.mode != Mode::Live {
        return Err(ConfigError::Field { field: "mode", reason: "probing requires mode = \"live\"".into() }.into());
    }
    let total_slots = config.slots_per_vantage();

    let (first_slot, ts_base) = if options.resume {
        let done = read_checkpoint(checkpoint_path)?;
        let last_ts = truncate_log(log_path, done)?;
        let first = done.map_or(0, |d| d + 1);
        info!("resuming campaign at slot {first} of {total_slots}");
        (first, (first as f64 * config.probe_interval_s).max(last_ts))
    } else {
        File::create(log_path).map_err(ProbeError::Setup)?;
        if let Err(e) = fs::remove_file(checkpoint_path) {
            if e.kind() != io::ErrorKind::NotFound {
                return Err(ProbeError::Setup(e));
            }
        }
        (0, 0.0)
    };
    let mut last_completed = first_slot.checked_sub(1);

    let mut log = OpenOptions::new().append(true).open(log_path).map_err(ProbeError::Setup)?;
    let origin = Instant::now();
    let interval = Duration::from_secs_f64(config.probe_interval_s);
    let gap = Duration::from_secs_f64(config.retry_gap_s);
    let end_slot = match options.max_slots {
        Some(m) => total_slots.min(first_slot.saturating_add(m)),
        None => total_slots,
    };

    for slot in first_slot..end_slot {
        let epoch = origin + interval * u32::try_from(slot - first_slot).unwrap_or(u32::MAX);
        sleep_until(epoch);
        for attempt in 1..=config.retry_max {
            sleep_until(epoch + gap * (attempt - 1));
            let ts_s = ts_base + origin.elapsed().as_secs_f64();
            let result = adapter.probe();
            let record = AttemptRecord {
                ts_s,
                vantage: 0,
                slot,
                attempt,
                outcome: result.outcome,
                latency_ms: result.latency_ms,
                reason: result.reason,
            };
            log.write_all(encode_record(&record).as_bytes())
                .and_then(|_| log.flush())
                .map_err(|source| ProbeError::LogWrite { last_completed_slot: last_completed, source })?;
            if result.outcome.is_success() {
                break;
            }
        }
        write_checkpoint(checkpoint_path, slot).map_err(|source| ProbeError::LogWrite { last_completed_slot: last_completed, source })?;
        last_completed = Some(slot);
        if Instant::now() > epoch + interval {
            warn!("slot {slot} overran the probe interval");
        }
    }

    Ok(CampaignSummary {
        first_slot,
        slots_run: end_slot.saturating_sub(first_slot),
        last_completed_slot: last_completed,
        finished: end_slot == total_slots,
    })
}
