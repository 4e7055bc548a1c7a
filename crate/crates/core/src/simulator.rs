//! Ground-truth outage generation and synthetic probe campaigns.
//!
//! Cloud outages follow an alternating renewal process: exponential up periods
//! separated by outages whose durations are drawn i.i.d. from a
//! [`DurationDistribution`]. Network trouble is overlaid in two independent ways,
//! a per-attempt failure probability and optional Poisson-placed bursts stored in
//! the timeline with [`Cause::Network`].
//!
//! Every random stream is a ChaCha substream keyed by `(seed, purpose)`, so the
//! output depends only on the inputs and never on thread scheduling.

use rand::distr::{Distribution, Open01};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::model::{AttemptLog, AttemptRecord, CampaignConfig, Cause, OutageEvent, Outcome, Timeline, SECONDS_PER_DAY};

const STREAM_CLOUD: u64 = 1;
const STREAM_NETWORK: u64 = 2;
const STREAM_VANTAGE_BASE: u64 = 1 << 32;

/// Deterministic random substream for one purpose.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Law of outage durations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DurationDistribution {
    Fixed { value_s: f64 },
    Exponential { mean_s: f64 },
    /// Generalized Pareto with shape ξ, scale β and location μ.
    GeneralizedPareto { shape: f64, scale: f64, location: f64 },
    /// Resamples the listed durations with replacement.
    Empirical { durations_s: Vec<f64> },
}

impl DurationDistribution {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        match self {
            DurationDistribution::Fixed { value_s } if !positive(*value_s) => {
                Err(ConfigError::Process(format!("fixed duration must be > 0, got {value_s}")))
            }
            DurationDistribution::Exponential { mean_s } if !positive(*mean_s) => {
                Err(ConfigError::Process(format!("exponential mean must be > 0, got {mean_s}")))
            }
            DurationDistribution::GeneralizedPareto { shape, scale, location } => {
                if !shape.is_finite() || !positive(*scale) || !(location.is_finite() && *location >= 0.0) {
                    Err(ConfigError::Process(format!(
                        "generalized Pareto needs finite shape, scale > 0 and location >= 0 (got {shape}, {scale}, {location})"
                    )))
                } else {
                    Ok(())
                }
            }
            DurationDistribution::Empirical { durations_s } => {
                if durations_s.is_empty() || !durations_s.iter().all(|&d| positive(d)) {
                    Err(ConfigError::Process("empirical durations must be a nonempty list of positive values".into()))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Mean duration, if finite.
    pub fn mean_s(&self) -> Option<f64> {
        match self {
            DurationDistribution::Fixed { value_s } => Some(*value_s),
            DurationDistribution::Exponential { mean_s } => Some(*mean_s),
            DurationDistribution::GeneralizedPareto { shape, scale, location } => {
                (*shape < 1.0).then(|| location + scale / (1.0 - shape))
            }
            DurationDistribution::Empirical { durations_s } => Some(durations_s.iter().sum::<f64>() / durations_s.len() as f64),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            DurationDistribution::Fixed { value_s } => *value_s,
            DurationDistribution::Exponential { mean_s } => {
                let u: f64 = Open01.sample(rng);
                -mean_s * u.ln()
            }
            DurationDistribution::GeneralizedPareto { shape, scale, location } => {
                // inverse CDF with U in (0, 1) keeps samples strictly above the location
                let u: f64 = Open01.sample(rng);
                if shape.abs() < 1e-12 {
                    location - scale * u.ln()
                } else {
                    location + scale / shape * (u.powf(-shape) - 1.0)
                }
            }
            DurationDistribution::Empirical { durations_s } => durations_s[rng.random_range(0..durations_s.len())],
        }
    }
}

/// Poisson-placed bursts of network failure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkBurst {
    pub rate_per_day: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutageProcess {
    /// Mean of the exponential up periods.
    pub up_mean_s: f64,
    #[serde(rename = "duration")]
    pub duration_dist: DurationDistribution,
    /// Per-attempt probability q of an independent network failure.
    #[serde(default)]
    pub network_fail_prob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network_burst: Option<NetworkBurst>,
}

impl OutageProcess {
    pub fn new(up_mean_s: f64, duration_dist: DurationDistribution) -> Result<Self, ConfigError> {
        let p = Self { up_mean_s, duration_dist, network_fail_prob: 0.0, network_burst: None };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.up_mean_s.is_finite() && self.up_mean_s > 0.0) {
            return Err(ConfigError::Process(format!("up_mean_s must be > 0, got {}", self.up_mean_s)));
        }
        if !(0.0..1.0).contains(&self.network_fail_prob) {
            return Err(ConfigError::Process(format!("network_fail_prob must lie in [0, 1), got {}", self.network_fail_prob)));
        }
        if let Some(b) = self.network_burst {
            if !(b.rate_per_day.is_finite() && b.rate_per_day >= 0.0 && b.duration_s.is_finite() && b.duration_s > 0.0) {
                return Err(ConfigError::Process(format!("network burst needs rate_per_day >= 0 and duration_s > 0, got {b:?}")));
            }
        }
        self.duration_dist.validate()
    }

    /// Long-run fraction of time in cloud outage, when the mean duration is finite.
    pub fn steady_state_unavailability(&self) -> Option<f64> {
        self.duration_dist.mean_s().map(|d| d / (self.up_mean_s + d))
    }
}

/// Draws a ground-truth timeline over `[0, horizon_s)`.
///
/// Starts in the up state. An outage running past the horizon is cut at the horizon.
pub fn generate_timeline(process: &OutageProcess, horizon_s: f64, seed: u64) -> Result<Timeline, ConfigError> {
    process.validate()?;
    let mut events = Vec::new();

    let mut rng = substream(seed, STREAM_CLOUD);
    let up = Exp::new(1.0 / process.up_mean_s).map_err(|e| ConfigError::Process(e.to_string()))?;
    let mut t = 0.0;
    loop {
        t += up.sample(&mut rng);
        if t >= horizon_s {
            break;
        }
        let d = process.duration_dist.sample(&mut rng);
        let cut = d.min(horizon_s - t);
        if cut > 0.0 {
            events.push(OutageEvent { start_s: t, duration_s: cut, cause: Cause::Cloud });
        }
        t += d;
    }

    if let Some(burst) = process.network_burst.filter(|b| b.rate_per_day > 0.0) {
        let mut rng = substream(seed, STREAM_NETWORK);
        let arrivals = Exp::new(burst.rate_per_day / SECONDS_PER_DAY).map_err(|e| ConfigError::Process(e.to_string()))?;
        let mut bursts: Vec<OutageEvent> = Vec::new();
        let mut t = 0.0;
        loop {
            t += arrivals.sample(&mut rng);
            if t >= horizon_s {
                break;
            }
            let end = (t + burst.duration_s).min(horizon_s);
            // an arrival inside the previous burst extends it so bursts stay disjoint
            match bursts.last_mut() {
                Some(prev) if t < prev.end_s() => prev.duration_s = end.max(prev.end_s()) - prev.start_s,
                _ => bursts.push(OutageEvent { start_s: t, duration_s: end - t, cause: Cause::Network }),
            }
        }
        events.extend(bursts);
    }

    Timeline::new(horizon_s, events)
}

/// Probes `timeline` with the slot/retry schedule of `config`.
///
/// An attempt inside a cloud outage fails with `cloud_fail`; otherwise it fails with
/// `network_fail` when inside a network burst or with probability
/// `network_fail_prob`; otherwise it succeeds. Records are ordered by
/// `(ts_s, vantage, slot, attempt)`.
pub fn sample_campaign(timeline: &Timeline, config: &CampaignConfig, network_fail_prob: f64) -> Result<AttemptLog, ConfigError> {
    config.validate()?;
    if !(0.0..1.0).contains(&network_fail_prob) {
        return Err(ConfigError::Process(format!("network_fail_prob must lie in [0, 1), got {network_fail_prob}")));
    }
    if timeline.horizon_s() < config.horizon_s() * (1.0 - 1e-12) {
        return Err(ConfigError::Field {
            field: "horizon_days",
            reason: format!("timeline covers {} s but the campaign needs {} s", timeline.horizon_s(), config.horizon_s()),
        });
    }
    let slots = config.slots_per_vantage();
    let streams: Vec<Vec<AttemptRecord>> = (0..config.vantage_points)
        .into_par_iter()
        .map(|vantage| {
            let mut rng = substream(config.seed, STREAM_VANTAGE_BASE + u64::from(vantage));
            let mut out = Vec::with_capacity(slots as usize);
            for slot in 0..slots {
                let epoch = config.slot_epoch_s(vantage, slot);
                for attempt in 1..=config.retry_max {
                    let ts_s = epoch + f64::from(attempt - 1) * config.retry_gap_s;
                    // one draw per attempt regardless of outcome keeps the stream aligned across configurations
                    let coin: f64 = rng.random();
                    let outcome = match timeline.cause_at(ts_s) {
                        Some(Cause::Cloud) => Outcome::CloudFail,
                        Some(Cause::Network) => Outcome::NetworkFail,
                        None if coin < network_fail_prob => Outcome::NetworkFail,
                        None => Outcome::Success,
                    };
                    out.push(AttemptRecord { ts_s, vantage, slot, attempt, outcome, latency_ms: None, reason: None });
                    if outcome.is_success() {
                        break;
                    }
                }
            }
            out
        })
        .collect();
    let mut records: Vec<AttemptRecord> = streams.into_iter().flatten().collect();
    records.sort_by(|a, b| {
        a.ts_s.total_cmp(&b.ts_s).then(a.vantage.cmp(&b.vantage)).then(a.slot.cmp(&b.slot)).then(a.attempt.cmp(&b.attempt))
    });
    Ok(records.into())
}

/// Which outages count towards [`true_unavailability`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CauseFilter {
    Cloud,
    Network,
    Any,
}

impl CauseFilter {
    fn admits(self, cause: Cause) -> bool {
        match self {
            CauseFilter::Cloud => cause == Cause::Cloud,
            CauseFilter::Network => cause == Cause::Network,
            CauseFilter::Any => true,
        }
    }
}

/// Fraction of the horizon covered by the filtered outages.
///
/// With [`CauseFilter::Any`] overlapping cloud and network intervals are counted once.
pub fn true_unavailability(timeline: &Timeline, filter: CauseFilter) -> f64 {
    let mut covered = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for ev in timeline.events().iter().filter(|e| filter.admits(e.cause)) {
        match cur {
            Some((s, e)) if ev.start_s <= e => cur = Some((s, e.max(ev.end_s()))),
            Some((s, e)) => {
                covered += e - s;
                cur = Some((ev.start_s, ev.end_s()));
            }
            None => cur = Some((ev.start_s, ev.end_s())),
        }
    }
    if let Some((s, e)) = cur {
        covered += e - s;
    }
    covered / timeline.horizon_s()
}

/// Test hook: campaigns where every attempt fails independently.
///
/// This bypasses the renewal model entirely. Each attempt succeeds with
/// probability `success_prob` regardless of history, the setting in which the
/// retry-inflated estimate converges to the geometric slot-success probability.
pub mod iid {
    use super::*;

    pub fn sample_iid_campaign(success_prob: f64, slots: u64, retry_max: u32, seed: u64) -> AttemptLog {
        assert!((0.0..=1.0).contains(&success_prob), "success_prob must lie in [0, 1]");
        assert!(retry_max >= 1, "retry_max must be >= 1");
        let mut rng = substream(seed, 0);
        let mut log = AttemptLog::new();
        for slot in 0..slots {
            for attempt in 1..=retry_max {
                let ok = rng.random::<f64>() < success_prob;
                log.push(AttemptRecord {
                    ts_s: slot as f64 + f64::from(attempt - 1) * 1e-3,
                    vantage: 0,
                    slot,
                    attempt,
                    outcome: if ok { Outcome::Success } else { Outcome::CloudFail },
                    latency_ms: None,
                    reason: None,
                });
                if ok {
                    break;
                }
            }
        }
        log
    }
}
