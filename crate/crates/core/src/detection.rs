//! Outage censoring: how periodic probing misses or merges short outages.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, EstimateError, LogError};
use crate::model::{AttemptLog, CampaignConfig, Cause, Mode, OutageEvent, Timeline, SECONDS_PER_DAY};
use crate::simulator::{sample_campaign, substream};

/// Probability that an outage of length `outage_s` falls entirely between two
/// probes `interval_s` apart, with its start uniform within the interval.
pub fn p_nodetect(outage_s: f64, interval_s: f64) -> Result<f64, EstimateError> {
    if !(outage_s > 0.0 && interval_s > 0.0) {
        return Err(EstimateError::Domain(format!("outage length and interval must be > 0, got {outage_s} and {interval_s}")));
    }
    Ok(if interval_s <= outage_s { 0.0 } else { 1.0 - outage_s / interval_s })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub l_over_t: f64,
    pub p_nodet: f64,
}

/// Tabulates [`p_nodetect`] over outage lengths, abscissa normalized by the interval.
pub fn nodetect_curve(interval_s: f64, lengths_s: &[f64]) -> Result<Vec<CurvePoint>, EstimateError> {
    lengths_s
        .iter()
        .map(|&l| Ok(CurvePoint { l_over_t: l / interval_s, p_nodet: p_nodetect(l, interval_s)? }))
        .collect()
}

/// `points` evenly spaced outage lengths covering `(0, 1.5 T]`.
pub fn default_curve_grid(interval_s: f64, points: usize) -> Vec<f64> {
    (1..=points).map(|i| 1.5 * interval_s * i as f64 / points as f64).collect()
}

pub const CURVE_CSV_HEADER: &str = "l_over_t,p_nodet";

pub fn write_curve_csv<W: Write>(curve: &[CurvePoint], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CURVE_CSV_HEADER}")?;
    for p in curve {
        writeln!(w, "{},{}", p.l_over_t, p.p_nodet)?;
    }
    Ok(())
}

/// Which attempt decides whether a slot counts as failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DetectionBasis {
    /// The slot's last attempt, after retries.
    #[default]
    FinalAttempt,
    FirstAttempt,
}

/// A maximal run of consecutive failed slots in one vantage stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectedOutage {
    pub vantage: u32,
    pub first_slot: u64,
    pub slot_count: u64,
    /// First-attempt timestamp of the first failed slot.
    pub start_s: f64,
    /// `slot_count * T`.
    pub duration_s: f64,
}

/// Groups consecutive failed slots of a single-vantage log into outages.
pub fn detect_outages(log: &AttemptLog, config: &CampaignConfig, basis: DetectionBasis) -> Result<Vec<DetectedOutage>, LogError> {
    let vantages = log.vantages();
    if vantages.len() > 1 {
        return Err(LogError::MixedVantage(vantages.len()));
    }
    log.validate(None)?;
    let Some(&vantage) = vantages.first() else {
        return Ok(Vec::new());
    };

    // (slot, first-attempt ts, failed), in slot order
    let mut slots: std::collections::BTreeMap<u64, (f64, bool)> = Default::default();
    for r in log.records() {
        let failed = !r.outcome.is_success();
        let entry = slots.entry(r.slot).or_insert((r.ts_s, failed));
        match basis {
            DetectionBasis::FirstAttempt if r.attempt == 1 => entry.1 = failed,
            DetectionBasis::FinalAttempt => entry.1 = failed,
            _ => {}
        }
        if r.attempt == 1 {
            entry.0 = r.ts_s;
        }
    }

    let mut out: Vec<DetectedOutage> = Vec::new();
    let mut prev_failed_slot: Option<u64> = None;
    for (&slot, &(ts, failed)) in &slots {
        if !failed {
            prev_failed_slot = None;
            continue;
        }
        match (prev_failed_slot, out.last_mut()) {
            (Some(prev), Some(run)) if prev + 1 == slot => {
                run.slot_count += 1;
                run.duration_s = run.slot_count as f64 * config.probe_interval_s;
            }
            _ => out.push(DetectedOutage { vantage, first_slot: slot, slot_count: 1, start_s: ts, duration_s: config.probe_interval_s }),
        }
        prev_failed_slot = Some(slot);
    }
    Ok(out)
}

/// Detection statistics for true outages whose duration falls in `[lo_s, hi_s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationBin {
    pub lo_s: f64,
    /// Absent for the open-ended last bin.
    pub hi_s: Option<f64>,
    pub outages: u64,
    pub undetected: u64,
    /// [`p_nodetect`] at the bin midpoint (at `lo_s` for the open bin).
    pub analytic_p_nodet: f64,
    /// Absent when the bin is empty.
    pub empirical_p_nodet: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationEstimate {
    pub true_s: f64,
    pub estimated_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub basis: DetectionBasis,
    pub total_true_outages: u64,
    pub detected: u64,
    pub undetected: u64,
    pub per_duration_bins: Vec<DurationBin>,
    /// True duration of each cloud outage paired with the run-length estimate of
    /// the detected outage overlapping it, taken from the lowest vantage id.
    pub duration_estimates: Vec<DurationEstimate>,
    /// Empirical CDF of the run-length estimates, as `(duration_s, fraction <= duration_s)`.
    pub estimated_duration_ecdf: Vec<(f64, f64)>,
}

/// Bin edges `0, 0.1 T, ..., 1.5 T`; the last bin is open-ended.
pub fn default_bin_edges(interval_s: f64) -> Vec<f64> {
    (0..=15).map(|i| interval_s * i as f64 / 10.0).collect()
}

/// Compares the true cloud outages with what the log saw.
///
/// An outage counts as detected when any attempt timestamp, first attempt or
/// retry, falls inside it.
pub fn detection_report(
    truth: &Timeline,
    log: &AttemptLog,
    config: &CampaignConfig,
    bin_edges: &[f64],
    basis: DetectionBasis,
) -> Result<DetectionReport, LogError> {
    let mut stamps: Vec<f64> = log.records().iter().map(|r| r.ts_s).collect();
    stamps.sort_by(f64::total_cmp);
    let seen = |ev: &OutageEvent| {
        let i = stamps.partition_point(|&t| t < ev.start_s);
        i < stamps.len() && stamps[i] < ev.end_s()
    };

    let cloud: Vec<(&OutageEvent, bool)> = truth.events_of(Cause::Cloud).map(|ev| (ev, seen(ev))).collect();
    let detected = cloud.iter().filter(|(_, d)| *d).count() as u64;

    let mut per_duration_bins = Vec::with_capacity(bin_edges.len());
    for (i, &lo) in bin_edges.iter().enumerate() {
        let hi = bin_edges.get(i + 1).copied();
        let inside: Vec<bool> = cloud
            .iter()
            .filter(|(ev, _)| ev.duration_s >= lo && hi.is_none_or(|h| ev.duration_s < h))
            .map(|(_, d)| *d)
            .collect();
        let undetected = inside.iter().filter(|d| !**d).count() as u64;
        let probe = match hi {
            Some(h) => 0.5 * (lo + h),
            None => lo,
        };
        per_duration_bins.push(DurationBin {
            lo_s: lo,
            hi_s: hi,
            outages: inside.len() as u64,
            undetected,
            analytic_p_nodet: if probe > 0.0 { p_nodetect(probe, config.probe_interval_s).unwrap_or(1.0) } else { 1.0 },
            empirical_p_nodet: (!inside.is_empty()).then(|| undetected as f64 / inside.len() as f64),
        });
    }

    let runs = match log.split_by_vantage().into_iter().next() {
        Some((_, stream)) => detect_outages(&stream, config, basis)?,
        None => Vec::new(),
    };
    let mut duration_estimates = Vec::new();
    for (ev, _) in &cloud {
        let j = runs.partition_point(|r| r.start_s + r.duration_s <= ev.start_s);
        if let Some(run) = runs.get(j).filter(|r| r.start_s < ev.end_s()) {
            duration_estimates.push(DurationEstimate { true_s: ev.duration_s, estimated_s: run.duration_s });
        }
    }

    Ok(DetectionReport {
        basis,
        total_true_outages: cloud.len() as u64,
        detected,
        undetected: cloud.len() as u64 - detected,
        per_duration_bins,
        duration_estimates,
        estimated_duration_ecdf: ecdf(runs.iter().map(|r| r.duration_s)),
    })
}

fn ecdf(values: impl Iterator<Item = f64>) -> Vec<(f64, f64)> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        match out.last_mut() {
            Some(last) if last.0 == *x => last.1 = (i + 1) as f64 / n,
            _ => out.push((*x, (i + 1) as f64 / n)),
        }
    }
    out
}

/// Failure count, long-outage count and cumulative outage time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlaMetrics {
    pub failure_count: u64,
    /// Outages strictly longer than the threshold.
    pub long_outage_count: u64,
    pub threshold_s: f64,
    pub cumulative_outage_s: f64,
}

/// Metrics over detected outages.
pub fn sla_metrics(detected: &[DetectedOutage], threshold_s: f64) -> SlaMetrics {
    metrics_from(detected.iter().map(|d| d.duration_s), threshold_s)
}

/// Metrics over the true cloud outages of a timeline.
pub fn true_sla_metrics(truth: &Timeline, threshold_s: f64) -> SlaMetrics {
    metrics_from(truth.events_of(Cause::Cloud).map(|e| e.duration_s), threshold_s)
}

pub fn metrics_from(durations: impl Iterator<Item = f64>, threshold_s: f64) -> SlaMetrics {
    let mut m = SlaMetrics { failure_count: 0, long_outage_count: 0, threshold_s, cumulative_outage_s: 0.0 };
    for d in durations {
        m.failure_count += 1;
        m.cumulative_outage_s += d;
        if d > threshold_s {
            m.long_outage_count += 1;
        }
    }
    m
}

/// Monte Carlo estimate of the non-detection probability.
///
/// Each trial places one cloud outage of length `outage_s` with its start uniform
/// over one probe interval, samples it with single-attempt slots and no network
/// failures, and checks whether any probe saw it.
pub fn nodetect_monte_carlo(outage_s: f64, interval_s: f64, trials: u64, seed: u64) -> Result<f64, ConfigError> {
    if !(outage_s > 0.0 && interval_s > 0.0) || trials == 0 {
        return Err(ConfigError::Field { field: "outage_s", reason: "outage length, interval and trials must be positive".into() });
    }
    let slots_needed = 2.0 + (outage_s / interval_s).ceil() + 1.0;
    let config = CampaignConfig {
        probe_interval_s: interval_s,
        horizon_days: slots_needed * interval_s / SECONDS_PER_DAY,
        vantage_points: 1,
        retry_max: 1,
        retry_gap_s: 0.0,
        seed,
        mode: Mode::Simulate,
        target: None,
        vantage_phase_s: 0.0,
    };
    let horizon = slots_needed * interval_s;
    let mut rng = substream(seed, 0xD7EC);
    let mut missed = 0u64;
    for _ in 0..trials {
        let start = interval_s * (1.0 + rng.random::<f64>());
        let truth = Timeline::new(horizon, vec![OutageEvent { start_s: start, duration_s: outage_s, cause: Cause::Cloud }])?;
        let log = sample_campaign(&truth, &config, 0.0)?;
        let report = detection_report(&truth, &log, &config, &[], DetectionBasis::FinalAttempt)
            .map_err(|e| ConfigError::Timeline(e.to_string()))?;
        missed += report.undetected;
    }
    Ok(missed as f64 / trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AttemptRecord, Outcome};

    fn cfg(interval_s: f64, slots: u64, retry_max: u32) -> CampaignConfig {
        CampaignConfig {
            probe_interval_s: interval_s,
            horizon_days: slots as f64 * interval_s / SECONDS_PER_DAY,
            vantage_points: 1,
            retry_max,
            retry_gap_s: 1.0,
            seed: 0,
            mode: Mode::Simulate,
            target: None,
            vantage_phase_s: 0.0,
        }
    }

    fn slot_log(failed: &[u64], slots: u64) -> AttemptLog {
        (0..slots)
            .map(|s| AttemptRecord {
                ts_s: s as f64 * 600.0,
                vantage: 0,
                slot: s,
                attempt: 1,
                outcome: if failed.contains(&s) { Outcome::Fail } else { Outcome::Success },
                latency_ms: None,
                reason: None,
            })
            .collect()
    }

    #[test]
    fn eq_branches() {
        assert_eq!(p_nodetect(600.0, 600.0).unwrap(), 0.0);
        assert_eq!(p_nodetect(900.0, 600.0).unwrap(), 0.0);
        assert_eq!(p_nodetect(300.0, 600.0).unwrap(), 0.5);
        assert!(p_nodetect(1e-9, 600.0).unwrap() > 1.0 - 1e-11);
        assert!(p_nodetect(0.0, 600.0).is_err());
        assert!(p_nodetect(10.0, -1.0).is_err());
    }

    #[test]
    fn curve_points_and_monotonicity() {
        let curve = nodetect_curve(600.0, &[150.0, 600.0]).unwrap();
        assert_eq!(curve[0], CurvePoint { l_over_t: 0.25, p_nodet: 0.75 });
        assert_eq!(curve[1], CurvePoint { l_over_t: 1.0, p_nodet: 0.0 });
        let grid = default_curve_grid(660.0, 60);
        assert!((grid.last().unwrap() / 660.0 - 1.5).abs() < 1e-12);
        let curve = nodetect_curve(660.0, &grid).unwrap();
        assert!(curve.windows(2).all(|w| w[1].p_nodet <= w[0].p_nodet));
    }

    #[test]
    fn curve_csv_format() {
        let mut buf = Vec::new();
        write_curve_csv(&nodetect_curve(600.0, &[300.0, 600.0]).unwrap(), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "l_over_t,p_nodet\n0.5,0.5\n1,0\n");
    }

    #[test]
    fn detect_runs() {
        let c = cfg(600.0, 12, 1);
        assert!(detect_outages(&slot_log(&[], 12), &c, DetectionBasis::FinalAttempt).unwrap().is_empty());
        let three = detect_outages(&slot_log(&[2, 3, 4], 12), &c, DetectionBasis::FinalAttempt).unwrap();
        assert_eq!(three.len(), 1);
        assert_eq!(three[0].duration_s, 1800.0);
        assert_eq!(three[0].start_s, 1200.0);
        let two = detect_outages(&slot_log(&[4, 5, 9], 12), &c, DetectionBasis::FinalAttempt).unwrap();
        assert_eq!(two.iter().map(|d| (d.first_slot, d.slot_count)).collect::<Vec<_>>(), vec![(4, 2), (9, 1)]);
    }

    #[test]
    fn missing_slot_breaks_run() {
        let c = cfg(600.0, 12, 1);
        let log: AttemptLog = slot_log(&[1, 2, 3], 5).records().iter().filter(|r| r.slot != 2).cloned().collect();
        assert_eq!(detect_outages(&log, &c, DetectionBasis::FinalAttempt).unwrap().len(), 2);
    }

    #[test]
    fn basis_switch() {
        let c = cfg(600.0, 2, 2);
        let rec = |slot, attempt, outcome| AttemptRecord { ts_s: slot as f64 * 600.0 + f64::from(attempt), vantage: 0, slot, attempt, outcome, latency_ms: None, reason: None };
        let log: AttemptLog = vec![rec(0, 1, Outcome::Fail), rec(0, 2, Outcome::Success), rec(1, 1, Outcome::Success)].into();
        assert!(detect_outages(&log, &c, DetectionBasis::FinalAttempt).unwrap().is_empty());
        assert_eq!(detect_outages(&log, &c, DetectionBasis::FirstAttempt).unwrap().len(), 1);
    }

    #[test]
    fn mixed_vantage_is_rejected() {
        let c = cfg(600.0, 2, 1);
        let mut log = slot_log(&[], 1);
        let mut other = log.records()[0].clone();
        other.vantage = 1;
        log.push(other);
        assert!(matches!(detect_outages(&log, &c, DetectionBasis::FinalAttempt), Err(LogError::MixedVantage(2))));
    }

    #[test]
    fn metrics_hand_count() {
        let m = metrics_from([1800.0, 600.0, 7200.0].into_iter(), 3600.0);
        assert_eq!((m.failure_count, m.long_outage_count, m.cumulative_outage_s), (3, 1, 9600.0));
        let m = sla_metrics(&[], 10.0);
        assert_eq!((m.failure_count, m.long_outage_count, m.cumulative_outage_s), (0, 0, 0.0));
        let m = metrics_from([1.0, 2.0].into_iter(), 0.0);
        assert_eq!(m.long_outage_count, m.failure_count);
    }

    #[test]
    fn long_outage_is_always_detected() {
        let c = cfg(600.0, 10, 1);
        let truth = Timeline::new(6000.0, vec![OutageEvent { start_s: 1234.5, duration_s: 600.0, cause: Cause::Cloud }]).unwrap();
        let log = sample_campaign(&truth, &c, 0.0).unwrap();
        let r = detection_report(&truth, &log, &c, &default_bin_edges(600.0), DetectionBasis::FinalAttempt).unwrap();
        assert_eq!((r.detected, r.undetected), (1, 0));
        assert_eq!(r.duration_estimates, vec![DurationEstimate { true_s: 600.0, estimated_s: 600.0 }]);
        let bin = r.per_duration_bins.iter().find(|b| b.outages == 1).unwrap();
        assert_eq!(bin.empirical_p_nodet, Some(0.0));
        assert_eq!(bin.analytic_p_nodet, 0.0);
    }

    #[test]
    fn monte_carlo_half_interval() {
        let rate = nodetect_monte_carlo(300.0, 600.0, 4000, 5).unwrap();
        assert!((rate - 0.5).abs() < 0.04, "{rate}");
    }
}
