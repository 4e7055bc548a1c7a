//! Availability estimators over attempt counts, the retry overestimation factor,
//! and the one-sided binomial test of an SLA availability claim.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::beta_reg;

use crate::error::EstimateError;
use crate::model::AttemptCounts;

/// Availability with retries credited: all successes over first attempts.
pub fn estimate_p_star(counts: &AttemptCounts) -> Result<f64, EstimateError> {
    match counts.y1() {
        0 => Err(EstimateError::InsufficientData("no first attempts")),
        y1 => Ok(counts.total_successes() as f64 / y1 as f64),
    }
}

/// Availability from first attempts only.
pub fn estimate_p1(counts: &AttemptCounts) -> Result<f64, EstimateError> {
    match counts.y1() {
        0 => Err(EstimateError::InsufficientData("no first attempts")),
        y1 => Ok(counts.x1() as f64 / y1 as f64),
    }
}

/// Per-attempt success rate pooled over all attempt indices.
pub fn estimate_pn(counts: &AttemptCounts) -> Result<f64, EstimateError> {
    match counts.total_attempts() {
        0 => Err(EstimateError::InsufficientData("no attempts")),
        total => Ok(counts.total_successes() as f64 / total as f64),
    }
}

/// Ratio between the slot success probability with `n` independent attempts and
/// the single-attempt availability `p`: `(1 - (1-p)^n) / p`.
pub fn overestimation_factor(p: f64, n: u32) -> Result<f64, EstimateError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(EstimateError::Domain(format!("availability must lie in (0, 1], got {p}")));
    }
    if n == 0 {
        return Err(EstimateError::Domain("at least one attempt is required".into()));
    }
    // 1 - (1-p)^n without cancellation
    let slot_success = -(f64::from(n) * (-p).ln_1p()).exp_m1();
    Ok(slot_success / p)
}

/// [`overestimation_factor`] for a `k`-nines availability:
/// `(1 - 10^(-k n)) / (1 - 10^(-k))`.
pub fn overestimation_factor_nines(k: f64, n: u32) -> Result<f64, EstimateError> {
    if !(k.is_finite() && k > 0.0) {
        return Err(EstimateError::Domain(format!("nines must be > 0, got {k}")));
    }
    if n == 0 {
        return Err(EstimateError::Domain("at least one attempt is required".into()));
    }
    let ln10 = std::f64::consts::LN_10;
    Ok((-k * f64::from(n) * ln10).exp_m1() / (-k * ln10).exp_m1())
}

/// Wald standard error of a proportion.
pub fn standard_error(p1: f64, y1: u64) -> Result<f64, EstimateError> {
    if y1 == 0 {
        return Err(EstimateError::InsufficientData("no first attempts"));
    }
    if !(0.0..=1.0).contains(&p1) {
        return Err(EstimateError::Domain(format!("proportion must lie in [0, 1], got {p1}")));
    }
    Ok((p1 * (1.0 - p1) / y1 as f64).sqrt())
}

/// Number of nines: `-log10(1 - p)`.
pub fn nines(p: f64) -> Result<f64, EstimateError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(EstimateError::Domain(format!("nines are defined for 0 < p < 1, got {p}")));
    }
    Ok(-(-p).ln_1p() / std::f64::consts::LN_10)
}

/// Availability of a `k`-nines service: `1 - 10^(-k)`.
pub fn from_nines(k: f64) -> f64 {
    -(-k * std::f64::consts::LN_10).exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    #[default]
    Wald,
    ClopperPearson,
}

fn z_quantile(q: f64) -> f64 {
    Normal::standard().inverse_cdf(q)
}

/// Two-sided Wald interval `p1 ± z σ`, clipped to [0, 1].
pub fn wald_interval(p1: f64, y1: u64, alpha: f64) -> Result<(f64, f64), EstimateError> {
    check_alpha(alpha)?;
    let half = z_quantile(1.0 - alpha / 2.0) * standard_error(p1, y1)?;
    Ok(((p1 - half).max(0.0), (p1 + half).min(1.0)))
}

/// Probability of at most `x` successes in `n` trials with success probability `p`.
pub fn binomial_cdf(x: u64, n: u64, p: f64) -> f64 {
    if x >= n {
        return 1.0;
    }
    if p <= 0.0 {
        return 1.0;
    }
    if p >= 1.0 {
        return 0.0;
    }
    1.0 - beta_reg((x + 1) as f64, (n - x) as f64, p)
}

/// Probability of at least `x` successes in `n` trials.
fn binomial_sf_incl(x: u64, n: u64, p: f64) -> f64 {
    if x == 0 {
        return 1.0;
    }
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    beta_reg(x as f64, (n - x + 1) as f64, p)
}

/// Root of a monotone function on [0, 1] by bisection.
fn bisect(mut lo: f64, mut hi: f64, increasing: bool, target: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let above = f(mid) > target;
        if above == increasing {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exact Clopper-Pearson interval for `x` successes in `n` trials.
pub fn clopper_pearson_interval(x: u64, n: u64, alpha: f64) -> Result<(f64, f64), EstimateError> {
    check_alpha(alpha)?;
    if n == 0 {
        return Err(EstimateError::InsufficientData("no first attempts"));
    }
    if x > n {
        return Err(EstimateError::Domain(format!("{x} successes exceed {n} trials")));
    }
    let tail = alpha / 2.0;
    let low = if x == 0 { 0.0 } else { bisect(0.0, 1.0, true, tail, |p| binomial_sf_incl(x, n, p)) };
    let high = if x == n { 1.0 } else { bisect(0.0, 1.0, false, tail, |p| binomial_cdf(x, n, p)) };
    Ok((low, high))
}

fn check_alpha(alpha: f64) -> Result<(), EstimateError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(EstimateError::Domain(format!("significance level must lie in (0, 1), got {alpha}")))
    }
}

/// Every estimate derived from one set of attempt counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSet {
    pub y1: u64,
    pub x1: u64,
    pub p1: f64,
    pub pn: f64,
    pub p_star: f64,
    pub sigma: f64,
    /// Absent when `p1 == 1`.
    pub nines: Option<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci_kind: IntervalKind,
    pub alpha: f64,
}

impl EstimateSet {
    pub fn from_counts(counts: &AttemptCounts, alpha: f64, ci_kind: IntervalKind) -> Result<Self, EstimateError> {
        let p1 = estimate_p1(counts)?;
        let (ci_low, ci_high) = match ci_kind {
            IntervalKind::Wald => wald_interval(p1, counts.y1(), alpha)?,
            IntervalKind::ClopperPearson => clopper_pearson_interval(counts.x1(), counts.y1(), alpha)?,
        };
        Ok(Self {
            y1: counts.y1(),
            x1: counts.x1(),
            p1,
            pn: estimate_pn(counts)?,
            p_star: estimate_p_star(counts)?,
            sigma: standard_error(p1, counts.y1())?,
            nines: if p1 <= 0.0 { Some(0.0) } else { nines(p1).ok() },
            // the bisection tolerance can leave the bound a hair past p1 at the edges
            ci_low: ci_low.min(p1),
            ci_high: ci_high.max(p1),
            ci_kind,
            alpha,
        })
    }
}

/// An advertised availability to test observed counts against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlaClaim {
    pub claimed_availability: f64,
    pub alpha: f64,
}

impl SlaClaim {
    pub fn new(claimed_availability: f64, alpha: f64) -> Result<Self, EstimateError> {
        if !(claimed_availability > 0.0 && claimed_availability < 1.0) {
            return Err(EstimateError::Domain(format!("claimed availability must lie in (0, 1), got {claimed_availability}")));
        }
        check_alpha(alpha)?;
        Ok(Self { claimed_availability, alpha })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    /// Binomial CDF at the observed success count.
    Exact,
    /// One-sided z test with the null variance.
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlaTestResult {
    pub claimed_availability: f64,
    pub alpha: f64,
    pub observed_p1: f64,
    pub y1: u64,
    pub x1: u64,
    pub method: TestMethod,
    /// z statistic; set for the normal method only.
    pub z: Option<f64>,
    pub p_value: f64,
    pub reject: bool,
}

/// Whether the normal approximation is adequate for `y1` trials at `p0`.
pub fn normal_approximation_valid(y1: u64, p0: f64) -> bool {
    y1 as f64 * p0.min(1.0 - p0) > 50.0
}

/// One-sided test of H0: availability >= claim against H1: availability < claim,
/// on first-attempt successes. Uses the exact binomial tail.
pub fn sla_test(counts: &AttemptCounts, claim: &SlaClaim) -> Result<SlaTestResult, EstimateError> {
    sla_test_with(counts, claim, TestMethod::Exact)
}

pub fn sla_test_with(counts: &AttemptCounts, claim: &SlaClaim, method: TestMethod) -> Result<SlaTestResult, EstimateError> {
    let (y1, x1) = (counts.y1(), counts.x1());
    if y1 == 0 {
        return Err(EstimateError::InsufficientData("no first attempts"));
    }
    let p0 = claim.claimed_availability;
    let observed = x1 as f64 / y1 as f64;
    let (z, p_value) = match method {
        TestMethod::Exact => (None, binomial_cdf(x1, y1, p0)),
        TestMethod::Normal => {
            let z = (observed - p0) / (p0 * (1.0 - p0) / y1 as f64).sqrt();
            (Some(z), Normal::standard().cdf(z))
        }
    };
    Ok(SlaTestResult {
        claimed_availability: p0,
        alpha: claim.alpha,
        observed_p1: observed,
        y1,
        x1,
        method,
        z,
        p_value,
        reject: p_value < claim.alpha,
    })
}
