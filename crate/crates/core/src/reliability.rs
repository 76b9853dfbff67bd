//! Survivability of probabilistic refresh: the closed form and a Monte-Carlo
//! estimate that exercises the actual random source.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, Binomial, ContinuousCDF, DiscreteCDF};
use thiserror::Error;

use crate::prng::{derive_seed, PrngHandle, PrngKind};

/// Seconds in a 365.25-day year.
pub const SECONDS_PER_YEAR: f64 = 31_557_600.0;
/// Length of one refresh interval in seconds.
pub const REFRESH_INTERVAL_S: f64 = 0.064;
/// Failure probability a Chipkill-protected system is assumed to reach.
pub const CHIPKILL_TARGET: f64 = 1e-4;

/// Number of refresh intervals in `years`.
pub fn q1_for_years(years: f64) -> f64 {
    years * SECONDS_PER_YEAR / REFRESH_INTERVAL_S
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReliabilityError {
    #[error("probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("{0} must be positive")]
    NonPositive(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityQuery {
    pub p: f64,
    pub t: u32,
    /// Hammering windows of `t` accesses per refresh interval.
    pub q0: f64,
    /// Refresh intervals in the horizon.
    pub q1: f64,
}

impl ReliabilityQuery {
    pub fn new(p: f64, t: u32, q0: f64, q1: f64) -> Result<Self, ReliabilityError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(ReliabilityError::BadProbability(p));
        }
        if t == 0 {
            return Err(ReliabilityError::NonPositive("t"));
        }
        if q0.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(ReliabilityError::NonPositive("q0"));
        }
        if q1.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(ReliabilityError::NonPositive("q1"));
        }
        Ok(ReliabilityQuery { p, t, q0, q1 })
    }

    pub fn for_years(p: f64, t: u32, q0: f64, years: f64) -> Result<Self, ReliabilityError> {
        Self::new(p, t, q0, q1_for_years(years))
    }
}

/// Probability that a window of `t` accesses draws no refresh, in log space.
pub fn ln_window_failure(p: f64, t: u32) -> f64 {
    if p >= 1.0 {
        f64::NEG_INFINITY
    } else {
        f64::from(t) * (-p).ln_1p()
    }
}

/// `min(1, (1-p)^T * Q0 * Q1)`.
pub fn unsurvivability(q: &ReliabilityQuery) -> f64 {
    let ln = ln_window_failure(q.p, q.t) + q.q0.ln() + q.q1.ln();
    ln.exp().min(1.0)
}

/// Exact (Clopper-Pearson) interval for a binomial proportion.
pub fn clopper_pearson(successes: u64, trials: u64, confidence: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let a = (1.0 - confidence) / 2.0;
    let (k, n) = (successes as f64, trials as f64);
    let lo = if successes == 0 {
        0.0
    } else {
        Beta::new(k, n - k + 1.0).map(|b| b.inverse_cdf(a)).unwrap_or(0.0)
    };
    let hi = if successes == trials {
        1.0
    } else {
        Beta::new(k + 1.0, n - k)
            .map(|b| b.inverse_cdf(1.0 - a))
            .unwrap_or(1.0)
    };
    (lo, hi)
}

/// Central interval of `Binomial(trials, p)` counts holding `confidence` mass.
pub fn binomial_count_interval(trials: u64, p: f64, confidence: f64) -> (u64, u64) {
    let a = (1.0 - confidence) / 2.0;
    match Binomial::new(p.clamp(0.0, 1.0), trials) {
        Ok(b) => (b.inverse_cdf(a), b.inverse_cdf(1.0 - a)),
        Err(_) => (0, trials),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub p: f64,
    pub t: u32,
    pub prng: PrngKind,
    pub trials: u64,
    /// Refresh intervals per trial.
    pub intervals: u32,
    /// Windows per refresh interval.
    pub q0: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub intervals: u32,
    /// Trials that failed within the first `intervals` intervals.
    pub failed_trials: u64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Closed-form probability of at least one failed window in as many intervals.
    pub analytic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResult {
    pub config: MonteCarloConfig,
    pub windows: u64,
    pub failed_windows: u64,
    pub window_rate: f64,
    pub window_ci: (f64, f64),
    /// Per-window failure probability implied by the nominal `p`.
    pub analytic_window_rate: f64,
    pub curve: Vec<CurvePoint>,
}

/// Runs `trials` independent trials of `intervals * q0` consecutive windows of
/// `t` draws each. A window fails when none of its draws asks for a refresh; a
/// trial stops at its first failed window.
pub fn monte_carlo_unsurvivability(cfg: &MonteCarloConfig) -> Result<MonteCarloResult, ReliabilityError> {
    if !(0.0..=1.0).contains(&cfg.p) {
        return Err(ReliabilityError::BadProbability(cfg.p));
    }
    for (name, v) in [
        ("trials", cfg.trials),
        ("t", u64::from(cfg.t)),
        ("intervals", u64::from(cfg.intervals)),
        ("q0", u64::from(cfg.q0)),
    ] {
        if v == 0 {
            return Err(ReliabilityError::NonPositive(name));
        }
    }
    let c = *cfg;
    // (windows run, first failing interval)
    let outcomes: Vec<(u64, Option<u32>)> = (0..c.trials)
        .into_par_iter()
        .map(|trial| run_trial(&c, derive_seed(c.seed, trial)))
        .collect();
    let windows: u64 = outcomes.iter().map(|o| o.0).sum();
    let failed_windows = outcomes.iter().filter(|o| o.1.is_some()).count() as u64;
    let mut by_interval = vec![0u64; c.intervals as usize];
    for (_, f) in &outcomes {
        if let Some(i) = f {
            by_interval[*i as usize] += 1;
        }
    }
    let ln_w = ln_window_failure(c.p, c.t);
    let mut failed = 0;
    let curve = by_interval
        .iter()
        .enumerate()
        .map(|(i, n)| {
            failed += n;
            let k = i as u32 + 1;
            let (ci_low, ci_high) = clopper_pearson(failed, c.trials, 0.95);
            // 1 - (1 - q)^(k * q0) without cancellation.
            let survive = f64::from(k * c.q0) * (-ln_w.exp()).ln_1p();
            CurvePoint {
                intervals: k,
                failed_trials: failed,
                estimate: failed as f64 / c.trials as f64,
                ci_low,
                ci_high,
                analytic: -survive.exp_m1(),
            }
        })
        .collect();
    Ok(MonteCarloResult {
        config: c,
        windows,
        failed_windows,
        window_rate: failed_windows as f64 / windows as f64,
        window_ci: clopper_pearson(failed_windows, windows, 0.95),
        analytic_window_rate: ln_w.exp(),
        curve,
    })
}

fn run_trial(c: &MonteCarloConfig, seed: u64) -> (u64, Option<u32>) {
    let mut rng = PrngHandle::new(c.prng, seed);
    let mut windows = 0;
    for interval in 0..c.intervals {
        for _ in 0..c.q0 {
            windows += 1;
            let mut refreshed = false;
            for _ in 0..c.t {
                // Every access draws, refreshed or not.
                refreshed |= rng.bernoulli(c.p);
            }
            if !refreshed {
                return (windows, Some(interval));
            }
        }
    }
    (windows, None)
}
