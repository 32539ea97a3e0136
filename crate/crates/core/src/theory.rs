//! Escape probabilities, return times, and the multi-range lower bound.
//!
//! The escape probability of a walk is `gamma = P(S_n != e for all n >= 1)`.
//! Transience means `gamma > 0`; every limit in this crate is a function of
//! `gamma`. Three ways to obtain it:
//!
//! * exact closed forms where known (simple random walk on a free group),
//! * the escape estimator: fraction of walks with no return within a
//!   horizon `N`; this overestimates `gamma` and is nonincreasing in `N`,
//! * the range estimator: `R_n / n`, whose mean converges to `gamma`.
//!
//! Return times `tau_j` (the `j`-th visit time of the identity, `tau_0 = 0`)
//! drive a lower bound on multi-range counts:
//!
//! ```text
//! E R_n^(j) >= gamma^2 * E max(n - tau_(j-1), 0)
//! ```
//!
//! together with `E(tau_(j-1) | finite) = a (j-1)` where `a` is the
//! conditional mean return time, `P(tau_(j-1) < inf) = (1-gamma)^(j-1)`,
//! and, for `j <= 1 + n/(2a)`, the floor
//! `E max(n - tau_(j-1), 0) >= (n/2) (1-gamma)^(j-1)`. Chaining these gives
//! the variance floor `gamma^2 / (4 a (1-gamma))` that blocks L^2
//! convergence for the `geomhalf` functional.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Error;
use crate::group::GroupDescriptor;
use crate::local_stats::LocalTimeAccumulator;
use crate::rng::{RngSpec, StreamDomain};
use crate::stats::{binomial_ci_halfwidth, AggregateStats};
use crate::walk::{walk, StepDistribution};
use crate::Result;

/// An escape probability together with how it was obtained.
#[derive(Clone, Debug, Serialize)]
pub struct EscapeProbability {
    pub gamma: f64,
    pub source: GammaSource,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum GammaSource {
    Exact,
    EscapeEstimate {
        horizon: u64,
        replicas: u64,
        ci_halfwidth: f64,
    },
    RangeEstimate {
        n: u64,
        replicas: u64,
        ci_halfwidth: f64,
    },
}

impl EscapeProbability {
    pub fn exact(gamma: f64) -> Self {
        EscapeProbability {
            gamma,
            source: GammaSource::Exact,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.source, GammaSource::Exact)
    }
}

/// Is `dist` the uniform step distribution on the standard generators of a
/// free group? Returns the rank if so.
fn uniform_free_srw(dist: &StepDistribution) -> Option<usize> {
    let GroupDescriptor::Free { rank } = dist.group() else {
        return None;
    };
    let gens = dist.group().standard_generators();
    if dist.atoms().len() != gens.len() {
        return None;
    }
    let mut expected: Vec<_> = gens
        .iter()
        .map(|a| dist.group().canonical_encode(a).unwrap())
        .collect();
    expected.sort();
    let mut actual: Vec<_> = dist
        .atoms()
        .iter()
        .map(|a| dist.group().canonical_encode(a).unwrap())
        .collect();
    actual.sort();
    if expected != actual {
        return None;
    }
    let p = 1.0 / gens.len() as f64;
    for i in 0..dist.atoms().len() {
        if (dist.prob(i) - p).abs() > 1e-15 {
            return None;
        }
    }
    Some(rank)
}

/// Closed-form escape probability, where one is known.
///
/// For simple random walk on `F_k` the distance from the identity is a
/// birth-death chain moving up with probability `(2k-1)/(2k)`; the return
/// probability is the downward hitting probability `1/(2k-1)`, hence
/// `gamma = (2k-2)/(2k-1)`.
pub fn gamma_exact(dist: &StepDistribution) -> Option<EscapeProbability> {
    let rank = uniform_free_srw(dist)?;
    let k = rank as f64;
    Some(EscapeProbability::exact((2.0 * k - 2.0) / (2.0 * k - 1.0)))
}

/// Closed-form conditional mean return time `a = E(tau | tau < inf)`,
/// where one is known.
///
/// For simple random walk on `F_k`, the descent-time generating function
/// `D(z) = z (p + q D(z)^2)` with `p = 1/(2k)`, `q = (2k-1)/(2k)` gives
/// `D(1) = 1/(2k-1)` and `D'(1) = D(1)/(1 - 2 q D(1))`, hence
/// `a = 1 + D'(1)/D(1) = (2k-1)/(k-1)`. For `F_2` this is exactly 3.
pub fn conditional_return_mean_exact(dist: &StepDistribution) -> Option<f64> {
    let rank = uniform_free_srw(dist)?;
    let k = rank as f64;
    Some((2.0 * k - 1.0) / (k - 1.0))
}

/// First return times to the identity, one entry per replica, censored at
/// `horizon` (`None` means no return was observed). Deterministic in
/// `(master_seed, domain)` and independent of thread scheduling.
pub fn first_return_times(
    dist: &StepDistribution,
    horizon: u64,
    replicas: u64,
    master_seed: u64,
    domain: StreamDomain,
) -> Vec<Option<u64>> {
    (0..replicas)
        .into_par_iter()
        .map(|i| {
            let mut stream = walk(dist, RngSpec::new(master_seed, domain, i));
            for t in 1..=horizon {
                stream.advance();
                if stream.at_identity() {
                    return Some(t);
                }
            }
            None
        })
        .collect()
}

/// Escape estimator: fraction of `replicas` walks that never revisit the
/// identity within `horizon` steps. Every unobserved late return inflates
/// the estimate, so `gamma_hat >= gamma` in expectation and is monotone
/// nonincreasing in the horizon (pathwise, for fixed seeds).
pub fn gamma_estimate_escape(
    dist: &StepDistribution,
    horizon: u64,
    replicas: u64,
    master_seed: u64,
) -> Result<EscapeProbability> {
    if horizon == 0 || replicas == 0 {
        return Err(Error::InvalidExperiment(
            "escape estimation needs horizon >= 1 and replicas >= 1".into(),
        ));
    }
    let returns = first_return_times(dist, horizon, replicas, master_seed, StreamDomain::Gamma);
    let escaped = returns.iter().filter(|r| r.is_none()).count() as u64;
    let gamma = escaped as f64 / replicas as f64;
    Ok(EscapeProbability {
        gamma,
        source: GammaSource::EscapeEstimate {
            horizon,
            replicas,
            ci_halfwidth: binomial_ci_halfwidth(gamma, replicas),
        },
    })
}

/// Escape estimates at several horizons from one shared set of walks;
/// nonincreasing in the horizon by construction.
pub fn escape_profile(
    dist: &StepDistribution,
    horizons: &[u64],
    replicas: u64,
    master_seed: u64,
) -> Vec<(u64, f64)> {
    let max_h = horizons.iter().copied().max().unwrap_or(0);
    let returns = first_return_times(dist, max_h, replicas, master_seed, StreamDomain::Gamma);
    horizons
        .iter()
        .map(|&h| {
            let escaped = returns
                .iter()
                .filter(|r| r.is_none_or(|t| t > h))
                .count();
            (h, escaped as f64 / replicas as f64)
        })
        .collect()
}

/// Range estimator: mean of `R_n / n` over replicas.
pub fn gamma_estimate_range(
    dist: &StepDistribution,
    n: u64,
    replicas: u64,
    master_seed: u64,
) -> Result<EscapeProbability> {
    if n == 0 || replicas == 0 {
        return Err(Error::InvalidExperiment(
            "range estimation needs n >= 1 and replicas >= 1".into(),
        ));
    }
    let ratios: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let mut stream = walk(dist, RngSpec::new(master_seed, StreamDomain::Gamma, i));
            let mut acc = LocalTimeAccumulator::new(dist.group());
            acc.ingest_position(stream.position()).unwrap();
            for _ in 1..n {
                let idx = stream.advance();
                acc.advance(&dist.atoms()[idx]).unwrap();
            }
            acc.range() as f64 / n as f64
        })
        .collect();
    let stats = AggregateStats::from_values(&ratios);
    Ok(EscapeProbability {
        gamma: stats.mean,
        source: GammaSource::RangeEstimate {
            n,
            replicas,
            ci_halfwidth: stats.ci_halfwidth,
        },
    })
}

/// Return times per replica: for each walk the observed visit times of the
/// identity, in order, censored at `horizon` and capped at `j_max` returns.
#[derive(Clone, Debug)]
pub struct ReturnTimeStats {
    pub horizon: u64,
    pub replicas: u64,
    pub j_max: u32,
    /// `tau[i]` holds the finite return times of replica `i`, ascending.
    pub tau: Vec<Vec<u64>>,
}

impl ReturnTimeStats {
    /// Fraction of replicas with at least `j` observed returns; estimates
    /// `P(tau_j < inf) = (1-gamma)^j` when the horizon dwarfs `a * j`.
    pub fn return_fraction(&self, j: u32) -> f64 {
        let hits = self
            .tau
            .iter()
            .filter(|t| t.len() >= j as usize)
            .count();
        hits as f64 / self.replicas as f64
    }

    /// Mean of `tau_j` over replicas where it is finite; estimates `a * j`.
    pub fn conditional_mean(&self, j: u32) -> Option<AggregateStats> {
        let vals: Vec<f64> = self
            .tau
            .iter()
            .filter(|t| t.len() >= j as usize)
            .map(|t| t[j as usize - 1] as f64)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(AggregateStats::from_values(&vals))
        }
    }

    /// Per-replica `max(n - tau_j, 0)` with `tau_j = inf` contributing 0;
    /// exact (no censoring bias) whenever `n <= horizon`.
    pub fn emax_values(&self, n: u64, j: u32) -> Vec<f64> {
        assert!(n <= self.horizon, "emax needs horizon >= n");
        self.tau
            .iter()
            .map(|t| {
                if j == 0 {
                    n as f64
                } else {
                    match t.get(j as usize - 1) {
                        Some(&tj) if tj < n => (n - tj) as f64,
                        _ => 0.0,
                    }
                }
            })
            .collect()
    }
}

/// Collect up to `j_max` return times for each of `replicas` walks.
pub fn return_time_stats(
    dist: &StepDistribution,
    horizon: u64,
    j_max: u32,
    replicas: u64,
    master_seed: u64,
) -> ReturnTimeStats {
    let tau: Vec<Vec<u64>> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let mut stream = walk(
                dist,
                RngSpec::new(master_seed, StreamDomain::ReturnTimes, i),
            );
            let mut times = Vec::new();
            for t in 1..=horizon {
                stream.advance();
                if stream.at_identity() {
                    times.push(t);
                    if times.len() >= j_max as usize {
                        break;
                    }
                }
            }
            times
        })
        .collect();
    ReturnTimeStats {
        horizon,
        replicas,
        j_max,
        tau,
    }
}

/// Estimate of `a = E(tau | tau < inf)` with a stabilization probe: the
/// same data re-censored at half the horizon must give nearly the same
/// value, otherwise the horizon is too short to trust the estimate.
#[derive(Clone, Debug, Serialize)]
pub struct ConditionalReturnMean {
    pub a: f64,
    pub ci_halfwidth: f64,
    pub finite_returns: u64,
    pub replicas: u64,
    pub horizon: u64,
    pub half_horizon_a: f64,
    pub stabilized: bool,
}

const STABILIZATION_REL_TOL: f64 = 0.02;

pub fn estimate_conditional_return_mean(stats: &ReturnTimeStats) -> ConditionalReturnMean {
    let firsts: Vec<u64> = stats.tau.iter().filter_map(|t| t.first().copied()).collect();
    let half = stats.horizon / 2;
    let half_vals: Vec<f64> = firsts
        .iter()
        .filter(|&&t| t <= half)
        .map(|&t| t as f64)
        .collect();
    let full_vals: Vec<f64> = firsts.iter().map(|&t| t as f64).collect();
    if full_vals.is_empty() {
        return ConditionalReturnMean {
            a: f64::NAN,
            ci_halfwidth: f64::INFINITY,
            finite_returns: 0,
            replicas: stats.replicas,
            horizon: stats.horizon,
            half_horizon_a: f64::NAN,
            stabilized: false,
        };
    }
    let full = AggregateStats::from_values(&full_vals);
    let half_a = if half_vals.is_empty() {
        f64::NAN
    } else {
        AggregateStats::from_values(&half_vals).mean
    };
    let stabilized = half_a.is_finite()
        && (full.mean - half_a).abs() <= STABILIZATION_REL_TOL * full.mean;
    ConditionalReturnMean {
        a: full.mean,
        ci_halfwidth: full.ci_halfwidth,
        finite_returns: full.count,
        replicas: stats.replicas,
        horizon: stats.horizon,
        half_horizon_a: half_a,
        stabilized,
    }
}

/// One `j` of the multi-range bound check.
#[derive(Clone, Debug, Serialize)]
pub struct MultiRangeBoundRow {
    pub j: u32,
    /// Monte Carlo mean and standard error of `R_n^(j)`.
    pub multi_mean: f64,
    pub multi_sem: f64,
    /// Monte Carlo mean and standard error of `max(n - tau_(j-1), 0)`.
    pub emax_mean: f64,
    pub emax_sem: f64,
    /// `gamma^2 * emax_mean`, the bound's right side.
    pub rhs_mean: f64,
    /// Normalized slack `(multi - rhs) / sigma`; the bound holds in
    /// expectation, so this should not be significantly negative.
    pub slack_sigmas: f64,
    pub holds: bool,
}

/// Floor check `E max(n - tau_(j-1), 0) >= (n/2)(1-gamma)^(j-1)`, valid for
/// `j <= 1 + n/(2a)`.
#[derive(Clone, Debug, Serialize)]
pub struct EmaxFloorRow {
    pub j: u32,
    pub admissible: bool,
    pub emax_mean: f64,
    pub emax_sem: f64,
    pub floor: f64,
    pub slack_sigmas: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MultiRangeBoundReport {
    pub n: u64,
    pub replicas: u64,
    pub gamma: EscapeProbability,
    pub a: ConditionalReturnMean,
    pub rows: Vec<MultiRangeBoundRow>,
    pub floor_rows: Vec<EmaxFloorRow>,
    /// Tolerated downward noise, in combined standard errors.
    pub sigma_slack: f64,
}

impl MultiRangeBoundReport {
    pub fn all_hold(&self) -> bool {
        self.rows.iter().all(|r| r.holds)
            && self.floor_rows.iter().all(|r| !r.admissible || r.holds)
    }
}

const BOUND_SIGMA_SLACK: f64 = 3.0;

/// Monte Carlo check of the multi-range lower bound for `j = 1..=j_max`.
///
/// Two independent walk populations are used: `replicas` walks of `n` steps
/// provide `R_n^(j)` (replica stream domain), and `replicas` walks censored
/// at `n` provide the return times (return-time stream domain), so the two
/// sides of the inequality carry independent noise. Since `tau_0 = 0`, the
/// `j = 1` row has a deterministic right side `gamma^2 * n`.
pub fn multirange_bound_check(
    dist: &StepDistribution,
    n: u64,
    j_max: u32,
    replicas: u64,
    gamma: &EscapeProbability,
    master_seed: u64,
) -> Result<MultiRangeBoundReport> {
    if n < 2 || j_max == 0 || replicas < 2 {
        return Err(Error::InvalidExperiment(
            "bound check needs n >= 2, j_max >= 1, replicas >= 2".into(),
        ));
    }
    if !(gamma.gamma > 0.0 && gamma.gamma < 1.0) {
        return Err(Error::GammaOutOfRange(gamma.gamma));
    }
    let g2 = gamma.gamma * gamma.gamma;

    // Side 1: multi-range counts from fresh walks of n positions.
    let multis: Vec<Vec<u64>> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let mut stream = walk(dist, RngSpec::new(master_seed, StreamDomain::Replica, i));
            let mut acc = LocalTimeAccumulator::new(dist.group());
            acc.ingest_position(stream.position()).unwrap();
            for _ in 1..n {
                let idx = stream.advance();
                acc.advance(&dist.atoms()[idx]).unwrap();
            }
            (1..=j_max)
                .map(|j| acc.histogram().count_at(j))
                .collect()
        })
        .collect();

    // Side 2: return times censored at n (exact for emax at this n).
    let tau_stats = return_time_stats(dist, n, j_max, replicas, master_seed);
    let a = estimate_conditional_return_mean(&tau_stats);

    let x = 1.0 - gamma.gamma;
    let mut rows = Vec::new();
    let mut floor_rows = Vec::new();
    for j in 1..=j_max {
        let multi_vals: Vec<f64> = multis
            .iter()
            .map(|m| m[j as usize - 1] as f64)
            .collect();
        let multi = AggregateStats::from_values(&multi_vals);
        let emax_vals = tau_stats.emax_values(n, j - 1);
        let emax = AggregateStats::from_values(&emax_vals);
        let rhs_mean = g2 * emax.mean;
        let sigma = (multi.sem().powi(2) + (g2 * emax.sem()).powi(2)).sqrt();
        let slack = if sigma > 0.0 {
            (multi.mean - rhs_mean) / sigma
        } else if multi.mean >= rhs_mean {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        rows.push(MultiRangeBoundRow {
            j,
            multi_mean: multi.mean,
            multi_sem: multi.sem(),
            emax_mean: emax.mean,
            emax_sem: emax.sem(),
            rhs_mean,
            slack_sigmas: slack,
            holds: slack >= -BOUND_SIGMA_SLACK,
        });

        let admissible =
            a.a.is_finite() && a.a > 0.0 && f64::from(j) <= 1.0 + n as f64 / (2.0 * a.a);
        let floor = 0.5 * n as f64 * x.powi(j as i32 - 1);
        let fslack = if emax.sem() > 0.0 {
            (emax.mean - floor) / emax.sem()
        } else if emax.mean >= floor {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        floor_rows.push(EmaxFloorRow {
            j,
            admissible,
            emax_mean: emax.mean,
            emax_sem: emax.sem(),
            floor,
            slack_sigmas: fslack,
            holds: fslack >= -BOUND_SIGMA_SLACK,
        });
    }

    Ok(MultiRangeBoundReport {
        n,
        replicas,
        gamma: gamma.clone(),
        a,
        rows,
        floor_rows,
        sigma_slack: BOUND_SIGMA_SLACK,
    })
}
