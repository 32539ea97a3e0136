//! Experiment drivers: replica ensembles over a checkpoint schedule, plus
//! the verdict logic for each statistical claim the crate can test.
//!
//! Every runner is deterministic for a fixed master seed: replicas draw
//! from dedicated ChaCha streams keyed by domain and index, parallel
//! reductions preserve replica order, and thread count never touches the
//! arithmetic. A checkpoint value `n` always means "the first `n`
//! positions `S_0 .. S_{n-1}` have been consumed".

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::functionals::{
    check_condition_l1, check_condition_l2, limit_tail, theoretical_limit, ConditionVerdict,
    FunctionalSpec, LocalFunctional,
};
use crate::local_stats::{
    verify_identities, GValue, IdentityCheck, LocalTimeAccumulator, Snapshot, SNAPSHOT_SCHEMA,
};
use crate::report::CsvRow;
use crate::rng::{RngSpec, StreamDomain};
use crate::stats::AggregateStats;
use crate::theory::{
    escape_profile, estimate_conditional_return_mean, gamma_exact, gamma_estimate_escape,
    gamma_estimate_range, return_time_stats, ConditionalReturnMean, EscapeProbability,
};
use crate::walk::{trajectory, walk, StepDistribution};
use crate::{Error, Result};

/// How an experiment obtains its escape probability.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GammaPolicy {
    /// Closed form when one is known, otherwise the range estimator.
    Auto,
    /// Closed form or error.
    Exact,
    /// Fraction of walks that never return within the horizon.
    Escape { horizon: u64 },
    /// Mean of `R_n / n` at the experiment's own largest checkpoint.
    Range,
}

impl fmt::Display for GammaPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GammaPolicy::Auto => write!(f, "auto"),
            GammaPolicy::Exact => write!(f, "exact"),
            GammaPolicy::Escape { horizon } => write!(f, "escape:{horizon}"),
            GammaPolicy::Range => write!(f, "range"),
        }
    }
}

/// Where identity-audit split points come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SplitSpec {
    /// `n/4, n/2, 3n/4`, clamped to valid interior points.
    Quartiles,
    /// `count` uniform draws from the interior, deduplicated.
    Random { count: u32 },
    /// Explicit list, validated against the trajectory length.
    Fixed(Vec<u64>),
}

impl fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitSpec::Quartiles => write!(f, "quartiles"),
            SplitSpec::Random { count } => write!(f, "random:{count}"),
            SplitSpec::Fixed(list) => {
                let text: Vec<String> = list.iter().map(|m| m.to_string()).collect();
                write!(f, "fixed:{}", text.join(","))
            }
        }
    }
}

/// Fully resolved inputs for one experiment run.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub dist: StepDistribution,
    pub functional: Option<FunctionalSpec>,
    /// Strictly increasing position counts at which statistics are taken.
    pub checkpoints: Vec<u64>,
    pub replicas: u64,
    pub master_seed: u64,
    pub gamma_policy: GammaPolicy,
    /// Worker threads for the replica ensemble; 0 uses the global pool.
    pub threads: usize,
    /// Largest multiplicity `k` reported by the multi-range operation.
    pub k_max: u32,
    /// Largest hinge shift audited by the identity suite.
    pub j_max: u32,
    /// Truncation cutoffs for the counterexample operation.
    pub p_list: Vec<u32>,
    /// Window start offsets for the shift-invariance operation.
    pub offsets: Vec<u64>,
    /// Window length for the shift-invariance operation.
    pub window: u64,
    /// Hinge shift evaluated on windows.
    pub shift_j: u32,
    /// Censoring horizon for return-time sampling.
    pub horizon: u64,
    /// Replica count for return-time and escape estimation.
    pub return_replicas: u64,
    pub splits: SplitSpec,
}

impl ExperimentConfig {
    /// Defaults for everything except the walk and the schedule.
    pub fn new(dist: StepDistribution, checkpoints: Vec<u64>) -> Self {
        ExperimentConfig {
            dist,
            functional: None,
            checkpoints,
            replicas: 10,
            master_seed: 0,
            gamma_policy: GammaPolicy::Auto,
            threads: 0,
            k_max: 5,
            j_max: 10,
            p_list: vec![2, 6, 10],
            offsets: vec![0, 100, 1000],
            window: 500,
            shift_j: 2,
            horizon: 10_000,
            return_replicas: 10_000,
            splits: SplitSpec::Quartiles,
        }
    }

    pub fn n_max(&self) -> u64 {
        self.checkpoints.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidExperiment(msg));
        if self.checkpoints.is_empty() {
            return bad("checkpoints must be nonempty".into());
        }
        if self.checkpoints[0] == 0 {
            return bad("checkpoints must be >= 1".into());
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!(
                "checkpoints must be strictly increasing, got {:?}",
                self.checkpoints
            ));
        }
        if self.replicas < 2 {
            return bad("replicas must be >= 2".into());
        }
        if self.k_max == 0 {
            return bad("k_max must be >= 1".into());
        }
        if self.j_max == 0 {
            return bad("j_max must be >= 1".into());
        }
        if self.p_list.is_empty() || self.p_list[0] == 0 {
            return bad("p_list must be nonempty with cutoffs >= 1".into());
        }
        if self.p_list.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!(
                "p_list must be strictly increasing, got {:?}",
                self.p_list
            ));
        }
        if self.window == 0 {
            return bad("window must be >= 1".into());
        }
        if self.shift_j == 0 {
            return bad("shift_j must be >= 1".into());
        }
        if self.offsets.is_empty() {
            return bad("offsets must be nonempty".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be >= 1".into());
        }
        if self.return_replicas < 2 {
            return bad("return_replicas must be >= 2".into());
        }
        Ok(())
    }

    /// Serializable echo of every resolved input.
    pub fn echo(&self) -> ConfigEcho {
        ConfigEcho {
            group: self.dist.group().to_string(),
            support: (0..self.dist.atoms().len())
                .map(|i| SupportAtom {
                    element: self.dist.atoms()[i].to_string(),
                    probability: self.dist.prob(i),
                })
                .collect(),
            checkpoints: self.checkpoints.clone(),
            replicas: self.replicas,
            master_seed: self.master_seed,
            gamma_policy: self.gamma_policy.to_string(),
            functional: self.functional.as_ref().map(|f| f.to_string()),
            k_max: self.k_max,
            j_max: self.j_max,
            p_list: self.p_list.clone(),
            offsets: self.offsets.clone(),
            window: self.window,
            shift_j: self.shift_j,
            horizon: self.horizon,
            return_replicas: self.return_replicas,
            splits: self.splits.to_string(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SupportAtom {
    pub element: String,
    pub probability: f64,
}

/// Flat, serializable snapshot of an [`ExperimentConfig`]. Thread count
/// is deliberately absent: it can never change a result, so it stays out
/// of the reproducible artifacts and lives in the run manifest instead.
#[derive(Clone, Debug, Serialize)]
pub struct ConfigEcho {
    pub group: String,
    pub support: Vec<SupportAtom>,
    pub checkpoints: Vec<u64>,
    pub replicas: u64,
    pub master_seed: u64,
    pub gamma_policy: String,
    pub functional: Option<String>,
    pub k_max: u32,
    pub j_max: u32,
    pub p_list: Vec<u32>,
    pub offsets: Vec<u64>,
    pub window: u64,
    pub shift_j: u32,
    pub horizon: u64,
    pub return_replicas: u64,
    pub splits: String,
}

/// One named pass/fail outcome with a human-readable explanation.
#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Verdict {
            name: name.into(),
            pass,
            detail,
        }
    }
}

pub fn all_pass(verdicts: &[Verdict]) -> bool {
    verdicts.iter().all(|v| v.pass)
}

/// Resolves the escape probability according to the configured policy.
pub fn resolve_gamma(cfg: &ExperimentConfig) -> Result<EscapeProbability> {
    cfg.validate()?;
    match cfg.gamma_policy {
        GammaPolicy::Exact => gamma_exact(&cfg.dist).ok_or_else(|| {
            Error::InvalidExperiment(
                "no closed-form escape probability for this walk; \
                 use gamma = \"range\" or \"escape:<horizon>\""
                    .into(),
            )
        }),
        GammaPolicy::Escape { horizon } => {
            gamma_estimate_escape(&cfg.dist, horizon, cfg.return_replicas, cfg.master_seed)
        }
        GammaPolicy::Range => {
            gamma_estimate_range(&cfg.dist, cfg.n_max(), cfg.replicas, cfg.master_seed)
        }
        GammaPolicy::Auto => match gamma_exact(&cfg.dist) {
            Some(g) => Ok(g),
            None => gamma_estimate_range(&cfg.dist, cfg.n_max(), cfg.replicas, cfg.master_seed),
        },
    }
}

/// Monte Carlo verdicts accept three standard errors plus this absolute
/// floor; acceptance-grade tolerances are asserted by the test suite, not
/// here.
const MC_GAP_FLOOR: f64 = 0.005;

/// Per-replica state captured at one checkpoint.
#[derive(Clone, Debug)]
struct TraceSnap {
    n: u64,
    range: u64,
    /// Nonzero `(k, R^(k))` pairs, ascending in `k`.
    hist: Vec<(u32, u64)>,
    /// Running functional sums, in the order the functionals were given.
    g: Vec<f64>,
}

fn hinge_from_hist(hist: &[(u32, u64)], j: u32) -> i64 {
    hist.iter()
        .map(|&(k, c)| {
            if k >= j {
                i64::from(k - j + 1) * c as i64
            } else {
                0
            }
        })
        .sum()
}

fn count_from_hist(hist: &[(u32, u64)], k: u32) -> u64 {
    hist.iter()
        .find(|&&(level, _)| level == k)
        .map_or(0, |&(_, c)| c)
}

/// Runs the closure inside a dedicated pool of `threads` workers, or on
/// the current pool when `threads` is 0.
fn in_pool<T: Send>(threads: usize, job: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if threads == 0 {
        job()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidExperiment(format!("thread pool: {e}")))?;
        pool.install(job)
    }
}

/// Walks one replica per stream index and snapshots every checkpoint.
/// Must already be inside the desired pool; replica order is preserved.
fn trace_ensemble(
    cfg: &ExperimentConfig,
    functionals: &[LocalFunctional],
) -> Result<Vec<Vec<TraceSnap>>> {
    let dist = &cfg.dist;
    let cps = &cfg.checkpoints;
    let n_max = cfg.n_max();
    let group = dist.group();
    (0..cfg.replicas)
        .into_par_iter()
        .map(|i| {
            let mut stream = walk(dist, RngSpec::new(cfg.master_seed, StreamDomain::Replica, i));
            let mut acc =
                LocalTimeAccumulator::with_functionals(group, functionals.to_vec());
            acc.ingest_position(stream.position())?;
            let mut snaps = Vec::with_capacity(cps.len());
            let mut next = 0usize;
            if cps[next] == 1 {
                snaps.push(snap_of(&acc, functionals.len()));
                next += 1;
            }
            while acc.positions() < n_max {
                let idx = stream.advance();
                acc.advance(&dist.atoms()[idx])?;
                if next < cps.len() && acc.positions() == cps[next] {
                    snaps.push(snap_of(&acc, functionals.len()));
                    next += 1;
                }
            }
            Ok(snaps)
        })
        .collect()
}

fn snap_of(acc: &LocalTimeAccumulator, functionals: usize) -> TraceSnap {
    TraceSnap {
        n: acc.positions(),
        range: acc.range(),
        hist: acc.histogram().iter().collect(),
        g: (0..functionals).map(|i| acc.running_value(i)).collect(),
    }
}

fn stats_at<F: Fn(&TraceSnap) -> f64>(
    traces: &[Vec<TraceSnap>],
    checkpoint_index: usize,
    value: F,
) -> AggregateStats {
    let values: Vec<f64> = traces.iter().map(|t| value(&t[checkpoint_index])).collect();
    AggregateStats::from_values(&values)
}

// ---------------------------------------------------------------------------
// lln

#[derive(Clone, Debug, Serialize)]
pub struct LlnCheckpoint {
    pub n: u64,
    /// `G_n(f) / n` across replicas.
    pub stats: AggregateStats,
    pub theory_target: f64,
    pub abs_gap: f64,
    /// Largest deviation from the limit at this or any later checkpoint,
    /// per replica; a schedule-level proxy for almost-sure convergence.
    pub dev_after: AggregateStats,
}

#[derive(Clone, Debug, Serialize)]
pub struct LlnReport {
    pub functional: String,
    pub gamma: EscapeProbability,
    pub condition: ConditionVerdict,
    pub limit: f64,
    pub replicas: u64,
    pub checkpoints: Vec<LlnCheckpoint>,
}

impl LlnReport {
    pub fn csv_rows(&self) -> Vec<CsvRow> {
        let mut rows = Vec::new();
        for cp in &self.checkpoints {
            rows.push(CsvRow {
                checkpoint_n: cp.n,
                replica_count: self.replicas,
                statistic: format!("g_over_n({})", self.functional),
                mean: cp.stats.mean,
                variance: cp.stats.variance,
                ci_halfwidth: cp.stats.ci_halfwidth,
                theory_target: Some(self.limit),
                abs_gap: Some(cp.abs_gap),
            });
            rows.push(CsvRow {
                checkpoint_n: cp.n,
                replica_count: self.replicas,
                statistic: format!("dev_after({})", self.functional),
                mean: cp.dev_after.mean,
                variance: cp.dev_after.variance,
                ci_halfwidth: cp.dev_after.ci_halfwidth,
                theory_target: None,
                abs_gap: None,
            });
        }
        rows
    }

    pub fn verdicts(&self) -> Vec<Verdict> {
        let last = self.checkpoints.last().expect("validated schedule");
        let tol = (3.0 * last.stats.sem()).max(MC_GAP_FLOOR * self.limit.abs().max(1.0));
        vec![
            Verdict::new(
                "l1_condition_holds",
                self.condition.holds,
                self.condition.certificate.clone(),
            ),
            Verdict::new(
                "lln_gap_within_tolerance",
                last.abs_gap <= tol,
                format!(
                    "n = {}: |{} - {}| = {:.3e}, tolerance {:.3e}",
                    last.n, last.stats.mean, self.limit, last.abs_gap, tol
                ),
            ),
        ]
    }
}

/// Strong-law check: `G_n(f)/n` against the predicted limit, with the
/// deviation-after-checkpoint proxy. Refuses functionals whose limit
/// series diverges.
pub fn run_lln(cfg: &ExperimentConfig) -> Result<LlnReport> {
    cfg.validate()?;
    let spec = cfg
        .functional
        .clone()
        .ok_or_else(|| Error::InvalidExperiment("lln needs a functional".into()))?;
    in_pool(cfg.threads, || {
        let gamma = resolve_gamma(cfg)?;
        let f = spec.resolve(Some(gamma.gamma))?;
        let condition = check_condition_l1(&f, gamma.gamma)?;
        if !condition.holds {
            return Err(Error::ConditionFails(format!(
                "{}; the counterexample operation covers the divergent regime",
                condition.certificate
            )));
        }
        let limit = theoretical_limit(&f, gamma.gamma)?;
        let traces = trace_ensemble(cfg, std::slice::from_ref(&f))?;
        let cps = &cfg.checkpoints;
        let m = traces.len();
        // Suffix maxima of |G/n - limit| per replica, walked backwards.
        let mut dev_after = vec![vec![0.0f64; m]; cps.len()];
        for (r, snaps) in traces.iter().enumerate() {
            let mut running = 0.0f64;
            for ci in (0..cps.len()).rev() {
                let ratio = snaps[ci].g[0] / snaps[ci].n as f64;
                running = running.max((ratio - limit).abs());
                dev_after[ci][r] = running;
            }
        }
        let checkpoints = cps
            .iter()
            .enumerate()
            .map(|(ci, &n)| {
                let stats = stats_at(&traces, ci, |s| s.g[0] / s.n as f64);
                LlnCheckpoint {
                    n,
                    stats,
                    theory_target: limit,
                    abs_gap: (stats.mean - limit).abs(),
                    dev_after: AggregateStats::from_values(&dev_after[ci]),
                }
            })
            .collect();
        Ok(LlnReport {
            functional: f.id(),
            gamma,
            condition,
            limit,
            replicas: cfg.replicas,
            checkpoints,
        })
    })
}

// ---------------------------------------------------------------------------
// multirange

#[derive(Clone, Debug, Serialize)]
pub struct RatioRow {
    pub statistic: String,
    pub order: u32,
    pub stats: AggregateStats,
    pub theory_target: f64,
    pub abs_gap: f64,
    pub within_tol: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MultiRangeCheckpoint {
    pub n: u64,
    pub range: RatioRow,
    pub multi: Vec<RatioRow>,
    pub hinge: Vec<RatioRow>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MultiRangeReport {
    pub gamma: EscapeProbability,
    pub replicas: u64,
    pub k_max: u32,
    pub checkpoints: Vec<MultiRangeCheckpoint>,
    /// Exact agreement between the histogram route and the running-sum
    /// route for the range and every hinge, across all snapshots.
    pub routes_agree: bool,
    /// `mean R_n/n >= gamma - 3 sigma` at every checkpoint, the empirical
    /// face of subadditivity: the expected range never dips below its
    /// limit.
    pub subadditive_floor: bool,
}

impl MultiRangeReport {
    pub fn csv_rows(&self) -> Vec<CsvRow> {
        let mut rows = Vec::new();
        for cp in &self.checkpoints {
            for row in std::iter::once(&cp.range).chain(&cp.multi).chain(&cp.hinge) {
                rows.push(CsvRow {
                    checkpoint_n: cp.n,
                    replica_count: self.replicas,
                    statistic: row.statistic.clone(),
                    mean: row.stats.mean,
                    variance: row.stats.variance,
                    ci_halfwidth: row.stats.ci_halfwidth,
                    theory_target: Some(row.theory_target),
                    abs_gap: Some(row.abs_gap),
                });
            }
        }
        rows
    }

    pub fn verdicts(&self) -> Vec<Verdict> {
        let last = self.checkpoints.last().expect("validated schedule");
        let all_rows_ok = std::iter::once(&last.range)
            .chain(&last.multi)
            .chain(&last.hinge)
            .all(|r| r.within_tol);
        let worst = std::iter::once(&last.range)
            .chain(&last.multi)
            .chain(&last.hinge)
            .max_by(|a, b| a.abs_gap.total_cmp(&b.abs_gap))
            .expect("at least the range row");
        vec![
            Verdict::new(
                "decay_targets_within_tolerance",
                all_rows_ok,
                format!(
                    "largest gap at n = {} is {:.3e} ({})",
                    last.n, worst.abs_gap, worst.statistic
                ),
            ),
            Verdict::new(
                "dual_routes_agree_exactly",
                self.routes_agree,
                "histogram route vs running-sum route".into(),
            ),
            Verdict::new(
                "subadditive_floor_respected",
                self.subadditive_floor,
                "mean R_n/n stays above gamma - 3 sigma".into(),
            ),
        ]
    }
}

/// Multiplicity decay: `R_n^(k)/n` against `gamma^2 (1-gamma)^(k-1)` and
/// `G_n(h^(j))/n` against `(1-gamma)^(j-1)`. Tolerates the degenerate
/// `gamma = 1` of a walk that never revisits any site.
pub fn run_multirange(cfg: &ExperimentConfig) -> Result<MultiRangeReport> {
    cfg.validate()?;
    in_pool(cfg.threads, || {
        let gamma = resolve_gamma(cfg)?;
        let g = gamma.gamma;
        if !(g > 0.0 && g <= 1.0) {
            return Err(Error::GammaOutOfRange(g));
        }
        let mut fs = vec![LocalFunctional::IndicatorRange];
        for j in 1..=cfg.k_max {
            fs.push(LocalFunctional::hshift(j)?);
        }
        let traces = trace_ensemble(cfg, &fs)?;
        let mut routes_agree = true;
        for snaps in &traces {
            for s in snaps {
                if s.g[0] != s.range as f64 {
                    routes_agree = false;
                }
                for j in 1..=cfg.k_max {
                    if s.g[j as usize] != hinge_from_hist(&s.hist, j) as f64 {
                        routes_agree = false;
                    }
                }
            }
        }
        let mut subadditive_floor = true;
        let checkpoints = cfg
            .checkpoints
            .iter()
            .enumerate()
            .map(|(ci, &n)| {
                let make_row = |statistic: String, order: u32, stats: AggregateStats, target: f64| {
                    let abs_gap = (stats.mean - target).abs();
                    RatioRow {
                        statistic,
                        order,
                        stats,
                        theory_target: target,
                        abs_gap,
                        within_tol: abs_gap <= 3.0 * stats.sem() + MC_GAP_FLOOR,
                    }
                };
                let range_stats = stats_at(&traces, ci, |s| s.range as f64 / s.n as f64);
                if range_stats.mean < g - 3.0 * range_stats.sem() {
                    subadditive_floor = false;
                }
                let range = make_row("range_over_n".into(), 1, range_stats, g);
                let multi = (1..=cfg.k_max)
                    .map(|k| {
                        let stats = stats_at(&traces, ci, |s| {
                            count_from_hist(&s.hist, k) as f64 / s.n as f64
                        });
                        let target = g * g * (1.0 - g).powi(k as i32 - 1);
                        make_row(format!("multi_range_over_n(k={k})"), k, stats, target)
                    })
                    .collect();
                let hinge = (1..=cfg.k_max)
                    .map(|j| {
                        let stats = stats_at(&traces, ci, |s| {
                            hinge_from_hist(&s.hist, j) as f64 / s.n as f64
                        });
                        let target = (1.0 - g).powi(j as i32 - 1);
                        make_row(format!("hinge_over_n(j={j})"), j, stats, target)
                    })
                    .collect();
                MultiRangeCheckpoint {
                    n,
                    range,
                    multi,
                    hinge,
                }
            })
            .collect();
        Ok(MultiRangeReport {
            gamma,
            replicas: cfg.replicas,
            k_max: cfg.k_max,
            checkpoints,
            routes_agree,
            subadditive_floor,
        })
    })
}

// ---------------------------------------------------------------------------
// l2

#[derive(Clone, Debug, Serialize)]
pub struct L2Checkpoint {
    pub n: u64,
    /// Sample of `(G_n(f)/n - limit)^2` across replicas.
    pub moment: AggregateStats,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum L2Trend {
    /// Every squared deviation is exactly zero.
    ExactZero,
    /// Least-squares slope of `log moment` against `log n` is negative.
    Decreasing { slope: f64 },
    NotDecreasing { slope: f64 },
    /// A single checkpoint cannot show a trend.
    InsufficientData,
}

#[derive(Clone, Debug, Serialize)]
pub struct L2Report {
    pub functional: String,
    pub gamma: EscapeProbability,
    pub condition: ConditionVerdict,
    pub limit: f64,
    pub replicas: u64,
    pub checkpoints: Vec<L2Checkpoint>,
    pub trend: L2Trend,
    /// `moment(first checkpoint) / moment(last checkpoint)`, when defined.
    pub first_to_last_factor: Option<f64>,
}

impl L2Report {
    pub fn csv_rows(&self) -> Vec<CsvRow> {
        self.checkpoints
            .iter()
            .map(|cp| CsvRow {
                checkpoint_n: cp.n,
                replica_count: self.replicas,
                statistic: format!("l2_moment({})", self.functional),
                mean: cp.moment.mean,
                variance: cp.moment.variance,
                ci_halfwidth: cp.moment.ci_halfwidth,
                theory_target: Some(0.0),
                abs_gap: Some(cp.moment.mean),
            })
            .collect()
    }

    pub fn verdicts(&self) -> Vec<Verdict> {
        let trend_pass = !matches!(self.trend, L2Trend::NotDecreasing { .. });
        let detail = match &self.trend {
            L2Trend::ExactZero => "every squared deviation is exactly zero".into(),
            L2Trend::Decreasing { slope } => format!("log-log slope {slope:.3}"),
            L2Trend::NotDecreasing { slope } => format!("log-log slope {slope:.3}"),
            L2Trend::InsufficientData => "single checkpoint; no trend to judge".into(),
        };
        vec![
            Verdict::new(
                "l2_condition_holds",
                self.condition.holds,
                self.condition.certificate.clone(),
            ),
            Verdict::new("l2_moment_decreasing", trend_pass, detail),
        ]
    }
}

/// Mean-square law: the second moment of `G_n(f)/n - limit` must shrink
/// along the schedule. Refuses functionals outside the L^2 class.
pub fn run_l2(cfg: &ExperimentConfig) -> Result<L2Report> {
    cfg.validate()?;
    let spec = cfg
        .functional
        .clone()
        .ok_or_else(|| Error::InvalidExperiment("l2 needs a functional".into()))?;
    in_pool(cfg.threads, || {
        let gamma = resolve_gamma(cfg)?;
        let f = spec.resolve(Some(gamma.gamma))?;
        let condition = check_condition_l2(&f, gamma.gamma)?;
        if !condition.holds {
            return Err(Error::ConditionFails(format!(
                "{}; the counterexample operation demonstrates this divergence",
                condition.certificate
            )));
        }
        let limit = theoretical_limit(&f, gamma.gamma)?;
        let traces = trace_ensemble(cfg, std::slice::from_ref(&f))?;
        let checkpoints: Vec<L2Checkpoint> = cfg
            .checkpoints
            .iter()
            .enumerate()
            .map(|(ci, &n)| {
                let moment = stats_at(&traces, ci, |s| {
                    let d = s.g[0] / s.n as f64 - limit;
                    d * d
                });
                L2Checkpoint { n, moment }
            })
            .collect();
        let trend = judge_trend(&checkpoints);
        let first = checkpoints.first().expect("validated schedule").moment.mean;
        let last = checkpoints.last().expect("validated schedule").moment.mean;
        let first_to_last_factor = (last > 0.0).then(|| first / last);
        Ok(L2Report {
            functional: f.id(),
            gamma,
            condition,
            limit,
            replicas: cfg.replicas,
            checkpoints,
            trend,
            first_to_last_factor,
        })
    })
}

fn judge_trend(checkpoints: &[L2Checkpoint]) -> L2Trend {
    if checkpoints.iter().all(|c| c.moment.mean == 0.0) {
        return L2Trend::ExactZero;
    }
    if checkpoints.len() < 2 {
        return L2Trend::InsufficientData;
    }
    let pts: Vec<(f64, f64)> = checkpoints
        .iter()
        .filter(|c| c.moment.mean > 0.0)
        .map(|c| ((c.n as f64).ln(), c.moment.mean.ln()))
        .collect();
    if pts.len() < 2 {
        // Some checkpoints are exactly zero; judge by where the zeros sit.
        return if checkpoints.last().expect("nonempty").moment.mean == 0.0 {
            L2Trend::Decreasing {
                slope: f64::NEG_INFINITY,
            }
        } else {
            L2Trend::InsufficientData
        };
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    match crate::stats::ols_slope(&xs, &ys) {
        Some(slope) if slope < 0.0 => L2Trend::Decreasing { slope },
        Some(slope) => L2Trend::NotDecreasing { slope },
        None => L2Trend::InsufficientData,
    }
}

// ---------------------------------------------------------------------------
// counterexample

#[derive(Clone, Debug, Serialize)]
pub struct TailMomentRow {
    pub functional: String,
    pub p: u32,
    pub n: u64,
    /// Sample of `((G_n(f) - G_n(f^(p))) / n)^2` across replicas.
    pub moment: AggregateStats,
    /// Square of the tail limit: what the moment would shrink to if the
    /// mean-square law held for `f`.
    pub vanish_target: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CounterexampleReport {
    pub gamma: EscapeProbability,
    pub return_mean: ConditionalReturnMean,
    pub condition_l1: ConditionVerdict,
    pub condition_l2: ConditionVerdict,
    /// `gamma^2 / (4 a (1-gamma))`: the tail moment can never fall below
    /// this, uniformly in the cutoff.
    pub bound: f64,
    /// Half the bound; the comparison margin for finite-sample noise.
    pub discounted_bound: f64,
    pub p_list: Vec<u32>,
    pub replicas: u64,
    pub rows: Vec<TailMomentRow>,
    pub control_rows: Vec<TailMomentRow>,
    /// True when the discounted bound exceeds the vanishing target at the
    /// largest cutoff while every empirical moment stays above it.
    pub divergence_witnessed: bool,
    /// True when the control's tail moment is nonincreasing in the cutoff
    /// at every checkpoint.
    pub control_shrinks_in_p: bool,
}

impl CounterexampleReport {
    pub fn csv_rows(&self) -> Vec<CsvRow> {
        self.rows
            .iter()
            .chain(&self.control_rows)
            .map(|row| CsvRow {
                checkpoint_n: row.n,
                replica_count: self.replicas,
                statistic: format!("tail_moment({},p={})", row.functional, row.p),
                mean: row.moment.mean,
                variance: row.moment.variance,
                ci_halfwidth: row.moment.ci_halfwidth,
                theory_target: Some(row.vanish_target),
                abs_gap: Some((row.moment.mean - row.vanish_target).abs()),
            })
            .collect()
    }

    pub fn verdicts(&self) -> Vec<Verdict> {
        vec![
            Verdict::new(
                "l1_condition_holds",
                self.condition_l1.holds,
                self.condition_l1.certificate.clone(),
            ),
            Verdict::new(
                "l2_condition_fails",
                !self.condition_l2.holds,
                self.condition_l2.certificate.clone(),
            ),
            Verdict::new(
                "return_mean_stabilized",
                self.return_mean.stabilized,
                format!(
                    "a = {:.4} (half-horizon probe {:.4})",
                    self.return_mean.a, self.return_mean.half_horizon_a
                ),
            ),
            Verdict::new(
                "divergence_witnessed",
                self.divergence_witnessed,
                format!(
                    "discounted bound {:.4e} vs vanishing target {:.4e} at p = {}",
                    self.discounted_bound,
                    self.rows.last().map_or(f64::NAN, |r| r.vanish_target),
                    self.p_list.last().copied().unwrap_or(0),
                ),
            ),
            Verdict::new(
                "control_tail_moment_shrinks_in_p",
                self.control_shrinks_in_p,
                "power:1 tail moment is nonincreasing in the cutoff".into(),
            ),
        ]
    }
}

/// The divergent functional `f(j) = (1-gamma)^(-j/2)`: its truncations
/// obey the strong law, yet the second moment of the discarded tail stays
/// above a positive floor no matter the cutoff. A control functional in
/// the mean-square class runs through the identical harness.
pub fn run_counterexample(cfg: &ExperimentConfig, p_list: &[u32]) -> Result<CounterexampleReport> {
    cfg.validate()?;
    if p_list.is_empty() || p_list[0] == 0 || p_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidExperiment(format!(
            "p_list must be nonempty, strictly increasing, cutoffs >= 1; got {p_list:?}"
        )));
    }
    match &cfg.functional {
        None | Some(FunctionalSpec::GeomHalf) => {}
        Some(other) => {
            return Err(Error::InvalidExperiment(format!(
                "counterexample requires functional = \"geomhalf\", got \"{other}\""
            )))
        }
    }
    in_pool(cfg.threads, || {
        let gamma = resolve_gamma(cfg)?;
        let g = gamma.gamma;
        let f = LocalFunctional::geometric_half(g)?;
        let condition_l1 = check_condition_l1(&f, g)?;
        let condition_l2 = check_condition_l2(&f, g)?;
        let tau = return_time_stats(&cfg.dist, cfg.horizon, 1, cfg.return_replicas, cfg.master_seed);
        let return_mean = estimate_conditional_return_mean(&tau);
        if !return_mean.stabilized {
            return Err(Error::InvalidExperiment(format!(
                "conditional return mean did not stabilize at horizon {} \
                 (full {:.4} vs half-horizon {:.4}); raise horizon",
                cfg.horizon, return_mean.a, return_mean.half_horizon_a
            )));
        }
        let bound = g * g / (4.0 * return_mean.a * (1.0 - g));
        let discounted_bound = bound / 2.0;

        let control = LocalFunctional::power(1.0)?;
        // One ensemble serves both functionals and all truncations, so the
        // control sees the identical trajectories.
        let mut fs = vec![f.clone()];
        for &p in p_list {
            fs.push(f.truncate(p)?);
        }
        let control_base = fs.len();
        fs.push(control.clone());
        for &p in p_list {
            fs.push(control.truncate(p)?);
        }
        let traces = trace_ensemble(cfg, &fs)?;

        let tail_rows = |base: usize, func: &LocalFunctional| -> Result<Vec<TailMomentRow>> {
            let mut rows = Vec::new();
            for (pi, &p) in p_list.iter().enumerate() {
                let vanish = limit_tail(func, g, p)?.powi(2);
                for (ci, &n) in cfg.checkpoints.iter().enumerate() {
                    let moment = stats_at(&traces, ci, |s| {
                        let d = (s.g[base] - s.g[base + 1 + pi]) / s.n as f64;
                        d * d
                    });
                    rows.push(TailMomentRow {
                        functional: func.id(),
                        p,
                        n,
                        moment,
                        vanish_target: vanish,
                    });
                }
            }
            Ok(rows)
        };
        let rows = tail_rows(0, &f)?;
        let control_rows = tail_rows(control_base, &control)?;

        let p_star = *p_list.last().expect("validated p_list");
        let star_rows: Vec<&TailMomentRow> = rows.iter().filter(|r| r.p == p_star).collect();
        let vanish_star = star_rows.first().map_or(f64::NAN, |r| r.vanish_target);
        let divergence_witnessed = discounted_bound > vanish_star
            && star_rows.iter().all(|r| r.moment.mean >= discounted_bound);

        let mut control_shrinks_in_p = true;
        for ci in 0..cfg.checkpoints.len() {
            for pi in 1..p_list.len() {
                let prev = control_rows[(pi - 1) * cfg.checkpoints.len() + ci].moment.mean;
                let here = control_rows[pi * cfg.checkpoints.len() + ci].moment.mean;
                if here > prev {
                    control_shrinks_in_p = false;
                }
            }
        }

        Ok(CounterexampleReport {
            gamma,
            return_mean,
            condition_l1,
            condition_l2,
            bound,
            discounted_bound,
            p_list: p_list.to_vec(),
            replicas: cfg.replicas,
            rows,
            control_rows,
            divergence_witnessed,
            control_shrinks_in_p,
        })
    })
}

// ---------------------------------------------------------------------------
// shift invariance

#[derive(Clone, Debug, Serialize)]
pub struct OffsetStats {
    pub offset: u64,
    /// `G_{m, m+window}(h^(j))` across replicas.
    pub stats: AggregateStats,
    /// Exact value when one is forced: 1 for `j = window = 1`, 0 when the
    /// shift exceeds the window.
    pub theory_target: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ShiftPair {
    pub offset_a: u64,
    pub offset_b: u64,
    pub diff: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ShiftReport {
    pub shift_j: u32,
    pub window: u64,
    pub replicas: u64,
    pub rows: Vec<OffsetStats>,
    pub pairs: Vec<ShiftPair>,
    pub all_agree: bool,
}

impl ShiftReport {
    pub fn csv_rows(&self) -> Vec<CsvRow> {
        self.rows
            .iter()
            .map(|row| CsvRow {
                checkpoint_n: row.offset + self.window,
                replica_count: self.replicas,
                statistic: format!(
                    "window_hinge(j={},k={},m={})",
                    self.shift_j, self.window, row.offset
                ),
                mean: row.stats.mean,
                variance: row.stats.variance,
                ci_halfwidth: row.stats.ci_halfwidth,
                theory_target: row.theory_target,
                abs_gap: row.theory_target.map(|t| (row.stats.mean - t).abs()),
            })
            .collect()
    }

    pub fn verdicts(&self) -> Vec<Verdict> {
        let worst = self
            .pairs
            .iter()
            .max_by(|a, b| (a.diff - a.tolerance).total_cmp(&(b.diff - b.tolerance)));
        vec![Verdict::new(
            "windows_agree_pairwise",
            self.all_agree,
            match worst {
                Some(p) => format!(
                    "worst pair (m={}, m={}): |diff| = {:.3e}, tolerance {:.3e}",
                    p.offset_a, p.offset_b, p.diff, p.tolerance
                ),
                None => "single offset; nothing to compare".into(),
            },
        )]
    }
}

/// Stationarity of increments: hinge sums over windows of equal length
/// must agree in distribution regardless of where the window starts.
pub fn run_shift_invariance(
    cfg: &ExperimentConfig,
    window: u64,
    offsets: &[u64],
) -> Result<ShiftReport> {
    cfg.validate()?;
    if window == 0 {
        return Err(Error::InvalidExperiment("window must be >= 1".into()));
    }
    if offsets.is_empty() {
        return Err(Error::InvalidExperiment("offsets must be nonempty".into()));
    }
    let j = cfg.shift_j;
    let max_m = *offsets.iter().max().expect("nonempty offsets");
    let t_last = max_m
        .checked_add(window - 1)
        .ok_or_else(|| Error::InvalidExperiment("offset + window overflows".into()))?;
    let dist = &cfg.dist;
    let group = dist.group();
    let values: Vec<Vec<f64>> = in_pool(cfg.threads, || {
        (0..cfg.replicas)
            .into_par_iter()
            .map(|i| {
                let mut stream =
                    walk(dist, RngSpec::new(cfg.master_seed, StreamDomain::Replica, i));
                let mut accs: Vec<LocalTimeAccumulator> = offsets
                    .iter()
                    .map(|_| LocalTimeAccumulator::new(group))
                    .collect();
                for t in 0..=t_last {
                    let idx = if t == 0 { usize::MAX } else { stream.advance() };
                    for (oi, &m) in offsets.iter().enumerate() {
                        if t < m || t >= m + window {
                            continue;
                        }
                        if t == m {
                            accs[oi].ingest_position(stream.position())?;
                        } else {
                            accs[oi].advance(&dist.atoms()[idx])?;
                        }
                    }
                }
                Ok(accs
                    .iter()
                    .map(|acc| acc.histogram().hinge_sum(j) as f64)
                    .collect())
            })
            .collect()
    })?;
    let target = if u64::from(j) > window {
        Some(0.0)
    } else if window == 1 && j == 1 {
        Some(1.0)
    } else {
        None
    };
    let rows: Vec<OffsetStats> = offsets
        .iter()
        .enumerate()
        .map(|(oi, &m)| {
            let sample: Vec<f64> = values.iter().map(|v| v[oi]).collect();
            OffsetStats {
                offset: m,
                stats: AggregateStats::from_values(&sample),
                theory_target: target,
            }
        })
        .collect();
    let mut pairs = Vec::new();
    for a in 0..rows.len() {
        for b in (a + 1)..rows.len() {
            let diff = (rows[a].stats.mean - rows[b].stats.mean).abs();
            let tolerance =
                3.0 * (rows[a].stats.sem().powi(2) + rows[b].stats.sem().powi(2)).sqrt();
            pairs.push(ShiftPair {
                offset_a: rows[a].offset,
                offset_b: rows[b].offset,
                diff,
                tolerance,
                pass: diff <= tolerance + 1e-12,
            });
        }
    }
    let all_agree = pairs.iter().all(|p| p.pass);
    Ok(ShiftReport {
        shift_j: j,
        window,
        replicas: cfg.replicas,
        rows,
        pairs,
        all_agree,
    })
}

// ---------------------------------------------------------------------------
// identity suite

#[derive(Clone, Debug, Serialize)]
pub struct SuiteFailure {
    pub replica: u64,
    pub master_seed: u64,
    /// ChaCha stream of the offending trajectory, for exact replay.
    pub rng_stream: u64,
    pub splits: Vec<u64>,
    pub check: IdentityCheck,
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentitySuiteReport {
    pub trajectories: u64,
    pub n: u64,
    pub j_max: u32,
    pub splits: String,
    pub checks_run: u64,
    pub failures: Vec<SuiteFailure>,
    pub all_pass: bool,
}

impl IdentitySuiteReport {
    pub fn csv_rows(&self) -> Vec<CsvRow> {
        let mk = |statistic: &str, value: f64, target: Option<f64>| CsvRow {
            checkpoint_n: self.n,
            replica_count: self.trajectories,
            statistic: statistic.into(),
            mean: value,
            variance: 0.0,
            ci_halfwidth: 0.0,
            theory_target: target,
            abs_gap: target.map(|t| (value - t).abs()),
        };
        vec![
            mk("identity_failures", self.failures.len() as f64, Some(0.0)),
            mk("identity_checks_run", self.checks_run as f64, None),
        ]
    }

    pub fn verdicts(&self) -> Vec<Verdict> {
        let detail = match self.failures.first() {
            Some(f) => format!(
                "{} failed on replica {} (seed {}, stream {}): {} vs {}",
                f.check.name, f.replica, f.master_seed, f.rng_stream, f.check.lhs, f.check.rhs
            ),
            None => format!("{} exact checks passed", self.checks_run),
        };
        vec![Verdict::new(
            "exact_identities_hold",
            self.all_pass,
            detail,
        )]
    }
}

/// Runs the exact identity battery on an ensemble of fresh trajectories.
/// Failures carry the stream index of the offending trajectory so it can
/// be replayed in isolation.
pub fn run_identity_suite(cfg: &ExperimentConfig) -> Result<IdentitySuiteReport> {
    cfg.validate()?;
    let n = cfg.n_max();
    let outcomes: Vec<(Vec<u64>, crate::local_stats::IdentityReport)> =
        in_pool(cfg.threads, || {
            (0..cfg.replicas)
                .into_par_iter()
                .map(|i| {
                    let spec = RngSpec::new(cfg.master_seed, StreamDomain::Replica, i);
                    let traj = trajectory(&cfg.dist, n - 1, spec);
                    let splits = resolve_splits(&cfg.splits, n, cfg.master_seed, i);
                    let report = verify_identities(cfg.dist.group(), &traj, cfg.j_max, &splits)?;
                    Ok((splits, report))
                })
                .collect()
        })?;
    let mut checks_run = 0u64;
    let mut failures = Vec::new();
    for (i, (splits, report)) in outcomes.iter().enumerate() {
        checks_run += report.checks.len() as u64;
        for check in report.checks.iter().filter(|c| !c.pass) {
            failures.push(SuiteFailure {
                replica: i as u64,
                master_seed: cfg.master_seed,
                rng_stream: RngSpec::new(cfg.master_seed, StreamDomain::Replica, i as u64)
                    .stream(),
                splits: splits.clone(),
                check: check.clone(),
            });
        }
    }
    Ok(IdentitySuiteReport {
        trajectories: cfg.replicas,
        n,
        j_max: cfg.j_max,
        splits: cfg.splits.to_string(),
        checks_run,
        all_pass: failures.is_empty(),
        failures,
    })
}

fn resolve_splits(spec: &SplitSpec, n: u64, master_seed: u64, replica: u64) -> Vec<u64> {
    match spec {
        SplitSpec::Quartiles => {
            let mut set = BTreeSet::new();
            for m in [n / 4, n / 2, 3 * n / 4] {
                if m >= 1 && m < n {
                    set.insert(m);
                }
            }
            set.into_iter().collect()
        }
        SplitSpec::Random { count } => {
            if n < 2 {
                return Vec::new();
            }
            let mut rng = RngSpec::new(master_seed, StreamDomain::Suite, replica).rng();
            let mut set = BTreeSet::new();
            for _ in 0..*count {
                set.insert(rng.random_range(1..n));
            }
            set.into_iter().collect()
        }
        SplitSpec::Fixed(list) => list.clone(),
    }
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Clone, Debug, Serialize)]
pub struct GStat {
    pub functional: String,
    pub stats: AggregateStats,
}

#[derive(Clone, Debug, Serialize)]
pub struct SimCheckpoint {
    pub n: u64,
    pub range_over_n: AggregateStats,
    pub g_over_n: Vec<GStat>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReplicaSnapshots {
    pub replica: u64,
    pub snapshots: Vec<Snapshot>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SimulateReport {
    pub replicas: u64,
    pub gamma: Option<EscapeProbability>,
    pub checkpoints: Vec<SimCheckpoint>,
    pub series: Vec<ReplicaSnapshots>,
    /// Every snapshot's histogram masses sum back to its position count.
    pub visits_conserved: bool,
}

impl SimulateReport {
    pub fn csv_rows(&self) -> Vec<CsvRow> {
        let mut rows = Vec::new();
        for cp in &self.checkpoints {
            rows.push(CsvRow {
                checkpoint_n: cp.n,
                replica_count: self.replicas,
                statistic: "range_over_n".into(),
                mean: cp.range_over_n.mean,
                variance: cp.range_over_n.variance,
                ci_halfwidth: cp.range_over_n.ci_halfwidth,
                theory_target: None,
                abs_gap: None,
            });
            for gs in &cp.g_over_n {
                rows.push(CsvRow {
                    checkpoint_n: cp.n,
                    replica_count: self.replicas,
                    statistic: format!("g_over_n({})", gs.functional),
                    mean: gs.stats.mean,
                    variance: gs.stats.variance,
                    ci_halfwidth: gs.stats.ci_halfwidth,
                    theory_target: None,
                    abs_gap: None,
                });
            }
        }
        rows
    }

    pub fn verdicts(&self) -> Vec<Verdict> {
        vec![Verdict::new(
            "histogram_visits_conserved",
            self.visits_conserved,
            "sum of k * R^(k) equals n in every snapshot".into(),
        )]
    }
}

/// Descriptive run: per-replica snapshots at every checkpoint plus
/// ensemble statistics, with no law asserted.
pub fn run_simulate(cfg: &ExperimentConfig) -> Result<SimulateReport> {
    cfg.validate()?;
    in_pool(cfg.threads, || {
        let (fs, gamma) = match &cfg.functional {
            Some(spec) => {
                let gamma = if spec.needs_gamma() {
                    Some(resolve_gamma(cfg)?)
                } else {
                    None
                };
                let f = spec.resolve(gamma.as_ref().map(|g| g.gamma))?;
                (vec![f], gamma)
            }
            None => (Vec::new(), None),
        };
        let traces = trace_ensemble(cfg, &fs)?;
        let ids: Vec<String> = fs.iter().map(|f| f.id()).collect();
        let mut visits_conserved = true;
        let series = traces
            .iter()
            .enumerate()
            .map(|(r, snaps)| ReplicaSnapshots {
                replica: r as u64,
                snapshots: snaps
                    .iter()
                    .map(|s| {
                        let mass: u64 = s.hist.iter().map(|&(k, c)| u64::from(k) * c).sum();
                        if mass != s.n {
                            visits_conserved = false;
                        }
                        Snapshot {
                            schema: SNAPSHOT_SCHEMA.into(),
                            n: s.n,
                            range: s.range,
                            max_multiplicity: s.hist.last().map_or(0, |&(k, _)| k),
                            histogram: s.hist.clone(),
                            g_values: ids
                                .iter()
                                .zip(&s.g)
                                .map(|(id, &value)| GValue {
                                    functional: id.clone(),
                                    value,
                                })
                                .collect(),
                        }
                    })
                    .collect(),
            })
            .collect();
        let checkpoints = cfg
            .checkpoints
            .iter()
            .enumerate()
            .map(|(ci, &n)| SimCheckpoint {
                n,
                range_over_n: stats_at(&traces, ci, |s| s.range as f64 / s.n as f64),
                g_over_n: ids
                    .iter()
                    .enumerate()
                    .map(|(fi, id)| GStat {
                        functional: id.clone(),
                        stats: stats_at(&traces, ci, |s| s.g[fi] / s.n as f64),
                    })
                    .collect(),
            })
            .collect();
        Ok(SimulateReport {
            replicas: cfg.replicas,
            gamma,
            checkpoints,
            series,
            visits_conserved,
        })
    })
}

// ---------------------------------------------------------------------------
// gamma

#[derive(Clone, Debug, Serialize)]
pub struct ProfilePoint {
    pub horizon: u64,
    pub gamma_hat: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GammaReport {
    pub policy: String,
    pub estimate: EscapeProbability,
    pub exact: Option<f64>,
    pub gap_to_exact: Option<f64>,
    /// Escape estimates at doubling horizons, nonincreasing by
    /// construction; empty unless the escape policy ran.
    pub profile: Vec<ProfilePoint>,
}

impl GammaReport {
    pub fn csv_rows(&self) -> Vec<CsvRow> {
        let (n, replicas, ci) = match self.estimate.source {
            crate::theory::GammaSource::Exact => (0, 0, 0.0),
            crate::theory::GammaSource::EscapeEstimate {
                horizon,
                replicas,
                ci_halfwidth,
            } => (horizon, replicas, ci_halfwidth),
            crate::theory::GammaSource::RangeEstimate {
                n,
                replicas,
                ci_halfwidth,
            } => (n, replicas, ci_halfwidth),
        };
        vec![CsvRow {
            checkpoint_n: n,
            replica_count: replicas,
            statistic: "gamma_estimate".into(),
            mean: self.estimate.gamma,
            variance: 0.0,
            ci_halfwidth: ci,
            theory_target: self.exact,
            abs_gap: self.gap_to_exact,
        }]
    }

    pub fn verdicts(&self) -> Vec<Verdict> {
        let g = self.estimate.gamma;
        vec![Verdict::new(
            "gamma_in_unit_interval",
            g > 0.0 && g <= 1.0,
            format!("gamma = {g}"),
        )]
    }
}

/// Escape probability estimation under the configured policy, with a
/// horizon profile when the escape estimator runs.
pub fn run_gamma(cfg: &ExperimentConfig) -> Result<GammaReport> {
    cfg.validate()?;
    in_pool(cfg.threads, || {
        let estimate = resolve_gamma(cfg)?;
        let exact = gamma_exact(&cfg.dist).map(|e| e.gamma);
        let profile = if let GammaPolicy::Escape { horizon } = cfg.gamma_policy {
            let mut horizons = Vec::new();
            let mut h = 1u64;
            while h < horizon {
                horizons.push(h);
                h = h.saturating_mul(2);
            }
            horizons.push(horizon);
            escape_profile(&cfg.dist, &horizons, cfg.return_replicas, cfg.master_seed)
                .into_iter()
                .map(|(horizon, gamma_hat)| ProfilePoint { horizon, gamma_hat })
                .collect()
        } else {
            Vec::new()
        };
        Ok(GammaReport {
            policy: cfg.gamma_policy.to_string(),
            gap_to_exact: exact.map(|e| (estimate.gamma - e).abs()),
            estimate,
            exact,
            profile,
        })
    })
}
