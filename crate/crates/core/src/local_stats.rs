//! Local times, multiplicity histograms, and occupation functionals.
//!
//! For a walk segment `S_0, ..., S_{n-1}` (n positions), the local time
//! `l(x)` of a site is its number of visits, the range `R_n` is the number
//! of distinct sites, and `R_n^(k)` counts sites with local time exactly
//! `k`. The occupation functional is
//!
//! ```text
//! G_n(f) = sum_x f(l(x)) = sum_{k>=1} f(k) R_n^(k)
//! ```
//!
//! Everything here is maintained incrementally: a step that lifts a site
//! from `c` to `c+1` visits moves one histogram unit from level `c` to
//! `c+1` and adds `f(c+1) - f(c)` to each running sum. Direct recomputation
//! routes (fresh site maps, table sums over the histogram) exist alongside
//! and are compared against the incremental state in tests and in
//! [`verify_identities`].
//!
//! Exact integer identities satisfied by every trajectory, with
//! `h^(j)(l) = max(l + 1 - j, 0)`:
//!
//! * conservation: `sum_k k R_n^(k) = n`
//! * hinge sums: `G_n(h^(j)) = sum_{k>=j} (k+1-j) R_n^(k)`
//! * range decomposition:
//!   `n - G_n(h^(j)) = (j-1) R_n - sum_{k=1}^{j-1} (j-1-k) R_n^(k)`
//! * superadditivity over a split at `m`:
//!   `G_{0,m}(h^(j)) + G_{m,n}(h^(j)) <= G_n(h^(j))`

use serde::Serialize;

use crate::error::Error;
use crate::functionals::LocalFunctional;
use crate::group::{GroupDescriptor, GroupElement};
use crate::hash::DetMap;
use crate::sites::SiteStore;
use crate::stats::Kahan;
use crate::Result;

/// Counts of sites by visit multiplicity: `count_at(k) = R^(k)`.
#[derive(Clone, Debug, Default)]
pub struct MultiplicityHistogram {
    /// `levels[k-1]` is the number of sites visited exactly `k` times.
    levels: Vec<u64>,
    range: u64,
    visits: u64,
}

impl MultiplicityHistogram {
    /// Move one site from multiplicity `old` to `old + 1`.
    fn promote(&mut self, old: u32) {
        let new = old as usize + 1;
        if self.levels.len() < new {
            self.levels.resize(new, 0);
        }
        if old > 0 {
            debug_assert!(self.levels[old as usize - 1] > 0);
            self.levels[old as usize - 1] -= 1;
        } else {
            self.range += 1;
        }
        self.levels[new - 1] += 1;
        self.visits += 1;
    }

    /// `R^(k)`: number of sites with local time exactly `k >= 1`.
    pub fn count_at(&self, k: u32) -> u64 {
        if k == 0 || k as usize > self.levels.len() {
            0
        } else {
            self.levels[k as usize - 1]
        }
    }

    /// Number of distinct sites.
    pub fn range(&self) -> u64 {
        self.range
    }

    /// Total visits ingested; equals `sum_k k R^(k)`.
    pub fn total_visits(&self) -> u64 {
        self.visits
    }

    pub fn max_multiplicity(&self) -> u32 {
        self.levels
            .iter()
            .rposition(|&c| c > 0)
            .map_or(0, |i| i as u32 + 1)
    }

    /// Nonzero `(k, R^(k))` pairs in ascending `k`.
    pub fn iter(&self) -> impl Iterator<Item = (u32, u64)> + '_ {
        self.levels
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (i as u32 + 1, c))
    }

    /// Exact integer hinge sum `sum_{k>=j} (k+1-j) R^(k) = G(h^(j))`.
    pub fn hinge_sum(&self, j: u32) -> i64 {
        assert!(j >= 1, "hinge index must be >= 1");
        let mut total: i64 = 0;
        for (k, c) in self.iter() {
            if k >= j {
                total += i64::from(k + 1 - j) * c as i64;
            }
        }
        total
    }

    /// `sum_k f(k) R^(k)`, the table route for `G(f)`.
    pub fn weighted_sum(&self, f: &LocalFunctional) -> f64 {
        let mut sum = Kahan::new();
        for (k, c) in self.iter() {
            sum.add(f.evaluate(u64::from(k)) * c as f64);
        }
        sum.value()
    }

    /// Internal conservation: recompute range and visits from the levels.
    pub fn check_conservation(&self) -> std::result::Result<(), String> {
        let range: u64 = self.levels.iter().sum();
        if range != self.range {
            return Err(format!("range {} but levels sum to {range}", self.range));
        }
        let visits: u64 = self
            .levels
            .iter()
            .enumerate()
            .map(|(i, &c)| (i as u64 + 1) * c)
            .sum();
        if visits != self.visits {
            return Err(format!(
                "visits {} but weighted levels sum to {visits}",
                self.visits
            ));
        }
        Ok(())
    }
}

/// One incrementally maintained sum `G(f)`.
#[derive(Clone, Debug)]
pub struct RunningFunctionalSum {
    functional: LocalFunctional,
    acc: Kahan,
}

impl RunningFunctionalSum {
    pub fn new(functional: LocalFunctional) -> Self {
        RunningFunctionalSum {
            functional,
            acc: Kahan::new(),
        }
    }

    /// A site just reached multiplicity `new`.
    #[inline]
    fn on_visit(&mut self, new: u32) {
        let new = u64::from(new);
        self.acc
            .add(self.functional.evaluate(new) - self.functional.evaluate(new - 1));
    }

    pub fn value(&self) -> f64 {
        self.acc.value()
    }

    pub fn functional(&self) -> &LocalFunctional {
        &self.functional
    }
}

/// Incremental local-time state of one walk segment.
///
/// Feed it positions: `ingest_position` for an absolute position (always
/// valid), `advance` for a relative increment from the previous position
/// (O(1) for single-letter free group steps, and never re-encodes lattice
/// points from scratch). The first position must be ingested absolutely.
pub struct LocalTimeAccumulator {
    group: GroupDescriptor,
    store: SiteStore,
    histogram: MultiplicityHistogram,
    running: Vec<RunningFunctionalSum>,
}

impl LocalTimeAccumulator {
    /// Preferred backend for the group (tree for free groups).
    pub fn new(group: GroupDescriptor) -> Self {
        Self::build(group, Vec::new(), false)
    }

    pub fn with_functionals(group: GroupDescriptor, functionals: Vec<LocalFunctional>) -> Self {
        Self::build(group, functionals, false)
    }

    /// Force the generic hashed backend; exists so tests can cross-check
    /// the tree backend against it.
    pub fn with_generic_backend(
        group: GroupDescriptor,
        functionals: Vec<LocalFunctional>,
    ) -> Self {
        Self::build(group, functionals, true)
    }

    fn build(group: GroupDescriptor, functionals: Vec<LocalFunctional>, generic: bool) -> Self {
        let store = if generic {
            SiteStore::hashed(group)
        } else {
            SiteStore::auto(group)
        };
        LocalTimeAccumulator {
            group,
            store,
            histogram: MultiplicityHistogram::default(),
            running: functionals.into_iter().map(RunningFunctionalSum::new).collect(),
        }
    }

    fn on_new_count(&mut self, new: u32) {
        self.histogram.promote(new - 1);
        for rs in &mut self.running {
            rs.on_visit(new);
        }
        // Cheap self-audit at power-of-two sizes in debug builds.
        #[cfg(debug_assertions)]
        {
            let n = self.histogram.total_visits();
            if n & (n - 1) == 0 {
                if let Err(msg) = self.histogram.check_conservation() {
                    panic!("histogram conservation broken at n={n}: {msg}");
                }
            }
        }
    }

    /// Count a visit at an absolute position.
    pub fn ingest_position(&mut self, pos: &GroupElement) -> Result<()> {
        if !self.group.belongs(pos) {
            return Err(Error::ElementMismatch {
                group: self.group.to_string(),
                element: pos.to_string(),
            });
        }
        let new = self.store.visit_position(pos);
        self.on_new_count(new);
        Ok(())
    }

    /// Count a visit at `previous position * inc`. Panics if no position
    /// was ingested yet.
    pub fn advance(&mut self, inc: &GroupElement) -> Result<()> {
        assert!(
            self.histogram.total_visits() > 0,
            "advance before any ingested position"
        );
        if !self.group.belongs(inc) {
            return Err(Error::ElementMismatch {
                group: self.group.to_string(),
                element: inc.to_string(),
            });
        }
        let new = self.store.advance(inc);
        self.on_new_count(new);
        Ok(())
    }

    /// Number of ingested positions: the `n` of `G_n`.
    pub fn positions(&self) -> u64 {
        self.histogram.total_visits()
    }

    pub fn range(&self) -> u64 {
        self.histogram.range()
    }

    pub fn histogram(&self) -> &MultiplicityHistogram {
        &self.histogram
    }

    pub fn backend_name(&self) -> &'static str {
        self.store.backend_name()
    }

    /// Incrementally maintained `G(f)` values, labeled by functional id.
    pub fn running_values(&self) -> Vec<(String, f64)> {
        self.running
            .iter()
            .map(|rs| (rs.functional().id(), rs.value()))
            .collect()
    }

    pub fn running_value(&self, i: usize) -> f64 {
        self.running[i].value()
    }

    /// Table route for `G(f)` over the live site store (independent of both
    /// the histogram and the running sums).
    pub fn g_table_route(&self, f: &LocalFunctional) -> f64 {
        let mut sum = Kahan::new();
        for c in self.store.counts() {
            sum.add(f.evaluate(u64::from(c)));
        }
        sum.value()
    }

    /// Exact integer table route for the hinge `h^(j)`.
    pub fn hinge_table_route(&self, j: u32) -> i64 {
        assert!(j >= 1);
        let mut total: i64 = 0;
        for c in self.store.counts() {
            if c >= j {
                total += i64::from(c + 1 - j);
            }
        }
        total
    }

    /// Full cross-route audit: histogram internals, store totals, and
    /// per-level tallies recomputed from raw site counts.
    pub fn check_conservation(&self) -> std::result::Result<(), String> {
        self.histogram.check_conservation()?;
        let mut range = 0u64;
        let mut visits = 0u64;
        let mut levels: Vec<u64> = Vec::new();
        for c in self.store.counts() {
            range += 1;
            visits += u64::from(c);
            let idx = c as usize - 1;
            if levels.len() <= idx {
                levels.resize(idx + 1, 0);
            }
            levels[idx] += 1;
        }
        if range != self.histogram.range() {
            return Err(format!(
                "store has {range} occupied sites, histogram says {}",
                self.histogram.range()
            ));
        }
        if visits != self.histogram.total_visits() {
            return Err(format!(
                "store counts sum to {visits}, histogram says {}",
                self.histogram.total_visits()
            ));
        }
        for (i, &c) in levels.iter().enumerate() {
            if c != self.histogram.count_at(i as u32 + 1) {
                return Err(format!(
                    "level {}: store tally {c}, histogram {}",
                    i + 1,
                    self.histogram.count_at(i as u32 + 1)
                ));
            }
        }
        Ok(())
    }

    /// Freeze the current state into a serializable snapshot.
    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            schema: SNAPSHOT_SCHEMA.into(),
            n: self.positions(),
            range: self.range(),
            max_multiplicity: self.histogram.max_multiplicity(),
            histogram: self.histogram.iter().collect(),
            g_values: self
                .running
                .iter()
                .map(|rs| GValue {
                    functional: rs.functional().id(),
                    value: rs.value(),
                })
                .collect(),
        }
    }
}

pub const SNAPSHOT_SCHEMA: &str = "walklaw.snapshot.v1";

#[derive(Clone, Debug, Serialize)]
pub struct GValue {
    pub functional: String,
    pub value: f64,
}

/// Point-in-time record of an accumulator: histogram plus functional sums.
#[derive(Clone, Debug, Serialize)]
pub struct Snapshot {
    pub schema: String,
    pub n: u64,
    pub range: u64,
    pub max_multiplicity: u32,
    /// Nonzero `(k, R^(k))` pairs, ascending in `k`.
    pub histogram: Vec<(u32, u64)>,
    pub g_values: Vec<GValue>,
}

impl Snapshot {
    /// Long-form rows `(statistic, value)` for CSV export.
    pub fn rows(&self) -> Vec<(String, f64)> {
        let mut rows = vec![
            ("n".to_string(), self.n as f64),
            ("range".to_string(), self.range as f64),
        ];
        for &(k, c) in &self.histogram {
            rows.push((format!("multiplicity:{k}"), c as f64));
        }
        for gv in &self.g_values {
            rows.push((format!("G({})", gv.functional), gv.value));
        }
        rows
    }
}

/// Local times of `positions` computed the naive way: a fresh map from
/// canonical encodings, no shared code with [`SiteStore`]. This is the
/// independent route the incremental engine is validated against.
pub fn direct_local_times(
    group: GroupDescriptor,
    positions: &[GroupElement],
) -> Result<Vec<u32>> {
    let mut map: DetMap<Vec<u8>, u32> = DetMap::default();
    for pos in positions {
        let key = group.canonical_encode(pos)?;
        *map.entry(key).or_insert(0) += 1;
    }
    let mut counts: Vec<u32> = map.into_values().collect();
    // Deterministic order regardless of map internals.
    counts.sort_unstable();
    Ok(counts)
}

/// `G(f)` over a position list, direct route.
pub fn g_sum_direct(
    group: GroupDescriptor,
    positions: &[GroupElement],
    f: &LocalFunctional,
) -> Result<f64> {
    let counts = direct_local_times(group, positions)?;
    let mut sum = Kahan::new();
    for c in counts {
        sum.add(f.evaluate(u64::from(c)));
    }
    Ok(sum.value())
}

/// Local times of the window `S_m, ..., S_{n-1}` of a trajectory.
pub fn window_local_times(
    group: GroupDescriptor,
    trajectory: &[GroupElement],
    m: u64,
    n: u64,
) -> Result<Vec<u32>> {
    let len = trajectory.len() as u64;
    if m > n || n > len {
        return Err(Error::InvalidWindow { m, n, len });
    }
    direct_local_times(group, &trajectory[m as usize..n as usize])
}

/// Windowed occupation sum `G_{m,n}(f)` over `S_m, ..., S_{n-1}`.
pub fn g_window(
    group: GroupDescriptor,
    trajectory: &[GroupElement],
    m: u64,
    n: u64,
    f: &LocalFunctional,
) -> Result<f64> {
    let counts = window_local_times(group, trajectory, m, n)?;
    let mut sum = Kahan::new();
    for c in counts {
        sum.add(f.evaluate(u64::from(c)));
    }
    Ok(sum.value())
}

/// Exact integer `G_{m,n}(h^(j))`.
pub fn g_window_hinge(
    group: GroupDescriptor,
    trajectory: &[GroupElement],
    m: u64,
    n: u64,
    j: u32,
) -> Result<i64> {
    assert!(j >= 1);
    let counts = window_local_times(group, trajectory, m, n)?;
    let mut total: i64 = 0;
    for c in counts {
        if c >= j {
            total += i64::from(c + 1 - j);
        }
    }
    Ok(total)
}

/// Whether a check asserts equality or an upper bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CheckKind {
    Equal,
    AtMost,
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentityCheck {
    pub name: String,
    pub lhs: i64,
    pub rhs: i64,
    pub kind: CheckKind,
    pub pass: bool,
}

impl IdentityCheck {
    fn equal(name: String, lhs: i64, rhs: i64) -> Self {
        IdentityCheck {
            name,
            lhs,
            rhs,
            kind: CheckKind::Equal,
            pass: lhs == rhs,
        }
    }

    fn at_most(name: String, lhs: i64, rhs: i64) -> Self {
        IdentityCheck {
            name,
            lhs,
            rhs,
            kind: CheckKind::AtMost,
            pass: lhs <= rhs,
        }
    }
}

/// Outcome of the exact identity battery on one trajectory.
#[derive(Clone, Debug, Serialize)]
pub struct IdentityReport {
    pub n: u64,
    pub j_max: u32,
    pub splits: Vec<u64>,
    pub checks: Vec<IdentityCheck>,
}

impl IdentityReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn first_failure(&self) -> Option<&IdentityCheck> {
        self.checks.iter().find(|c| !c.pass)
    }
}

/// Run every exact identity against one trajectory, entirely in integer
/// arithmetic. Three independent routes feed the checks: the incremental
/// histogram, fresh direct site maps, and the algebraic range
/// decomposition.
pub fn verify_identities(
    group: GroupDescriptor,
    trajectory: &[GroupElement],
    j_max: u32,
    splits: &[u64],
) -> Result<IdentityReport> {
    if trajectory.is_empty() {
        return Err(Error::InvalidExperiment(
            "identity checks need at least one position".into(),
        ));
    }
    if j_max == 0 {
        return Err(Error::InvalidExperiment("j_max must be >= 1".into()));
    }
    let n = trajectory.len() as u64;
    for &m in splits {
        if m == 0 || m >= n {
            return Err(Error::InvalidWindow { m, n, len: n });
        }
    }

    // Route 1: incremental accumulator.
    let mut acc = LocalTimeAccumulator::new(group);
    for pos in trajectory {
        acc.ingest_position(pos)?;
    }
    // Route 2: direct site map.
    let direct = direct_local_times(group, trajectory)?;

    let hist = acc.histogram();
    let mut checks = Vec::new();

    let direct_visits: i64 = direct.iter().map(|&c| i64::from(c)).sum();
    checks.push(IdentityCheck::equal(
        "visit_conservation(histogram)".into(),
        hist.iter().map(|(k, c)| i64::from(k) * c as i64).sum(),
        n as i64,
    ));
    checks.push(IdentityCheck::equal(
        "visit_conservation(direct)".into(),
        direct_visits,
        n as i64,
    ));
    checks.push(IdentityCheck::equal(
        "range_agreement".into(),
        hist.range() as i64,
        direct.len() as i64,
    ));

    // Window local times per split, recounted once and shared across j.
    let hinge_of = |counts: &[u32], j: u32| -> i64 {
        counts
            .iter()
            .filter(|&&c| c >= j)
            .map(|&c| i64::from(c + 1 - j))
            .sum()
    };
    let mut windows = Vec::new();
    for &m in splits {
        let left = window_local_times(group, trajectory, 0, m)?;
        let right = window_local_times(group, trajectory, m, n)?;
        windows.push((m, left, right));
    }

    let range = hist.range() as i64;
    for j in 1..=j_max {
        let hinge_hist = hist.hinge_sum(j);
        let hinge_direct = hinge_of(&direct, j);
        checks.push(IdentityCheck::equal(
            format!("hinge_sum(j={j})"),
            hinge_hist,
            hinge_direct,
        ));
        // n - G(h^(j)) = (j-1) R - sum_{k<j} (j-1-k) R^(k), route 3.
        let correction: i64 = (1..j)
            .map(|k| i64::from(j - 1 - k) * hist.count_at(k) as i64)
            .sum();
        checks.push(IdentityCheck::equal(
            format!("hinge_range_decomposition(j={j})"),
            n as i64 - hinge_hist,
            i64::from(j - 1) * range - correction,
        ));
        for (m, left, right) in &windows {
            checks.push(IdentityCheck::at_most(
                format!("hinge_superadditive(j={j},m={m})"),
                hinge_of(left, j) + hinge_of(right, j),
                hinge_hist,
            ));
        }
    }

    Ok(IdentityReport {
        n,
        j_max,
        splits: splits.to_vec(),
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::FunctionalSpec;
    use crate::rng::{RngSpec, StreamDomain};
    use crate::walk::{trajectory, StepDistribution};
    use proptest::prelude::*;

    fn z(d: usize) -> GroupDescriptor {
        GroupDescriptor::lattice(d).unwrap()
    }

    fn f2() -> GroupDescriptor {
        GroupDescriptor::free(2).unwrap()
    }

    /// The walked line 0, 1, 2, 1 used as a hand-checked fixture.
    fn line_fixture() -> (GroupDescriptor, Vec<GroupElement>) {
        let g = z(1);
        let traj = [0i64, 1, 2, 1]
            .iter()
            .map(|&c| GroupElement::Lattice(vec![c]))
            .collect();
        (g, traj)
    }

    #[test]
    fn hand_fixture_statistics() {
        let (g, traj) = line_fixture();
        let mut acc = LocalTimeAccumulator::with_functionals(
            g,
            vec![
                LocalFunctional::IndicatorRange,
                LocalFunctional::power(2.0).unwrap(),
                LocalFunctional::hshift(2).unwrap(),
            ],
        );
        for p in &traj {
            acc.ingest_position(p).unwrap();
        }
        assert_eq!(acc.positions(), 4);
        assert_eq!(acc.range(), 3);
        let h = acc.histogram();
        assert_eq!(h.count_at(1), 2);
        assert_eq!(h.count_at(2), 1);
        assert_eq!(h.count_at(3), 0);
        assert_eq!(h.max_multiplicity(), 2);
        // G(range) = 3, G(l^2) = 1 + 1 + 4 = 6, G(h^(2)) = 0 + 0 + 1 = 1.
        assert_eq!(acc.running_value(0), 3.0);
        assert_eq!(acc.running_value(1), 6.0);
        assert_eq!(acc.running_value(2), 1.0);
        assert_eq!(h.hinge_sum(1), 4);
        assert_eq!(h.hinge_sum(2), 1);
        assert_eq!(h.hinge_sum(3), 0);
        acc.check_conservation().unwrap();
    }

    #[test]
    fn hand_fixture_windows() {
        let (g, traj) = line_fixture();
        // Window [1, 4): positions 1, 2, 1.
        let counts = window_local_times(g, &traj, 1, 4).unwrap();
        assert_eq!(counts, vec![1, 2]);
        let f = LocalFunctional::hshift(2).unwrap();
        assert_eq!(g_window(g, &traj, 1, 4, &f).unwrap(), 1.0);
        assert_eq!(g_window_hinge(g, &traj, 0, 4, 2).unwrap(), 1);
        // Degenerate windows.
        assert_eq!(window_local_times(g, &traj, 2, 2).unwrap(), Vec::<u32>::new());
        assert!(window_local_times(g, &traj, 3, 2).is_err());
        assert!(window_local_times(g, &traj, 0, 9).is_err());
    }

    #[test]
    fn single_position_trajectory() {
        let g = f2();
        let traj = vec![g.identity()];
        let report = verify_identities(g, &traj, 4, &[]).unwrap();
        assert!(report.all_pass(), "{:?}", report.first_failure());
        assert_eq!(report.n, 1);
    }

    #[test]
    fn incremental_matches_direct_bit_for_bit_on_integer_functionals() {
        let fams = [
            FunctionalSpec::Range,
            FunctionalSpec::Level(2),
            FunctionalSpec::Power(2.0),
            FunctionalSpec::HShift(3),
        ];
        for (g, steps) in [(z(1), 3000u64), (z(3), 3000), (f2(), 1500)] {
            let dist = StepDistribution::standard_srw(g);
            for seed in 0..5 {
                let traj = trajectory(
                    &dist,
                    steps,
                    RngSpec::new(seed, StreamDomain::Suite, 42),
                );
                let fs: Vec<LocalFunctional> =
                    fams.iter().map(|s| s.resolve(None).unwrap()).collect();
                let mut acc = LocalTimeAccumulator::with_functionals(g, fs.clone());
                acc.ingest_position(&traj[0]).unwrap();
                for p in &traj[1..] {
                    acc.ingest_position(p).unwrap();
                }
                for (i, f) in fs.iter().enumerate() {
                    let direct = g_sum_direct(g, &traj, f).unwrap();
                    let incremental = acc.running_value(i);
                    assert_eq!(
                        incremental.to_bits(),
                        direct.to_bits(),
                        "{} on {g} seed {seed}",
                        f.id()
                    );
                    // Third route: table sum over the histogram.
                    assert_eq!(acc.histogram().weighted_sum(f).to_bits(), direct.to_bits());
                }
            }
        }
    }

    #[test]
    fn incremental_matches_direct_closely_on_real_functionals() {
        let g = f2();
        let dist = StepDistribution::standard_srw(g);
        let fs = vec![
            LocalFunctional::power(0.5).unwrap(),
            LocalFunctional::geometric_half(2.0 / 3.0).unwrap(),
        ];
        for seed in 0..5 {
            let traj = trajectory(&dist, 2000, RngSpec::new(seed, StreamDomain::Suite, 7));
            let mut acc = LocalTimeAccumulator::with_functionals(g, fs.clone());
            for p in &traj {
                acc.ingest_position(p).unwrap();
            }
            for (i, f) in fs.iter().enumerate() {
                let direct = g_sum_direct(g, &traj, f).unwrap();
                let incremental = acc.running_value(i);
                let rel = (incremental - direct).abs() / direct.abs().max(1.0);
                assert!(rel <= 1e-12, "{}: rel {rel}", f.id());
            }
        }
    }

    #[test]
    fn advance_and_ingest_agree() {
        let g = f2();
        let dist = StepDistribution::standard_srw(g);
        let traj = trajectory(&dist, 1000, RngSpec::new(12, StreamDomain::Suite, 0));
        let mut by_pos = LocalTimeAccumulator::new(g);
        for p in &traj {
            by_pos.ingest_position(p).unwrap();
        }
        // Same walk driven by increments.
        let mut by_inc = LocalTimeAccumulator::new(g);
        let mut stream = crate::walk::walk(&dist, RngSpec::new(12, StreamDomain::Suite, 0));
        by_inc.ingest_position(stream.position()).unwrap();
        for _ in 0..1000 {
            let idx = stream.advance();
            let inc = dist.atoms()[idx].clone();
            by_inc.advance(&inc).unwrap();
        }
        assert_eq!(by_pos.positions(), by_inc.positions());
        assert_eq!(by_pos.range(), by_inc.range());
        let a: Vec<(u32, u64)> = by_pos.histogram().iter().collect();
        let b: Vec<(u32, u64)> = by_inc.histogram().iter().collect();
        assert_eq!(a, b);
    }

    #[test]
    fn backends_agree_on_free_groups() {
        let g = f2();
        let dist = StepDistribution::standard_srw(g);
        let fs = vec![
            LocalFunctional::IndicatorRange,
            LocalFunctional::hshift(2).unwrap(),
        ];
        for seed in 0..8 {
            let traj = trajectory(&dist, 1200, RngSpec::new(seed, StreamDomain::Suite, 1));
            let mut tree = LocalTimeAccumulator::with_functionals(g, fs.clone());
            let mut hashed = LocalTimeAccumulator::with_generic_backend(g, fs.clone());
            assert_eq!(tree.backend_name(), "tree");
            assert_eq!(hashed.backend_name(), "hashed");
            for p in &traj {
                tree.ingest_position(p).unwrap();
                hashed.ingest_position(p).unwrap();
            }
            assert_eq!(tree.range(), hashed.range());
            assert_eq!(tree.running_values(), hashed.running_values());
            let a: Vec<(u32, u64)> = tree.histogram().iter().collect();
            let b: Vec<(u32, u64)> = hashed.histogram().iter().collect();
            assert_eq!(a, b);
            tree.check_conservation().unwrap();
            hashed.check_conservation().unwrap();
        }
    }

    #[test]
    fn table_routes_agree_with_running_sums() {
        let g = z(2);
        let dist = StepDistribution::standard_srw(g);
        let f = LocalFunctional::hshift(2).unwrap();
        let mut acc = LocalTimeAccumulator::with_functionals(g, vec![f.clone()]);
        let traj = trajectory(&dist, 4000, RngSpec::new(5, StreamDomain::Suite, 2));
        for p in &traj {
            acc.ingest_position(p).unwrap();
        }
        assert_eq!(acc.running_value(0), acc.g_table_route(&f));
        assert_eq!(acc.running_value(0) as i64, acc.hinge_table_route(2));
        assert_eq!(acc.histogram().hinge_sum(2), acc.hinge_table_route(2));
    }

    #[test]
    fn growth_is_monotone_in_n() {
        let g = f2();
        let dist = StepDistribution::standard_srw(g);
        let mut stream = crate::walk::walk(&dist, RngSpec::new(31, StreamDomain::Suite, 0));
        let mut acc = LocalTimeAccumulator::new(g);
        acc.ingest_position(stream.position()).unwrap();
        let mut prev_range = acc.range();
        let mut prev_hinge = acc.histogram().hinge_sum(3);
        for _ in 0..2000 {
            let idx = stream.advance();
            acc.advance(&dist.atoms()[idx].clone()).unwrap();
            let r = acc.range();
            let h = acc.histogram().hinge_sum(3);
            assert!(r >= prev_range);
            assert!(h >= prev_hinge);
            prev_range = r;
            prev_hinge = h;
        }
    }

    #[test]
    fn truncation_tail_identity_is_exact() {
        // G(f) - G(f^(p)) = sum_{k>p} f(k) R^(k), exactly, for integer f.
        let g = z(1);
        let dist = StepDistribution::standard_srw(g);
        let traj = trajectory(&dist, 3000, RngSpec::new(77, StreamDomain::Suite, 3));
        let f = LocalFunctional::power(2.0).unwrap();
        for p in [1u32, 2, 5, 20] {
            let fp = f.truncate(p).unwrap();
            let whole = g_sum_direct(g, &traj, &f).unwrap();
            let head = g_sum_direct(g, &traj, &fp).unwrap();
            let mut acc = LocalTimeAccumulator::new(g);
            for pos in &traj {
                acc.ingest_position(pos).unwrap();
            }
            let tail: f64 = acc
                .histogram()
                .iter()
                .filter(|(k, _)| *k > p)
                .map(|(k, c)| f.evaluate(u64::from(k)) * c as f64)
                .sum();
            assert_eq!(whole - head, tail);
        }
    }

    #[test]
    fn identity_battery_passes_on_random_walks() {
        for (g, steps) in [(z(1), 800u64), (z(3), 800), (f2(), 800)] {
            let dist = StepDistribution::standard_srw(g);
            for seed in 0..10 {
                let traj =
                    trajectory(&dist, steps, RngSpec::new(seed, StreamDomain::Suite, 9));
                let n = traj.len() as u64;
                let report =
                    verify_identities(g, &traj, 6, &[n / 4, n / 2, 3 * n / 4]).unwrap();
                assert!(
                    report.all_pass(),
                    "{g} seed {seed}: {:?}",
                    report.first_failure()
                );
            }
        }
    }

    #[test]
    fn identity_battery_rejects_bad_inputs() {
        let (g, traj) = line_fixture();
        assert!(verify_identities(g, &[], 3, &[]).is_err());
        assert!(verify_identities(g, &traj, 0, &[]).is_err());
        assert!(verify_identities(g, &traj, 3, &[0]).is_err());
        assert!(verify_identities(g, &traj, 3, &[4]).is_err());
    }

    #[test]
    fn conservation_check_detects_tampering() {
        let (g, traj) = line_fixture();
        let mut acc = LocalTimeAccumulator::new(g);
        for p in &traj {
            acc.ingest_position(p).unwrap();
        }
        let good = acc.histogram().clone();
        good.check_conservation().unwrap();
        // Any single-field tampering must be caught.
        let mut h = good.clone();
        h.range += 1;
        assert!(h.check_conservation().is_err());
        let mut h = good.clone();
        h.visits -= 1;
        assert!(h.check_conservation().is_err());
        let mut h = good;
        h.levels[0] += 1;
        assert!(h.check_conservation().is_err());
    }

    #[test]
    fn snapshot_round_trips_to_json() {
        let (g, traj) = line_fixture();
        let mut acc = LocalTimeAccumulator::with_functionals(
            g,
            vec![LocalFunctional::IndicatorRange],
        );
        for p in &traj {
            acc.ingest_position(p).unwrap();
        }
        let snap = acc.snapshot();
        let json = serde_json::to_string(&snap).unwrap();
        assert!(json.contains("\"schema\":\"walklaw.snapshot.v1\""));
        assert!(json.contains("\"range\":3"));
        let rows = snap.rows();
        assert!(rows.contains(&("multiplicity:2".to_string(), 1.0)));
        assert!(rows.contains(&("G(range)".to_string(), 3.0)));
    }

    #[test]
    fn membership_is_enforced() {
        let mut acc = LocalTimeAccumulator::new(z(2));
        assert!(acc.ingest_position(&GroupElement::Word(vec![1])).is_err());
        assert!(acc
            .ingest_position(&GroupElement::Lattice(vec![0, 0]))
            .is_ok());
        assert!(acc.advance(&GroupElement::Lattice(vec![1])).is_err());
    }

    #[test]
    #[should_panic(expected = "advance before any ingested position")]
    fn advance_requires_a_starting_position() {
        let mut acc = LocalTimeAccumulator::new(z(1));
        let _ = acc.advance(&GroupElement::Lattice(vec![1]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn prop_identities_hold_on_arbitrary_position_lists(
            raw in prop::collection::vec(-8i64..=8, 1..120),
            j_max in 1u32..6,
        ) {
            // Arbitrary (not walk-generated) position sequences: the exact
            // identities are purely combinatorial and must still hold.
            let g = z(1);
            let traj: Vec<GroupElement> =
                raw.iter().map(|&c| GroupElement::Lattice(vec![c])).collect();
            let n = traj.len() as u64;
            let splits: Vec<u64> = if n > 2 { vec![n / 2] } else { vec![] };
            let report = verify_identities(g, &traj, j_max, &splits).unwrap();
            prop_assert!(report.all_pass(), "{:?}", report.first_failure());
        }

        #[test]
        fn prop_window_counts_partition_the_trajectory(
            raw in prop::collection::vec(-5i64..=5, 2..80),
        ) {
            let g = z(1);
            let traj: Vec<GroupElement> =
                raw.iter().map(|&c| GroupElement::Lattice(vec![c])).collect();
            let n = traj.len() as u64;
            let m = n / 2;
            let whole: u64 = window_local_times(g, &traj, 0, n).unwrap()
                .iter().map(|&c| u64::from(c)).sum();
            let left: u64 = window_local_times(g, &traj, 0, m).unwrap()
                .iter().map(|&c| u64::from(c)).sum();
            let right: u64 = window_local_times(g, &traj, m, n).unwrap()
                .iter().map(|&c| u64::from(c)).sum();
            prop_assert_eq!(whole, n);
            prop_assert_eq!(left + right, n);
        }
    }
}
