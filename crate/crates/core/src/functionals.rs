//! Functionals of local times and their limit theory.
//!
//! A local functional `f` maps a visit count `j >= 1` to a real value, with
//! `f(0) = 0` always. The occupation functional of a walk segment is
//! `G_n(f) = sum_x f(l(n-1, x))`, and under a summability condition its
//! normalization converges:
//!
//! ```text
//! G_n(f) / n  ->  gamma^2 * sum_{j>=1} f(j) (1-gamma)^(j-1)
//! ```
//!
//! where `gamma` is the escape probability. Convergence holds almost surely
//! and in L^1 when `sum_j |f(j)| (1-gamma)^j` is finite, and in L^2 when
//! `sum_j f(j)^2 (1-gamma)^j / j` is finite. The two conditions genuinely
//! differ: `geomhalf`, with `f(j) = (1-gamma)^(-j/2)`, satisfies the first
//! (its weighted terms form a geometric series with ratio `sqrt(1-gamma)`)
//! while the second becomes the harmonic series and diverges.

use std::fmt;

use crate::error::Error;
use crate::stats::Kahan;
use crate::Result;

/// A functional of visit counts. All variants map `0` to `0`.
#[derive(Clone, Debug, PartialEq)]
pub enum LocalFunctional {
    /// `f(j) = 1` for `j >= 1`: `G_n(f)` is the range `R_n`.
    IndicatorRange,
    /// `f(j) = 1` exactly at `j = level`: counts `level`-multiple sites.
    IndicatorLevel { level: u32 },
    /// `f(j) = j^alpha`. `alpha = 1` makes `G_n(f) = n` identically.
    Power { alpha: f64 },
    /// `f(j) = max(j + 1 - shift, 0)`, the shifted hinge `h^(shift)`.
    HShift { shift: u32 },
    /// `f(j) = (1-gamma)^(-j/2)`: summable once, not square-summable.
    GeometricHalf { gamma: f64 },
    /// Explicit values: `f(j) = values[j-1]` for `j <= len`, else `0`.
    UserTable { values: Vec<f64> },
    /// `f^(p)`: the inner functional cut off after `cutoff`.
    Truncated {
        inner: Box<LocalFunctional>,
        cutoff: u32,
    },
}

use LocalFunctional::*;

impl LocalFunctional {
    pub fn level(level: u32) -> Result<Self> {
        if level == 0 {
            return Err(Error::InvalidFunctional("level must be >= 1".into()));
        }
        Ok(IndicatorLevel { level })
    }

    pub fn power(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(Error::InvalidFunctional("power exponent must be finite".into()));
        }
        Ok(Power { alpha })
    }

    pub fn hshift(shift: u32) -> Result<Self> {
        if shift == 0 {
            return Err(Error::InvalidFunctional("hshift index must be >= 1".into()));
        }
        Ok(HShift { shift })
    }

    pub fn geometric_half(gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(GeometricHalf { gamma })
    }

    pub fn user_table(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidFunctional("table must be nonempty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidFunctional("table values must be finite".into()));
        }
        Ok(UserTable { values })
    }

    /// The truncation `f^(p)`: identical up to `p`, zero beyond.
    pub fn truncate(&self, p: u32) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidFunctional("truncation cutoff must be >= 1".into()));
        }
        Ok(match self {
            Truncated { inner, cutoff } => Truncated {
                inner: inner.clone(),
                cutoff: (*cutoff).min(p),
            },
            other => Truncated {
                inner: Box::new(other.clone()),
                cutoff: p,
            },
        })
    }

    /// Evaluate `f(j)`. Exact integer arithmetic is used wherever the value
    /// is an integer (hinges, integer powers), so functional sums computed
    /// along different routes agree bit for bit.
    #[inline]
    pub fn evaluate(&self, j: u64) -> f64 {
        if j == 0 {
            return 0.0;
        }
        match self {
            IndicatorRange => 1.0,
            IndicatorLevel { level } => {
                if j == u64::from(*level) {
                    1.0
                } else {
                    0.0
                }
            }
            Power { alpha } => {
                let base = j as f64;
                if alpha.fract() == 0.0 && alpha.abs() <= 300.0 {
                    base.powi(*alpha as i32)
                } else {
                    base.powf(*alpha)
                }
            }
            HShift { shift } => {
                let s = u64::from(*shift);
                if j + 1 > s {
                    (j + 1 - s) as f64
                } else {
                    0.0
                }
            }
            GeometricHalf { gamma } => {
                let r = (1.0 - gamma).sqrt().recip();
                if j <= i32::MAX as u64 {
                    r.powi(j as i32)
                } else {
                    f64::INFINITY
                }
            }
            UserTable { values } => {
                if j <= values.len() as u64 {
                    values[(j - 1) as usize]
                } else {
                    0.0
                }
            }
            Truncated { inner, cutoff } => {
                if j <= u64::from(*cutoff) {
                    inner.evaluate(j)
                } else {
                    0.0
                }
            }
        }
    }

    /// Stable label used in reports and CSV columns.
    pub fn id(&self) -> String {
        match self {
            IndicatorRange => "range".into(),
            IndicatorLevel { level } => format!("level:{level}"),
            Power { alpha } => format!("power:{alpha}"),
            HShift { shift } => format!("hshift:{shift}"),
            GeometricHalf { .. } => "geomhalf".into(),
            UserTable { values } => {
                let vals: Vec<String> = values.iter().map(|v| v.to_string()).collect();
                format!("table:{}", vals.join(","))
            }
            Truncated { inner, cutoff } => format!("{}@p{cutoff}", inner.id()),
        }
    }

    /// Largest `j` with `f(j)` possibly nonzero, when finite.
    fn support_end(&self) -> Option<u64> {
        match self {
            IndicatorLevel { level } => Some(u64::from(*level)),
            UserTable { values } => Some(values.len() as u64),
            Truncated { inner, cutoff } => {
                let c = u64::from(*cutoff);
                Some(inner.support_end().map_or(c, |s| s.min(c)))
            }
            _ => None,
        }
    }

    /// Upper bound on `|f(k+1)/f(k)| * x` valid for every `k >= j` (with
    /// `f(k) != 0`), used to close series tails geometrically. Only called
    /// with `x` in (0, 1).
    fn tail_ratio(&self, j: u64, x: f64) -> f64 {
        match self {
            IndicatorRange | IndicatorLevel { .. } | UserTable { .. } => x,
            Power { alpha } => {
                if *alpha <= 0.0 {
                    x
                } else {
                    ((j as f64 + 1.0) / j as f64).powf(*alpha) * x
                }
            }
            HShift { shift } => {
                let s = u64::from(*shift);
                if j + 1 > s {
                    let m = (j + 1 - s) as f64;
                    ((m + 1.0) / m) * x
                } else {
                    // Still left of the hinge; terms there are zero anyway.
                    2.0
                }
            }
            GeometricHalf { gamma } => (1.0 - gamma).sqrt().recip() * x,
            Truncated { .. } => 0.0,
        }
    }
}

impl fmt::Display for LocalFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id())
    }
}

/// Outcome of a summability check, with a human-readable certificate
/// explaining why the series converges or diverges.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ConditionVerdict {
    pub holds: bool,
    pub certificate: String,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::GammaOutOfRange(gamma));
    }
    Ok(())
}

/// Does `sum_j |f(j)| (1-gamma)^j` converge? This is the condition for the
/// almost-sure and L^1 law.
pub fn check_condition_l1(f: &LocalFunctional, gamma: f64) -> Result<ConditionVerdict> {
    check_gamma(gamma)?;
    let x = 1.0 - gamma;
    let verdict = match f {
        IndicatorRange | IndicatorLevel { .. } | HShift { .. } | Power { .. } => {
            ConditionVerdict {
                holds: true,
                certificate: format!(
                    "|f| grows at most polynomially; the geometric factor \
                     (1-gamma)^j = {x}^j forces convergence"
                ),
            }
        }
        UserTable { .. } | Truncated { .. } => ConditionVerdict {
            holds: true,
            certificate: "f has finite support; the series is a finite sum".into(),
        },
        GeometricHalf { gamma: gf } => {
            let ratio = x / (1.0 - gf).sqrt();
            geometric_verdict(ratio, "|f(j)| (1-gamma)^j")
        }
    };
    Ok(verdict)
}

/// Does `sum_j f(j)^2 (1-gamma)^j / j` converge? This is the condition for
/// the L^2 law; it implies the L^1 condition but not conversely.
pub fn check_condition_l2(f: &LocalFunctional, gamma: f64) -> Result<ConditionVerdict> {
    check_gamma(gamma)?;
    let x = 1.0 - gamma;
    let verdict = match f {
        IndicatorRange | IndicatorLevel { .. } | HShift { .. } | Power { .. } => {
            ConditionVerdict {
                holds: true,
                certificate: format!(
                    "f(j)^2 grows at most polynomially; the geometric factor \
                     (1-gamma)^j = {x}^j forces convergence"
                ),
            }
        }
        UserTable { .. } | Truncated { .. } => ConditionVerdict {
            holds: true,
            certificate: "f has finite support; the series is a finite sum".into(),
        },
        GeometricHalf { gamma: gf } => {
            let ratio = x / (1.0 - gf);
            if (ratio - 1.0).abs() < 1e-12 {
                ConditionVerdict {
                    holds: false,
                    certificate: "f(j)^2 (1-gamma)^j = 1 for every j, so the series is \
                                  the harmonic series sum 1/j, which diverges"
                        .into(),
                }
            } else {
                // Mismatched gammas: the j-th summand is ratio^j / j.
                let mut v = geometric_verdict(ratio, "f(j)^2 (1-gamma)^j / j");
                v.certificate.push_str(" (up to the harmless 1/j factor)");
                v
            }
        }
    };
    Ok(verdict)
}

fn geometric_verdict(ratio: f64, what: &str) -> ConditionVerdict {
    if ratio < 1.0 {
        ConditionVerdict {
            holds: true,
            certificate: format!("{what} is geometric with ratio {ratio} < 1"),
        }
    } else {
        ConditionVerdict {
            holds: false,
            certificate: format!("{what} has ratio {ratio} >= 1; terms do not vanish"),
        }
    }
}

const DEFAULT_REL_TOL: f64 = 1e-12;
const MAX_TERMS: u64 = 10_000_000;

/// The limit `gamma^2 * sum_{j>=1} f(j) (1-gamma)^(j-1)`, or an error
/// carrying the divergence certificate when the L^1 condition fails.
pub fn theoretical_limit(f: &LocalFunctional, gamma: f64) -> Result<f64> {
    theoretical_limit_with_tol(f, gamma, DEFAULT_REL_TOL)
}

pub fn theoretical_limit_with_tol(
    f: &LocalFunctional,
    gamma: f64,
    rel_tol: f64,
) -> Result<f64> {
    // f(j) = j telescopes against the geometric weights to exactly 1 for
    // every gamma; returning the closed form keeps downstream "deviation
    // from the limit" statistics identically zero instead of carrying the
    // series engine's rounding residue.
    if let LocalFunctional::Power { alpha } = f {
        if *alpha == 1.0 {
            check_gamma(gamma)?;
            return Ok(1.0);
        }
    }
    series_from(f, gamma, 1, rel_tol)
}

/// Tail of the limit series beyond `p`: the limit attached to `f - f^(p)`.
/// For the counterexample this is the variance floor the truncated
/// approximations cannot cross.
pub fn limit_tail(f: &LocalFunctional, gamma: f64, p: u32) -> Result<f64> {
    series_from(f, gamma, u64::from(p) + 1, DEFAULT_REL_TOL)
}

/// Partial series engine: `gamma^2 * sum_{j>=from} f(j) x^(j-1)` with a
/// geometric envelope closing the tail analytically. Terms are accumulated
/// with compensated summation; the loop stops once the envelope certifies
/// the remaining mass is below tolerance.
fn series_from(f: &LocalFunctional, gamma: f64, from: u64, rel_tol: f64) -> Result<f64> {
    let l1 = check_condition_l1(f, gamma)?;
    if !l1.holds {
        return Err(Error::ConditionFails(l1.certificate));
    }
    let x = 1.0 - gamma;
    if let Some(end) = f.support_end() {
        let mut sum = Kahan::new();
        for j in from..=end {
            sum.add(f.evaluate(j) * x.powi((j - 1) as i32));
        }
        return Ok(gamma * gamma * sum.value());
    }
    let mut sum = Kahan::new();
    let mut j = from;
    loop {
        let term = f.evaluate(j) * powx(x, j - 1);
        sum.add(term);
        let rho = f.tail_ratio(j, x);
        if rho < 1.0 {
            let tail = term.abs() * rho / (1.0 - rho);
            let scale = sum.value().abs().max(1e-300);
            if tail <= rel_tol * scale || tail < f64::MIN_POSITIVE {
                return Ok(gamma * gamma * sum.value());
            }
        }
        j += 1;
        if j - from > MAX_TERMS {
            return Err(Error::NonConvergent(format!(
                "no geometric envelope closed after {MAX_TERMS} terms of {}",
                f.id()
            )));
        }
    }
}

#[inline]
fn powx(x: f64, e: u64) -> f64 {
    if e <= i32::MAX as u64 {
        x.powi(e as i32)
    } else {
        0.0
    }
}

/// Config-grammar functional family, before the escape probability needed
/// by `geomhalf` is known.
#[derive(Clone, Debug, PartialEq)]
pub enum FunctionalSpec {
    Range,
    Level(u32),
    Power(f64),
    HShift(u32),
    GeomHalf,
    Table(Vec<f64>),
}

impl FunctionalSpec {
    /// Parse the grammar `range | level:<j> | power:<alpha> | hshift:<j> |
    /// geomhalf | table:<v1,v2,...>`.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::InvalidFunctional(format!("{text:?}: {msg}"));
        let t = text.trim();
        let (head, arg) = match t.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (t, None),
        };
        let require = |what: &str| {
            arg.filter(|a| !a.is_empty())
                .ok_or_else(|| bad(format!("{head} requires an argument ({what})")))
        };
        let none = |spec: FunctionalSpec| {
            if arg.is_some() {
                Err(bad(format!("{head} takes no argument")))
            } else {
                Ok(spec)
            }
        };
        match head {
            "range" => none(FunctionalSpec::Range),
            "geomhalf" => none(FunctionalSpec::GeomHalf),
            "level" => {
                let j: u32 = require("a level >= 1")?
                    .parse()
                    .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
                LocalFunctional::level(j)?;
                Ok(FunctionalSpec::Level(j))
            }
            "hshift" => {
                let j: u32 = require("a shift >= 1")?
                    .parse()
                    .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
                LocalFunctional::hshift(j)?;
                Ok(FunctionalSpec::HShift(j))
            }
            "power" => {
                let alpha: f64 = require("an exponent")?
                    .parse()
                    .map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
                LocalFunctional::power(alpha)?;
                Ok(FunctionalSpec::Power(alpha))
            }
            "table" => {
                let values = require("comma-separated values")?
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| bad(e.to_string()))?;
                LocalFunctional::user_table(values.clone())?;
                Ok(FunctionalSpec::Table(values))
            }
            other => Err(bad(format!(
                "unknown functional {other:?} (expected range, level:<j>, power:<alpha>, \
                 hshift:<j>, geomhalf, or table:<v1,...>)"
            ))),
        }
    }

    /// Whether resolution requires an escape probability.
    pub fn needs_gamma(&self) -> bool {
        matches!(self, FunctionalSpec::GeomHalf)
    }

    /// Bind the family to a concrete functional.
    pub fn resolve(&self, gamma: Option<f64>) -> Result<LocalFunctional> {
        Ok(match self {
            FunctionalSpec::Range => IndicatorRange,
            FunctionalSpec::Level(j) => LocalFunctional::level(*j)?,
            FunctionalSpec::Power(alpha) => LocalFunctional::power(*alpha)?,
            FunctionalSpec::HShift(j) => LocalFunctional::hshift(*j)?,
            FunctionalSpec::GeomHalf => {
                let g = gamma.ok_or_else(|| {
                    Error::InvalidFunctional(
                        "geomhalf requires a resolved escape probability".into(),
                    )
                })?;
                LocalFunctional::geometric_half(g)?
            }
            FunctionalSpec::Table(values) => LocalFunctional::user_table(values.clone())?,
        })
    }
}

impl fmt::Display for FunctionalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FunctionalSpec::Range => write!(f, "range"),
            FunctionalSpec::Level(j) => write!(f, "level:{j}"),
            FunctionalSpec::Power(a) => write!(f, "power:{a}"),
            FunctionalSpec::HShift(j) => write!(f, "hshift:{j}"),
            FunctionalSpec::GeomHalf => write!(f, "geomhalf"),
            FunctionalSpec::Table(values) => {
                let vals: Vec<String> = values.iter().map(|v| v.to_string()).collect();
                write!(f, "table:{}", vals.join(","))
            }
        }
    }
}
