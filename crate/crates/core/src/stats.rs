//! Small statistics toolbox shared by the experiment runners.

use serde::Serialize;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959963984540054;

/// Compensated (Kahan-Neumaier) accumulator. Running functional sums apply
/// many tiny increments to a large total; naive summation would let the
/// incremental route drift away from the direct route.
#[derive(Clone, Copy, Debug, Default)]
pub struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    pub fn new() -> Self {
        Kahan::default()
    }

    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Summary of a sample of replica statistics. The confidence halfwidth is
/// the 95% normal interval for the mean; with fewer than about 30 replicas
/// it is a rough gauge, flagged by `low_count`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct AggregateStats {
    pub count: u64,
    pub mean: f64,
    /// Unbiased sample variance (0 for a single observation).
    pub variance: f64,
    pub min: f64,
    pub max: f64,
    pub ci_halfwidth: f64,
    pub low_count: bool,
}

impl AggregateStats {
    /// Two-pass mean/variance; deterministic for a fixed input order.
    pub fn from_values(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "aggregate of an empty sample");
        let n = values.len() as f64;
        let mut sum = Kahan::new();
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &v in values {
            sum.add(v);
            min = min.min(v);
            max = max.max(v);
        }
        let mean = sum.value() / n;
        let mut ss = Kahan::new();
        for &v in values {
            let d = v - mean;
            ss.add(d * d);
        }
        let variance = if values.len() > 1 {
            ss.value() / (n - 1.0)
        } else {
            0.0
        };
        let ci_halfwidth = if values.len() > 1 {
            Z_95 * (variance / n).sqrt()
        } else {
            f64::INFINITY
        };
        AggregateStats {
            count: values.len() as u64,
            mean,
            variance,
            min,
            max,
            ci_halfwidth,
            low_count: values.len() < 30,
        }
    }

    /// Standard error of the mean.
    pub fn sem(&self) -> f64 {
        if self.count == 0 {
            return f64::INFINITY;
        }
        (self.variance / self.count as f64).sqrt()
    }
}

/// 95% halfwidth for a binomial proportion estimated from `m` trials.
pub fn binomial_ci_halfwidth(p_hat: f64, m: u64) -> f64 {
    if m == 0 {
        return f64::INFINITY;
    }
    Z_95 * (p_hat * (1.0 - p_hat) / m as f64).sqrt()
}

/// Least squares slope of `ys` against `xs`; `None` when fewer than two
/// distinct abscissae exist.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}
