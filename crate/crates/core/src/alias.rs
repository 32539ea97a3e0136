//! Walker-Vose alias sampling for finite discrete distributions.
//!
//! Sampling costs exactly two `u64` draws per step regardless of support
//! size: one selects a slot (by 128-bit multiply-shift, avoiding modulo
//! bias), one decides between the slot and its alias. The fixed draw count
//! is part of the reproducibility contract: consumers can reason about how
//! many generator outputs a walk of `n` steps consumes.

use rand::RngCore;

use crate::error::Error;
use crate::Result;

/// Precomputed alias table over indices `0..n`.
#[derive(Clone, Debug)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<u32>,
}

impl AliasTable {
    /// Build from positive finite weights (normalization is internal).
    pub fn new(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidDistribution("empty weight list".into()));
        }
        if weights.len() > u32::MAX as usize {
            return Err(Error::InvalidDistribution("too many atoms".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w <= 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "weights must be positive and finite, got {w}"
            )));
        }
        let n = weights.len();
        let total: f64 = weights.iter().sum();
        // Scaled probabilities sum to n; each slot ends up holding its own
        // mass plus overflow donated by one "large" entry.
        let mut scaled: Vec<f64> = weights.iter().map(|w| w * n as f64 / total).collect();
        let mut prob = vec![0.0; n];
        let mut alias = vec![0u32; n];
        let mut small: Vec<u32> = Vec::with_capacity(n);
        let mut large: Vec<u32> = Vec::with_capacity(n);
        for (i, &s) in scaled.iter().enumerate() {
            if s < 1.0 {
                small.push(i as u32);
            } else {
                large.push(i as u32);
            }
        }
        while !small.is_empty() && !large.is_empty() {
            let s = small.pop().unwrap();
            let l = large.pop().unwrap();
            prob[s as usize] = scaled[s as usize];
            alias[s as usize] = l;
            scaled[l as usize] -= 1.0 - scaled[s as usize];
            if scaled[l as usize] < 1.0 {
                small.push(l);
            } else {
                large.push(l);
            }
        }
        // Leftovers are exactly 1 up to rounding; they keep their own slot.
        for i in small.into_iter().chain(large) {
            prob[i as usize] = 1.0;
            alias[i as usize] = i;
        }
        Ok(AliasTable { prob, alias })
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Draw an index. Consumes exactly two `u64` outputs of `rng`.
    #[inline]
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> usize {
        let n = self.prob.len() as u64;
        let slot = ((u128::from(rng.next_u64()) * u128::from(n)) >> 64) as usize;
        // 53-bit uniform in [0, 1).
        let coin = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        if coin < self.prob[slot] {
            slot
        } else {
            self.alias[slot] as usize
        }
    }

    /// Exact sampling probability of index `i` under the table (for tests
    /// and diagnostics): `(prob[i] + sum of donations to i) / n`.
    pub fn outcome_probability(&self, i: usize) -> f64 {
        let n = self.prob.len() as f64;
        let mut mass = self.prob[i];
        for (slot, &a) in self.alias.iter().enumerate() {
            if a as usize == i && slot != i {
                mass += 1.0 - self.prob[slot];
            }
        }
        mass / n
    }
}
