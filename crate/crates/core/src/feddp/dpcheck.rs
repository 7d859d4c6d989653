//! Empirical check of the ε-DP inequality on histogram bins.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `count` equal-width bins over `[lo, hi)`; values outside fall into the
/// first or last bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bins {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Bins {
    fn index(&self, x: f64) -> usize {
        let t = (x - self.lo) / (self.hi - self.lo) * self.count as f64;
        if t < 0.0 {
            0
        } else {
            (t as usize).min(self.count - 1)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpCheckReport {
    /// Largest probability ratio over bins hit by either input, in both
    /// directions. Infinite when one input reaches a bin the other never does.
    pub max_ratio: f64,
    /// `e^ε · (1 + tolerance)`.
    pub bound: f64,
    pub holds: bool,
}

/// Runs `mechanism` `trials` times on each of `r` and `r_prime` and
/// compares the empirical outcome distributions against `e^ε`.
#[allow(clippy::too_many_arguments)]
pub fn dp_ratio_check<I: ?Sized, R: Rng>(
    mut mechanism: impl FnMut(&I, &mut R) -> f64,
    r: &I,
    r_prime: &I,
    epsilon: f64,
    bins: Bins,
    trials: usize,
    tolerance: f64,
    rng: &mut R,
) -> Result<DpCheckReport> {
    if trials == 0 {
        return Err(Error::invalid("dp_ratio_check needs at least one trial"));
    }
    if bins.count == 0 || !(bins.hi > bins.lo) {
        return Err(Error::invalid(format!("bad histogram bins {bins:?}")));
    }
    if !(epsilon > 0.0) || !(tolerance >= 0.0) {
        return Err(Error::invalid("epsilon must be positive and tolerance non-negative"));
    }
    let mut hist = [vec![0u64; bins.count], vec![0u64; bins.count]];
    for (h, input) in hist.iter_mut().zip([r, r_prime]) {
        for _ in 0..trials {
            let x = mechanism(input, rng);
            if x.is_nan() {
                return Err(Error::invalid("mechanism produced NaN"));
            }
            h[bins.index(x)] += 1;
        }
    }
    let mut max_ratio: f64 = 0.0;
    for (&a, &b) in hist[0].iter().zip(&hist[1]) {
        let ratio = match (a, b) {
            (0, 0) => continue,
            (0, _) | (_, 0) => f64::INFINITY,
            _ => (a as f64 / b as f64).max(b as f64 / a as f64),
        };
        max_ratio = max_ratio.max(ratio);
    }
    let bound = epsilon.exp() * (1.0 + tolerance);
    Ok(DpCheckReport { max_ratio, bound, holds: max_ratio <= bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feddp::laplace_sample;
    use crate::rng;

    #[test]
    fn unbounded_budget_always_holds() {
        let mut r = rng::seeded(1);
        let rep = dp_ratio_check(|&c: &f64, g| c + laplace_sample(1.0 / 1e9, g), &3.0, &4.0, 1e9,
            Bins { lo: 0.0, hi: 8.0, count: 20 }, 10_000, 0.15, &mut r).unwrap();
        assert!(rep.holds);
    }

    #[test]
    fn deterministic_mechanism_fails() {
        let mut r = rng::seeded(1);
        let rep = dp_ratio_check(|&c: &f64, _: &mut rng::StreamRng| c, &3.0, &4.0, 1.0,
            Bins { lo: 0.0, hi: 8.0, count: 20 }, 10_000, 0.15, &mut r).unwrap();
        assert!(rep.max_ratio.is_infinite());
        assert!(!rep.holds);
    }

    #[test]
    fn zero_trials_rejected() {
        let mut r = rng::seeded(1);
        let res = dp_ratio_check(|&c: &f64, _: &mut rng::StreamRng| c, &3.0, &4.0, 1.0,
            Bins { lo: 0.0, hi: 8.0, count: 20 }, 0, 0.15, &mut r);
        assert!(matches!(res, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn out_of_range_values_land_in_edge_bins() {
        let b = Bins { lo: 0.0, hi: 10.0, count: 5 };
        assert_eq!(b.index(-100.0), 0);
        assert_eq!(b.index(100.0), 4);
        assert_eq!(b.index(4.0), 2);
    }
}
