use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::quantile_sorted;

pub const DEFAULT_ITERATIONS: usize = 10_000;
pub const DEFAULT_LEVEL: f64 = 0.95;
pub const METHOD: &str = "percentile";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCI {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub iterations: usize,
    pub level: f64,
    pub seed: u64,
}

/// Mean computed as an offset from the first value, which is exact for
/// constant data.
fn shifted_mean(values: impl Iterator<Item = f64>, base: f64, n: usize) -> f64 {
    base + values.map(|v| v - base).sum::<f64>() / n as f64
}

/// Percentile bootstrap confidence interval of the mean.
///
/// Iteration `t` draws from a ChaCha8 stream keyed by `(seed, t)`, so the
/// result does not depend on how iterations are scheduled across threads.
pub fn bootstrap_ci(values: &[f64], iterations: usize, level: f64, seed: u64) -> Result<BootstrapCI> {
    if values.is_empty() {
        return Err(Error::invalid("bootstrap needs at least one value"));
    }
    if iterations == 0 {
        return Err(Error::invalid("bootstrap needs at least one iteration"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("confidence level must lie in (0, 1), got {level}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("bootstrap values must be finite"));
    }
    let n = values.len();
    let base = values[0];
    let mean = shifted_mean(values.iter().copied(), base, n);
    let mut means: Vec<f64> = (0..iterations)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            shifted_mean((0..n).map(|_| values[rng.random_range(0..n)]), base, n)
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&means, (1.0 - level) / 2.0);
    let hi = quantile_sorted(&means, (1.0 + level) / 2.0);
    Ok(BootstrapCI { mean, lo: lo.min(mean), hi: hi.max(mean), iterations, level, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_collapses() {
        let ci = bootstrap_ci(&[0.1; 37], 2000, 0.95, 3).unwrap();
        assert_eq!((ci.lo, ci.mean, ci.hi), (0.1, 0.1, 0.1));
    }

    #[test]
    fn deterministic_and_ordered() {
        let v: Vec<f64> = (0..40).map(|i| ((i * 37) % 11) as f64 / 3.0).collect();
        let a = bootstrap_ci(&v, 3000, 0.95, 9).unwrap();
        let b = bootstrap_ci(&v, 3000, 0.95, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.lo <= a.mean && a.mean <= a.hi);
        assert!(a.lo < a.hi);
        let c = bootstrap_ci(&v, 3000, 0.95, 10).unwrap();
        assert_ne!(a.lo, c.lo);
    }

    #[test]
    fn thread_count_does_not_matter() {
        let v: Vec<f64> = (0..25).map(|i| (i as f64).sqrt()).collect();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let a = one.install(|| bootstrap_ci(&v, 1000, 0.9, 1).unwrap());
        let b = bootstrap_ci(&v, 1000, 0.9, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(bootstrap_ci(&[], 10, 0.95, 0).is_err());
        assert!(bootstrap_ci(&[1.0], 10, 1.0, 0).is_err());
        assert!(bootstrap_ci(&[f64::NAN], 10, 0.95, 0).is_err());
    }
}
