use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ImiError, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCI {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub n_resamples: usize,
    pub seed: u64,
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile interval (2.5 %, 97.5 %) of the mean under resampling with
/// replacement. Resample `i` draws from its own stream, so the result does
/// not depend on thread count.
pub fn bootstrap_ci(values: &[f64], n_resamples: usize, seed: u64) -> Result<BootstrapCI> {
    if values.is_empty() {
        return Err(ImiError::Degenerate("bootstrap needs at least one value".into()));
    }
    if n_resamples == 0 {
        return Err(ImiError::Config("n_resamples must be positive".into()));
    }
    let n = values.len();
    // Offsets from the first value keep constant inputs exact.
    let base = values[0];
    let mean = base + values.iter().map(|v| v - base).sum::<f64>() / n as f64;
    let mut means = par::map_range(n_resamples, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut s = 0.0;
        for _ in 0..n {
            s += values[rng.random_range(0..n)] - base;
        }
        base + s / n as f64
    });
    means.sort_by(f64::total_cmp);
    Ok(BootstrapCI {
        mean,
        lower: percentile(&means, 0.025).min(mean),
        upper: percentile(&means, 0.975).max(mean),
        n_resamples,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_scores_collapse() {
        let ci = bootstrap_ci(&[0.7; 12], 500, 3).unwrap();
        assert_eq!((ci.lower, ci.mean, ci.upper), (0.7, 0.7, 0.7));
    }

    #[test]
    fn single_unit_collapses() {
        let ci = bootstrap_ci(&[0.55], 100, 1).unwrap();
        assert_eq!((ci.lower, ci.upper), (0.55, 0.55));
    }

    #[test]
    fn seeded() {
        let v: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
        assert_eq!(bootstrap_ci(&v, 1000, 9).unwrap(), bootstrap_ci(&v, 1000, 9).unwrap());
        assert_ne!(bootstrap_ci(&v, 1000, 9).unwrap(), bootstrap_ci(&v, 1000, 10).unwrap());
    }

    #[test]
    fn percentile_interpolates() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&s, 0.0), 1.0);
        assert_eq!(percentile(&s, 1.0), 4.0);
        assert!((percentile(&s, 0.5) - 2.5).abs() < 1e-15);
    }
}
