//! Monte Carlo estimates with standard errors.

use serde::{Deserialize, Serialize};

/// Number of batches used for batch-means standard errors.
pub const DEFAULT_BATCHES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithCI {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl EstimateWithCI {
    pub fn exact(value: f64) -> Self {
        Self { mean: value, se: 0.0, n: 0 }
    }

    /// Batch-means estimate over samples in index order.
    pub fn from_samples(samples: &[f64]) -> Self {
        batch_means(samples, DEFAULT_BATCHES)
    }

    pub fn ci95(&self) -> (f64, f64) {
        (self.mean - 1.96 * self.se, self.mean + 1.96 * self.se)
    }

    pub fn rel_se(&self) -> f64 {
        self.se / self.mean.abs()
    }

    /// `|a - b| <= k * sqrt(se_a^2 + se_b^2)`.
    pub fn agrees_with(&self, other: &EstimateWithCI, k: f64) -> bool {
        (self.mean - other.mean).abs() <= k * combined_se(self, other)
    }

    /// Within `k` standard errors of a deterministic target.
    pub fn within_se_of(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se
    }

    pub fn within_rel_of(&self, target: f64, rel: f64) -> bool {
        (self.mean - target).abs() <= rel * target.abs()
    }
}

pub fn combined_se(a: &EstimateWithCI, b: &EstimateWithCI) -> f64 {
    (a.se * a.se + b.se * b.se).sqrt()
}

pub fn mean(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    samples.iter().sum::<f64>() / samples.len() as f64
}

/// Unbiased sample variance.
pub fn variance(samples: &[f64]) -> f64 {
    let n = samples.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(samples);
    samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Batch means: the samples are cut into `batches` contiguous groups of
/// (almost) equal length and the standard error is taken from the spread of
/// the group means. Falls back to the i.i.d. formula for tiny inputs.
pub fn batch_means(samples: &[f64], batches: usize) -> EstimateWithCI {
    let n = samples.len();
    let m = mean(samples);
    if n < 2 * batches.max(1) {
        let se = if n > 1 { (variance(samples) / n as f64).sqrt() } else { f64::NAN };
        return EstimateWithCI { mean: m, se, n };
    }
    let bm: Vec<f64> = (0..batches)
        .map(|b| {
            let lo = b * n / batches;
            let hi = (b + 1) * n / batches;
            mean(&samples[lo..hi])
        })
        .collect();
    let se = (variance(&bm) / batches as f64).sqrt();
    EstimateWithCI { mean: m, se, n }
}

/// Sample variance with a delta-method standard error (i.i.d. samples).
pub fn variance_estimate(samples: &[f64]) -> EstimateWithCI {
    let n = samples.len();
    let m = mean(samples);
    let v = variance(samples);
    let m4 = samples.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n as f64;
    let se = ((m4 - v * v * (n as f64 - 3.0) / (n as f64 - 1.0)) / n as f64).max(0.0).sqrt();
    EstimateWithCI { mean: v, se, n }
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = mean(&lx);
    let my = mean(&ly);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Order-preserving map over `0..n`; parallel when the `parallel` feature is on.
///
/// Results are collected in index order, so any reduction done afterwards is
/// independent of scheduling.
pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
