//! Monte Carlo summaries with batch-means standard errors.

use serde::{Deserialize, Serialize};

pub const BATCHES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

impl McEstimate {
    /// `|self - other|` measured in combined standard errors.
    pub fn z_distance(&self, other: &McEstimate) -> f64 {
        let se = (self.std_error.powi(2) + other.std_error.powi(2)).sqrt();
        let d = (self.mean - other.mean).abs();
        if se > 0.0 {
            d / se
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    /// True when `value` lies within `k` standard errors of the estimate.
    pub fn covers(&self, value: f64, k: f64) -> bool {
        let d = (self.mean - value).abs();
        d <= k * self.std_error || d <= 1e-12 * value.abs().max(1e-300)
    }
}

/// Pairwise summation; the reduction order depends only on the length.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(v) / v.len() as f64
}

/// Mean with a batch-means standard error over [`BATCHES`] contiguous batches.
pub fn batch_means(v: &[f64]) -> McEstimate {
    let n = v.len();
    let m = mean(v);
    let batches = BATCHES.min(n);
    if batches < 2 {
        return McEstimate { mean: m, std_error: f64::INFINITY };
    }
    let means: Vec<f64> = (0..batches)
        .map(|b| {
            let lo = b * n / batches;
            let hi = (b + 1) * n / batches;
            mean(&v[lo..hi])
        })
        .collect();
    let grand = mean(&means);
    let var = means.iter().map(|x| (x - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    McEstimate { mean: m, std_error: (var / batches as f64).sqrt() }
}

/// Least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let mx = mean(x);
    let my = mean(y);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_means_of_constant() {
        let e = batch_means(&vec![2.5; 1000]);
        assert_eq!(e.mean, 2.5);
        assert_eq!(e.std_error, 0.0);
    }

    #[test]
    fn batch_means_close_to_iid_error() {
        let v: Vec<f64> = (0..20000).map(|i| (i as f64 * 0.754877666).fract() - 0.5).collect();
        let e = batch_means(&v);
        assert!(e.mean.abs() < 0.01);
        assert!(e.std_error < 0.01);
    }

    #[test]
    fn slope_of_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|a| 3.0 - 0.5 * a).collect();
        assert!((ols_slope(&x, &y) + 0.5).abs() < 1e-14);
    }

    #[test]
    fn pairwise_matches_naive() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499500.0);
    }
}
