//! Fitted log-likelihood test statistics and the sequential scale selection rule.

use crate::error::{Error, Result};
use crate::local_model::{fll_quadratic, ScaleEstimate};
use crate::scalar::Scalar;

/// Statistics `T_{l,m}` for `1 <= l < m <= K`, stored row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct StatisticTriangle<T> {
    scales: usize,
    values: Vec<T>,
}

impl<T: Scalar> StatisticTriangle<T> {
    pub fn new(scales: usize) -> Self {
        Self { scales, values: vec![T::zero(); scales * scales.saturating_sub(1) / 2] }
    }

    fn offset(&self, l: usize, m: usize) -> usize {
        debug_assert!(1 <= l && l < m && m <= self.scales);
        let row = l - 1;
        row * (2 * self.scales - row - 1) / 2 + (m - l - 1)
    }

    pub fn scales(&self) -> usize {
        self.scales
    }

    /// `T_{l,m}` with 1-based `l < m`.
    pub fn get(&self, l: usize, m: usize) -> T {
        self.values[self.offset(l, m)]
    }

    pub fn set(&mut self, l: usize, m: usize, v: T) {
        let o = self.offset(l, m);
        self.values[o] = v;
    }

    /// Rows `l = 1..K-1`, each listing `T_{l,m}` for `m = l+1..K`.
    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (1..self.scales).map(|l| (l + 1..=self.scales).map(|m| self.get(l, m)).collect()).collect()
    }
}

/// `(theta_l - theta_m)^T B_l (theta_l - theta_m)` with `B_l` from `est_l`.
pub fn test_statistic<T: Scalar>(est_l: &ScaleEstimate<T>, est_m: &ScaleEstimate<T>) -> Result<T> {
    if est_l.theta.len() != est_m.theta.len() {
        return Err(Error::DimensionMismatch { expected: est_l.theta.len(), found: est_m.theta.len() });
    }
    Ok(fll_quadratic(est_l, &est_m.theta))
}

pub fn statistics<T: Scalar>(estimates: &[ScaleEstimate<T>]) -> Result<StatisticTriangle<T>> {
    let k = estimates.len();
    let mut tri = StatisticTriangle::new(k);
    for l in 1..k {
        for m in l + 1..=k {
            tri.set(l, m, test_statistic(&estimates[l - 1], &estimates[m - 1])?);
        }
    }
    Ok(tri)
}

/// `k_hat = max{k : T_{l,m} <= z_l for all l < m <= k}`, 1-based.
pub fn select_index<T: Scalar>(stats: &StatisticTriangle<T>, thresholds: &[T]) -> usize {
    let mut k_hat = 1;
    for m in 2..=stats.scales() {
        let ok = (1..m).all(|l| stats.get(l, m) <= thresholds[l - 1]);
        if !ok {
            break;
        }
        k_hat = m;
    }
    k_hat
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveResult<T> {
    /// Selected scale, 1-based.
    pub k_hat: usize,
    pub estimates: Vec<ScaleEstimate<T>>,
    pub statistics: StatisticTriangle<T>,
    pub accepted: Vec<bool>,
    pub adaptive_theta: Vec<T>,
}

impl<T: Scalar> AdaptiveResult<T> {
    /// `theta_{min(k, k_hat)}`.
    pub fn last_accepted(&self, k: usize) -> &[T] {
        &self.estimates[k.min(self.k_hat).max(1) - 1].theta
    }
}

/// Runs the sequential rule with thresholds `z_1..z_{K-1}`.
pub fn select<T: Scalar>(estimates: Vec<ScaleEstimate<T>>, thresholds: &[T]) -> Result<AdaptiveResult<T>> {
    let k = estimates.len();
    if k == 0 {
        return Err(Error::DimensionMismatch { expected: 1, found: 0 });
    }
    if thresholds.len() != k - 1 {
        return Err(Error::DimensionMismatch { expected: k - 1, found: thresholds.len() });
    }
    let stats = statistics(&estimates)?;
    let k_hat = select_index(&stats, thresholds);
    let accepted = (1..=k).map(|m| m <= k_hat).collect();
    let adaptive_theta = estimates[k_hat - 1].theta.clone();
    Ok(AdaptiveResult { k_hat, estimates, statistics: stats, accepted, adaptive_theta })
}

/// Convenience wrapper for [`AdaptiveResult::last_accepted`].
pub fn last_accepted<T: Scalar>(estimates: Vec<ScaleEstimate<T>>, thresholds: &[T], k: usize) -> Result<Vec<T>> {
    Ok(select(estimates, thresholds)?.last_accepted(k).to_vec())
}
