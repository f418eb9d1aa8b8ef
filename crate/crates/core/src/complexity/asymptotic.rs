use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::catalog::{EigenSequence, Lattice};
use super::enumerate::{exact_count, ComplexityQuery, ComplexityResult, ExactOptions};
use super::moments::{moments, MomentSummary};
use crate::error::{Error, Result};

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// `q = sigma Phi^{-1}(1 - eps^2)`.
pub fn normal_quantile_q(epsilon: f64, sigma: f64) -> f64 {
    sigma * standard_normal().inverse_cdf(1.0 - epsilon * epsilon)
}

pub fn normal_density(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `h / (sigma (1 - e^{-2h}))`.
pub fn lattice_constant(h: f64, sigma: f64) -> f64 {
    h / (sigma * -(-2.0 * h).exp_m1())
}

pub fn nonlattice_constant(sigma: f64) -> f64 {
    1.0 / (2.0 * sigma)
}

pub fn constant_k(lattice: Lattice, sigma: f64) -> f64 {
    match lattice.span() {
        Some(h) => lattice_constant(h, sigma),
        None => nonlattice_constant(sigma),
    }
}

/// `K phi(q / sigma) E^d e^{2 q sqrt d} / sqrt d`. The reported `zeta` and
/// `theta` are their limits, `theta = q / sigma`.
pub fn asymptotic_n(summary: &MomentSummary, lattice: Lattice, query: ComplexityQuery) -> Result<ComplexityResult> {
    let query = ComplexityQuery::new(query.epsilon, query.d)?;
    if summary.sigma2 <= 0.0 {
        return Err(Error::DegenerateSpectrum);
    }
    let sigma = summary.sigma();
    let q = normal_quantile_q(query.epsilon, sigma);
    let k = constant_k(lattice, sigma);
    let d = query.d as f64;
    let log_n = k.ln() + normal_density(q / sigma).ln() + d * summary.explosion.ln() + 2.0 * q * d.sqrt()
        - 0.5 * d.ln();
    Ok(ComplexityResult {
        n_exact: None,
        zeta: (-d * summary.mean - q * d.sqrt()).exp(),
        theta_quantile: q / sigma,
        n_asymptotic: log_n.exp(),
        q,
        constant_k: k,
        relative_tail_error: 0.0,
    })
}

pub(crate) fn asymptotic_from_moments(
    summary: &MomentSummary,
    lattice: Lattice,
    query: ComplexityQuery,
) -> Result<ComplexityResult> {
    match asymptotic_n(summary, lattice, query) {
        Err(Error::DegenerateSpectrum) => Ok(ComplexityResult {
            n_exact: None,
            zeta: f64::NAN,
            theta_quantile: f64::NAN,
            n_asymptotic: f64::NAN,
            q: 0.0,
            constant_k: f64::NAN,
            relative_tail_error: 0.0,
        }),
        other => other,
    }
}

/// `(log n - d log E) / sqrt d`, which tends to `2q`.
pub fn log_rate(n: f64, summary: &MomentSummary, d: usize) -> f64 {
    (n.ln() - d as f64 * summary.explosion.ln()) / (d as f64).sqrt()
}

/// One row of the exact-versus-asymptotic comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub d: usize,
    pub n_exact: Option<u64>,
    pub n_asymptotic: f64,
    pub ratio: Option<f64>,
    pub theta: Option<f64>,
    pub zeta: Option<f64>,
    /// Bounds `[lower, upper]` on `n_exact` when the budget ran out.
    pub partial: Option<[u64; 2]>,
}

pub fn convergence_table(
    seq: &EigenSequence,
    epsilon: f64,
    dims: impl IntoIterator<Item = usize>,
    opts: ExactOptions,
) -> Result<Vec<TableRow>> {
    let summary = moments(seq)?;
    let mut rows = Vec::new();
    for d in dims {
        let query = ComplexityQuery::new(epsilon, d)?;
        let asym = asymptotic_n(&summary, seq.lattice, query)?;
        let row = match exact_count(seq, query, opts) {
            Ok(r) => {
                let n = r.n_exact.expect("exact count");
                TableRow {
                    d,
                    n_exact: Some(n),
                    n_asymptotic: asym.n_asymptotic,
                    ratio: Some(n as f64 / asym.n_asymptotic),
                    theta: Some(r.theta_quantile),
                    zeta: Some(r.zeta),
                    partial: None,
                }
            }
            Err(Error::BudgetExceeded { lower, upper, .. }) => TableRow {
                d,
                n_exact: None,
                n_asymptotic: asym.n_asymptotic,
                ratio: None,
                theta: None,
                zeta: None,
                partial: Some([lower, upper]),
            },
            Err(e) => return Err(e),
        };
        rows.push(row);
    }
    Ok(rows)
}
