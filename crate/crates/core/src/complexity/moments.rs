use serde::{Deserialize, Serialize};

use super::catalog::{EigenSequence, Field};
use crate::error::{Error, Result};

/// Relative tolerance on the truncation-induced uncertainty of any moment.
pub const MOMENT_TOLERANCE: f64 = 1e-6;

/// Moments of the auxiliary law `P(U = -log lambda_i) = lambda_i^2 / Lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub mean: f64,
    pub sigma2: f64,
    /// Third central moment.
    pub alpha3: f64,
    pub trace: f64,
    /// `Lambda e^{2M}`.
    pub explosion: f64,
}

impl MomentSummary {
    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    fn from_raw(trace: f64, raw: [f64; 3]) -> Self {
        let m = raw[0] / trace;
        let sigma2 = (raw[1] / trace - m * m).max(0.0);
        let alpha3 = raw[2] / trace - 3.0 * m * sigma2 - m * m * m;
        MomentSummary { mean: m, sigma2, alpha3, trace, explosion: trace * (2.0 * m).exp() }
    }
}

/// `(-log lambda)^j lambda^2` with `lambda^2 = v`.
fn weighted_power(v: f64, j: i32) -> f64 {
    (-0.5 * v.ln()).powi(j) * v
}

/// `int_a^inf g(s) ds` for a smooth, eventually decreasing integrand, by Simpson's
/// rule after the substitution `s = a e^x`.
fn tail_integral(a: f64, g: impl Fn(f64) -> f64) -> f64 {
    const N: usize = 8000;
    const X_MAX: f64 = 120.0;
    let h = X_MAX / N as f64;
    let f = |x: f64| {
        let s = a * x.exp();
        let v = g(s) * s;
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    let mut acc = f(0.0) + f(X_MAX);
    for i in 1..N {
        acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

/// Tail corrections for the raw moments beyond the truncation, plus a declared
/// uncertainty for each.
fn tail_corrections(field: Field, m: usize) -> ([f64; 3], [f64; 3]) {
    let mult = field.multiplicity() as f64;
    let last = (m / field.multiplicity()) as f64;
    let mut corr = [0.0; 3];
    let mut err = [0.0; 3];
    for j in 0..3 {
        let g = |s: f64| weighted_power(field.distinct_value(s), j as i32 + 1);
        let c = mult * tail_integral(last + 0.5, g);
        corr[j] = c;
        // midpoint-rule remainder f'(a)/24, with a safety factor of ten
        err[j] = 10.0 * mult * (g(last + 1.0) - g(last)).abs() / 24.0;
    }
    (corr, err)
}

/// Moments of the auxiliary law. Catalog sequences get an integral correction
/// for the truncated tail; `TruncationTooCoarse` if the remaining uncertainty
/// exceeds `MOMENT_TOLERANCE` relative to any moment's magnitude.
pub fn moments(seq: &EigenSequence) -> Result<MomentSummary> {
    let mut raw = [0.0f64; 3];
    let mut scale = [0.0f64; 3];
    for j in 0..3 {
        let terms: Vec<f64> = seq.values.iter().map(|&v| weighted_power(v, j as i32 + 1)).collect();
        raw[j] = crate::stats::pairwise_sum(&terms);
        scale[j] = terms.iter().map(|t| t.abs()).sum();
    }
    if let (Some(field), true) = (seq.field, seq.trace_tail > 0.0) {
        let (corr, err) = tail_corrections(field, seq.len());
        for j in 0..3 {
            raw[j] += corr[j];
            scale[j] += corr[j].abs();
            if err[j] > MOMENT_TOLERANCE * scale[j] {
                return Err(Error::TruncationTooCoarse(format!(
                    "{}: moment {} tail uncertainty {:.3e} exceeds {:.0e} relative",
                    seq.name,
                    j + 1,
                    err[j] / scale[j],
                    MOMENT_TOLERANCE
                )));
            }
        }
    }
    Ok(MomentSummary::from_raw(seq.trace_full, raw))
}

/// Moments of an explicit discrete law given by atoms `(u, weight)`.
pub fn moments_of_atoms(atoms: &[(f64, f64)]) -> MomentSummary {
    let trace: f64 = atoms.iter().map(|a| a.1).sum();
    let mut raw = [0.0; 3];
    for &(u, w) in atoms {
        raw[0] += u * w;
        raw[1] += u * u * w;
        raw[2] += u * u * u * w;
    }
    MomentSummary::from_raw(trace, raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complexity::catalog::{catalog, catalog_default, Lattice};
    use crate::rng::stream;
    use crate::stats::batch_means;
    use rand::Rng;

    #[test]
    fn degenerate_single_eigenvalue() {
        let seq = EigenSequence::finite("one", vec![0.3], Lattice::Nonlattice).unwrap();
        let s = moments(&seq).unwrap();
        assert!(s.sigma2.abs() < 1e-15);
        assert!((s.explosion - 1.0).abs() < 1e-14);
    }

    #[test]
    fn two_equal_eigenvalues() {
        let seq = EigenSequence::finite("pair", vec![0.25, 0.25], Lattice::Nonlattice).unwrap();
        let s = moments(&seq).unwrap();
        assert!(s.sigma2.abs() < 1e-15);
        let direct = s.trace * (2.0 * s.mean).exp();
        assert!((s.explosion - direct).abs() < 1e-15);
        assert!((s.explosion - 0.5 / 0.25).abs() < 1e-14);
    }

    #[test]
    fn explosion_exceeds_one_when_nondegenerate() {
        for f in [Field::BrownianBridge, Field::AndersonDarling, Field::Geometric { rho: 0.5 }] {
            let s = moments(&catalog_default(f).unwrap()).unwrap();
            assert!(s.explosion > 1.0 && s.sigma2 > 0.0);
        }
    }

    #[test]
    fn tail_correction_converges() {
        let coarse = moments(&catalog(Field::BrownianBridge, 1 << 14).unwrap()).unwrap();
        let fine = moments(&catalog(Field::BrownianBridge, 1 << 20).unwrap()).unwrap();
        assert!((coarse.mean - fine.mean).abs() < 1e-8);
        assert!((coarse.sigma2 - fine.sigma2).abs() < 1e-7);
    }

    #[test]
    fn too_short_truncation_is_rejected() {
        assert!(matches!(moments(&catalog(Field::BrownianBridge, 4).unwrap()), Err(Error::TruncationTooCoarse(_))));
    }

    #[test]
    fn geometric_moments_match_sampling() {
        let seq = catalog_default(Field::Geometric { rho: 0.5 }).unwrap();
        let s = moments(&seq).unwrap();
        let h = 2f64.ln();
        let n = 1_000_000;
        let samples: Vec<f64> = (0..n)
            .map(|j| {
                let mut rng = stream(42, j as u64);
                // index i has probability (1 - 1/4) (1/4)^(i-1)
                let mut i = 0u32;
                while rng.gen::<f64>() < 0.25 {
                    i += 1;
                }
                i as f64 * h
            })
            .collect();
        let m1 = batch_means(&samples);
        let c2: Vec<f64> = samples.iter().map(|u| (u - s.mean).powi(2)).collect();
        let c3: Vec<f64> = samples.iter().map(|u| (u - s.mean).powi(3)).collect();
        assert!(m1.covers(s.mean, 4.0), "{m1:?} vs {}", s.mean);
        assert!(batch_means(&c2).covers(s.sigma2, 4.0));
        assert!(batch_means(&c3).covers(s.alpha3, 4.0));
    }
}
