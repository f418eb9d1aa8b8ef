use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use super::asymptotic::asymptotic_from_moments;
use super::catalog::EigenSequence;
use super::moments::{moments, MomentSummary};
use crate::error::{invalid, Error, Result};

pub const DEFAULT_BUDGET: u64 = 100_000_000;
pub const MAX_RELATIVE_TAIL_ERROR: f64 = 1e-3;
const BISECTION_ITERATIONS: usize = 200;
/// Bracket size at which the remaining products are collected and sorted.
const BAND_LIMIT: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityQuery {
    pub epsilon: f64,
    pub d: usize,
}

impl ComplexityQuery {
    pub fn new(epsilon: f64, d: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(invalid("epsilon", "must lie in (0, 1)"));
        }
        if d == 0 {
            return Err(invalid("d", "dimension must be at least 1"));
        }
        Ok(ComplexityQuery { epsilon, d })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactOptions {
    /// Cap on DFS nodes across all threshold evaluations.
    pub budget: u64,
    pub max_tail_error: f64,
}

impl Default for ExactOptions {
    fn default() -> Self {
        ExactOptions { budget: DEFAULT_BUDGET, max_tail_error: MAX_RELATIVE_TAIL_ERROR }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityResult {
    pub n_exact: Option<u64>,
    pub zeta: f64,
    pub theta_quantile: f64,
    pub n_asymptotic: f64,
    pub q: f64,
    pub constant_k: f64,
    pub relative_tail_error: f64,
}

/// Sums over the index grid `{1..m}^d` split at a threshold `z` on `lambda_k`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Split {
    /// `#{k : lambda_k >= z}`.
    pub count: u64,
    /// `sum_{lambda_k >= z} lambda_k^2`.
    pub head: f64,
    /// `sum_{lambda_k < z} lambda_k^2`, accumulated from pruned subtrees.
    pub tail: f64,
    pub nodes: u64,
}

impl Split {
    fn merge(mut self, o: Split) -> Split {
        self.count += o.count;
        self.head += o.head;
        self.tail += o.tail;
        self.nodes += o.nodes;
        self
    }
}

/// Pruned depth-first counter over products of a nonincreasing spectrum.
pub struct Enumerator<'a> {
    values: &'a [f64],
    roots: Vec<f64>,
    prefix: Vec<f64>,
    suffix: Vec<f64>,
    total: f64,
    d: usize,
}

struct Budget<'b> {
    used: &'b AtomicU64,
    limit: u64,
    aborted: &'b AtomicBool,
}

impl Budget<'_> {
    fn charge(&self, n: u64) -> bool {
        let used = self.used.fetch_add(n, Ordering::Relaxed) + n;
        if used > self.limit {
            self.aborted.store(true, Ordering::Relaxed);
        }
        !self.aborted.load(Ordering::Relaxed)
    }
}

impl<'a> Enumerator<'a> {
    pub fn new(values: &'a [f64], d: usize) -> Self {
        let roots: Vec<f64> = values.iter().map(|v| v.sqrt()).collect();
        let mut prefix = vec![0.0; values.len() + 1];
        for (i, v) in values.iter().enumerate() {
            prefix[i + 1] = prefix[i] + v;
        }
        let mut suffix = vec![0.0; values.len() + 1];
        for i in (0..values.len()).rev() {
            suffix[i] = suffix[i + 1] + values[i];
        }
        let total = suffix[0];
        Enumerator { values, roots, prefix, suffix, total, d }
    }

    /// `Lambda_m^d`.
    pub fn grid_total(&self) -> f64 {
        self.total.powi(self.d as i32)
    }

    /// Splits the grid at `z` without a node budget.
    pub fn split(&self, z: f64) -> Split {
        let used = AtomicU64::new(0);
        let aborted = AtomicBool::new(false);
        self.split_budgeted(z, &Budget { used: &used, limit: u64::MAX, aborted: &aborted }).expect("unbounded budget")
    }

    fn split_budgeted(&self, z: f64, budget: &Budget) -> Option<Split> {
        let d = self.d;
        let top = self.roots[0];
        let reach = top.powi(d as i32 - 1);
        if d == 1 {
            return budget.charge(1).then(|| self.leaf(1.0, 1.0, z));
        }
        let cut = self.roots.partition_point(|&a| a * reach >= z);
        let pruned = Split { tail: self.suffix[cut] * self.total.powi(d as i32 - 1), ..Split::default() };
        let parts: Vec<Option<Split>> = (0..cut)
            .into_par_iter()
            .map(|i| {
                let mut acc = Split::default();
                let done = self.descend(d - 1, self.roots[i], self.values[i], z, &mut acc, budget);
                (done && budget.charge(acc.nodes % 4096)).then_some(acc)
            })
            .collect();
        let mut out = pruned;
        for p in parts {
            out = out.merge(p?);
        }
        out.nodes += 1;
        if budget.aborted.load(Ordering::Relaxed) {
            return None;
        }
        Some(out)
    }

    /// Last coordinate: the admissible indices form a prefix.
    fn leaf(&self, prod_a: f64, prod_v: f64, z: f64) -> Split {
        let cut = self.roots.partition_point(|&a| prod_a * a >= z);
        Split { count: cut as u64, head: prod_v * self.prefix[cut], tail: prod_v * self.suffix[cut], nodes: 1 }
    }

    /// Products `lambda_k^2` with `lo <= lambda_k < hi`.
    pub fn collect_band(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut out = Vec::new();
        self.band_rec(self.d, 1.0, 1.0, lo, hi, &mut out);
        out
    }

    fn band_rec(&self, remaining: usize, prod_a: f64, prod_v: f64, lo: f64, hi: f64, out: &mut Vec<f64>) {
        if remaining == 1 {
            let start = self.roots.partition_point(|&a| prod_a * a >= hi);
            let end = self.roots.partition_point(|&a| prod_a * a >= lo);
            out.extend(self.values[start..end].iter().map(|v| prod_v * v));
            return;
        }
        let reach = self.roots[0].powi(remaining as i32 - 1);
        let cut = self.roots.partition_point(|&a| prod_a * a * reach >= lo);
        for i in 0..cut {
            self.band_rec(remaining - 1, prod_a * self.roots[i], prod_v * self.values[i], lo, hi, out);
        }
    }

    fn descend(&self, remaining: usize, prod_a: f64, prod_v: f64, z: f64, acc: &mut Split, budget: &Budget) -> bool {
        if remaining == 1 {
            *acc = acc.merge(self.leaf(prod_a, prod_v, z));
            return !acc.nodes.is_multiple_of(4096) || budget.charge(4096);
        }
        let reach = self.roots[0].powi(remaining as i32 - 1);
        let cut = self.roots.partition_point(|&a| prod_a * a * reach >= z);
        acc.tail += prod_v * self.suffix[cut] * self.total.powi(remaining as i32 - 1);
        acc.nodes += 1;
        for i in 0..cut {
            if !self.descend(remaining - 1, prod_a * self.roots[i], prod_v * self.values[i], z, acc, budget) {
                return false;
            }
        }
        true
    }
}

/// Exact information complexity `n(epsilon, d)` by a bracketing search on the
/// product threshold; `BudgetExceeded` carries bounds on `n` when enumeration stops early.
pub fn exact_count(seq: &EigenSequence, query: ComplexityQuery, opts: ExactOptions) -> Result<ComplexityResult> {
    let ComplexityQuery { epsilon, d } = ComplexityQuery::new(query.epsilon, query.d)?;
    let di = d as i32;
    let lambda_d = seq.trace_full.powi(di);
    let eps2 = epsilon * epsilon;
    let relative_tail_error = (lambda_d - seq.truncated_trace().powi(di)) / (eps2 * lambda_d);
    if relative_tail_error > opts.max_tail_error {
        return Err(Error::TruncationTooCoarse(format!(
            "{}: relative tail error {relative_tail_error:.3e} at d = {d} exceeds {:.0e}",
            seq.name, opts.max_tail_error
        )));
    }
    let summary = moments(seq)?;
    let floor_count = lower_bound(seq, epsilon, d);
    let target = (1.0 - eps2) * lambda_d;
    let asymptotic = asymptotic_from_moments(&summary, seq.lattice, query)?;
    // the truncated grid reaches the target once the tail check passes
    let grid_count = (seq.len() as u64).saturating_pow(di as u32);
    let estimate = if asymptotic.n_asymptotic.is_finite() { asymptotic.n_asymptotic } else { 1.0 };
    if estimate > opts.budget as f64 {
        return Err(Error::BudgetExceeded { lower: floor_count, upper: grid_count, budget: opts.budget });
    }

    let en = Enumerator::new(&seq.values, d);
    let used = AtomicU64::new(0);
    let aborted = AtomicBool::new(false);
    let budget = Budget { used: &used, limit: opts.budget, aborted: &aborted };
    let run = |log_z: f64| en.split_budgeted(log_z.exp(), &budget);
    let exceeded = |lower: u64, upper: u64| Error::BudgetExceeded { lower, upper, budget: opts.budget };

    // bracket with hi infeasible and lo feasible (head reaches the target),
    // starting from the limiting threshold when the spectrum is nondegenerate
    let top = di as f64 * seq.values[0].sqrt().ln() + 1e-12;
    let guess = if asymptotic.zeta.is_finite() && asymptotic.zeta > 0.0 { asymptotic.zeta.ln().min(top) } else { top };
    let s_guess = run(guess).ok_or_else(|| exceeded(floor_count, grid_count))?;
    let (mut lo, mut s_lo, mut hi, mut s_hi);
    let mut step = 0.25;
    if s_guess.head >= target {
        (lo, s_lo) = (guess, s_guess);
        loop {
            hi = (lo + step).min(top);
            s_hi = run(hi).ok_or_else(|| exceeded(floor_count, s_lo.count))?;
            if s_hi.head < target {
                break;
            }
            (lo, s_lo) = (hi, s_hi);
            step *= 1.5;
        }
    } else {
        (hi, s_hi) = (guess, s_guess);
        loop {
            if s_hi.tail <= 0.0 {
                return Err(Error::TruncationTooCoarse(format!(
                    "{}: the whole truncated grid holds less than (1 - eps^2) Lambda^d",
                    seq.name
                )));
            }
            lo = hi - step;
            s_lo = run(lo).ok_or_else(|| exceeded(floor_count.max(s_hi.count + 1), grid_count))?;
            if s_lo.head >= target {
                break;
            }
            (hi, s_hi) = (lo, s_lo);
            step *= 1.5;
        }
    }
    // Illinois false position on head(log z), with a bisection every third step
    let (mut w_lo, mut w_hi) = (1.0, 1.0);
    for it in 0..BISECTION_ITERATIONS {
        if s_lo.count - s_hi.count <= BAND_LIMIT || hi - lo <= 1e-12 * hi.abs().max(1.0) {
            break;
        }
        let (f_lo, f_hi) = (w_lo * (s_lo.head - target), w_hi * (s_hi.head - target));
        let t = if it % 3 == 2 { 0.5 } else { (f_lo / (f_lo - f_hi)).clamp(0.01, 0.99) };
        let mid = lo + (hi - lo) * t;
        let s = run(mid).ok_or_else(|| exceeded(floor_count.max(s_hi.count + 1), s_lo.count))?;
        if s.head >= target {
            (lo, s_lo) = (mid, s);
            w_lo = 1.0;
            w_hi *= 0.5;
        } else {
            (hi, s_hi) = (mid, s);
            w_hi = 1.0;
            w_lo *= 0.5;
        }
    }
    // the minimal prefix within the band [lo, hi) completes the count
    let mut band = en.collect_band(lo.exp(), hi.exp());
    band.sort_by(|a, b| b.total_cmp(a));
    let mut acc = s_hi.head;
    let mut j = 0;
    while acc < target && j < band.len() {
        acc += band[j];
        j += 1;
    }
    let n_exact = s_hi.count + j as u64;
    let v2 = band[j.max(1) - 1];
    let zeta = v2.sqrt();
    let mut out = asymptotic;
    out.n_exact = Some(n_exact);
    out.zeta = zeta;
    out.theta_quantile = theta_quantile(&summary, zeta, d);
    out.relative_tail_error = relative_tail_error;
    Ok(out)
}

/// `theta = -(log zeta + d M) / (sigma sqrt d)`.
pub fn theta_quantile(summary: &MomentSummary, zeta: f64, d: usize) -> f64 {
    -(zeta.ln() + d as f64 * summary.mean) / (summary.sigma() * (d as f64).sqrt())
}

/// `(1 - eps^2) (1 + lambda_2^2 / lambda_1^2)^d`, a lower bound on `n(eps, d)`.
pub fn lower_bound(seq: &EigenSequence, epsilon: f64, d: usize) -> u64 {
    let ratio = seq.values.get(1).map_or(0.0, |v| v / seq.values[0]);
    ((1.0 - epsilon * epsilon) * (1.0 + ratio).powi(d as i32)).ceil().max(1.0) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complexity::catalog::{catalog, catalog_default, Field, Lattice};
    use crate::complexity::oracle::sort_oracle;
    use proptest::prelude::*;

    fn q(eps: f64, d: usize) -> ComplexityQuery {
        ComplexityQuery::new(eps, d).unwrap()
    }

    #[test]
    fn bridge_d1_half() {
        let seq = catalog_default(Field::BrownianBridge).unwrap();
        let r = exact_count(&seq, q(0.5f64.sqrt(), 1), ExactOptions::default()).unwrap();
        assert_eq!(r.n_exact, Some(1));
        assert!((r.zeta - 1.0 / std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn epsilon_near_one_keeps_single_term() {
        for f in [Field::AndersonDarling, Field::Geometric { rho: 0.5 }] {
            let seq = catalog_default(f).unwrap();
            for d in 1..=3 {
                assert_eq!(exact_count(&seq, q(0.999, d), ExactOptions::default()).unwrap().n_exact, Some(1));
            }
        }
    }

    #[test]
    fn anderson_darling_d2_matches_sort_oracle() {
        let seq = catalog(Field::AndersonDarling, 400).unwrap().as_finite();
        let r = exact_count(&seq, q(0.5, 2), ExactOptions::default()).unwrap();
        assert_eq!(r.n_exact.unwrap(), sort_oracle(&seq.values, seq.trace_full, 0.5, 2));
    }

    #[test]
    fn budget_exceeded_carries_bounds() {
        let seq = catalog_default(Field::BrownianBridge).unwrap();
        let err = exact_count(&seq, q(0.3, 4), ExactOptions { budget: 50, ..ExactOptions::default() }).unwrap_err();
        match err {
            Error::BudgetExceeded { lower, upper, budget } => {
                assert_eq!(budget, 50);
                assert!(lower >= 1 && lower <= upper);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn coarse_truncation_rejected() {
        let seq = catalog(Field::BrownianBridge, 20).unwrap();
        assert!(matches!(exact_count(&seq, q(0.3, 3), ExactOptions::default()), Err(Error::TruncationTooCoarse(_))));
    }

    #[test]
    fn lattice_ties_resolved_like_the_oracle() {
        let seq = catalog(Field::Geometric { rho: 0.5 }, 30).unwrap().as_finite();
        for d in 1..=3 {
            for eps in [0.3, 0.5, 0.7] {
                let r = exact_count(&seq, q(eps, d), ExactOptions::default()).unwrap();
                assert_eq!(r.n_exact.unwrap(), sort_oracle(&seq.values, seq.trace_full, eps, d), "d={d} eps={eps}");
            }
        }
    }

    #[test]
    fn monotone_in_epsilon_and_dimension() {
        let seq = catalog_default(Field::AndersonDarling).unwrap();
        let mut prev_d = 0;
        for d in 1..=4 {
            let mut prev = u64::MAX;
            for eps in [0.3, 0.5, 0.7, 0.9] {
                let n = exact_count(&seq, q(eps, d), ExactOptions::default()).unwrap().n_exact.unwrap();
                assert!(n <= prev);
                prev = n;
            }
            let n = exact_count(&seq, q(0.5, d), ExactOptions::default()).unwrap().n_exact.unwrap();
            assert!(n >= prev_d);
            prev_d = n;
        }
    }

    #[test]
    fn finite_spectrum_from_values() {
        let seq = EigenSequence::finite("toy", vec![0.5, 0.3, 0.2], Lattice::Nonlattice).unwrap();
        let r = exact_count(&seq, q(0.5, 2), ExactOptions::default()).unwrap();
        assert_eq!(r.n_exact.unwrap(), sort_oracle(&seq.values, seq.trace_full, 0.5, 2));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10))]
        #[test]
        fn head_tail_duality(log_z in -6.0f64..-0.5, d in 1usize..4) {
            let seq = catalog(Field::BrownianBridge, 3000).unwrap();
            let en = Enumerator::new(&seq.values, d);
            let s = en.split(log_z.exp());
            let total = en.grid_total();
            prop_assert!(((s.head + s.tail) - total).abs() <= 1e-9 * total);
            let s2 = en.split((log_z + 0.1).exp());
            prop_assert!(s2.count <= s.count);
        }
    }
}
