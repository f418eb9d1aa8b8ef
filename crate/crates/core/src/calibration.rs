//! Critical values: the closed-form theoretical bound and Monte Carlo
//! calibration of the propagation conditions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::design::LocalizationLadder;
use crate::error::{invalid, Error, Result};
use crate::lepski::StatisticTriangle;
use crate::linalg::Matrix;
use crate::local_model::{Basis, LocalModel, NoiseModel};
use crate::rng::{fill_normal, stream};
use crate::stats::{batch_means, mean, McEstimate};

/// `E|chi^2_p|^r = 2^r Gamma(r + p/2) / Gamma(p/2)`.
pub fn risk_constant(p: usize, r: f64) -> f64 {
    let hp = p as f64 / 2.0;
    (r * 2f64.ln() + ln_gamma(r + hp) - ln_gamma(hp)).exp()
}

/// `log{2^{2r} [Gamma(2r + p/2) Gamma(p/2)]^{1/2} / Gamma(r + p/2)}`.
pub fn c_bar(p: usize, r: f64) -> f64 {
    let hp = p as f64 / 2.0;
    2.0 * r * 2f64.ln() + 0.5 * (ln_gamma(2.0 * r + hp) + ln_gamma(hp)) - ln_gamma(r + hp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Theoretical,
    MonteCarlo,
}

/// Thresholds `z_1..z_{K-1}` with the settings that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalValues {
    pub p: usize,
    pub r: f64,
    pub alpha: f64,
    pub u: Option<f64>,
    #[serde(rename = "K")]
    pub k: usize,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    pub seed: u64,
    pub replicates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<String>,
    pub thresholds: Vec<f64>,
}

impl CriticalValues {
    /// Wraps user-supplied thresholds.
    pub fn from_thresholds(p: usize, r: f64, alpha: f64, thresholds: Vec<f64>) -> Result<Self> {
        let cv = Self {
            p,
            r,
            alpha,
            u: None,
            k: thresholds.len() + 1,
            method: Method::Theoretical,
            mu: None,
            seed: 0,
            replicates: 0,
            schedule: None,
            thresholds,
        };
        cv.validate()?;
        Ok(cv)
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.len() + 1 != self.k {
            return Err(Error::DimensionMismatch { expected: self.k.saturating_sub(1), found: self.thresholds.len() });
        }
        if self.thresholds.iter().any(|&z| !(z >= 0.0) || z.is_nan()) {
            return Err(invalid("thresholds", "thresholds must be nonnegative"));
        }
        Ok(())
    }
}

fn check_common(p: usize, r: f64, alpha: f64) -> Result<()> {
    if p == 0 {
        return Err(invalid("p", "must be at least 1"));
    }
    if !(r > 0.0) || !r.is_finite() {
        return Err(invalid("r", format!("{r} must be positive")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid("alpha", format!("{alpha} outside (0, 1]")));
    }
    Ok(())
}

/// Closed-form conservative thresholds, affine and strictly decreasing in `k`.
pub fn theoretical_cv(p: usize, r: f64, alpha: f64, u: f64, k: usize, mu: f64) -> Result<CriticalValues> {
    check_common(p, r, alpha)?;
    if !(mu > 0.0 && mu < 0.25) {
        return Err(Error::InvalidMu(mu));
    }
    if !(u > 1.0) || !u.is_finite() {
        return Err(Error::InvalidLadder(format!("ratio u = {u} must exceed 1")));
    }
    if k < 2 {
        return Err(Error::InvalidLadder(format!("K = {k} must be at least 2")));
    }
    let kf = k as f64;
    let constant = (kf / alpha).ln() - (p as f64 / 4.0) * (1.0 - 4.0 * mu).ln() - (1.0 - u.powf(-r)).ln() + c_bar(p, r);
    let thresholds = (1..k).map(|j| 4.0 / mu * (r * (kf - j as f64) * u.ln() + constant)).collect();
    Ok(CriticalValues {
        p,
        r,
        alpha,
        u: Some(u),
        k,
        method: Method::Theoretical,
        mu: Some(mu),
        seed: 0,
        replicates: 0,
        schedule: None,
        thresholds,
    })
}

/// Per-replicate estimates `theta_k` for all scales under `Y = mean + sd * eps`.
#[derive(Debug, Clone)]
pub struct Ensemble {
    scales: usize,
    p: usize,
    replicates: usize,
    thetas: Vec<f64>,
    info: Vec<Matrix<f64>>,
}

impl Ensemble {
    pub fn simulate(model: &LocalModel<f64>, mean_y: &[f64], sd: &[f64], replicates: usize, seed: u64) -> Self {
        let n = model.n();
        let (kk, p) = (model.scales(), model.p());
        let rows: Vec<Vec<f64>> = (0..replicates)
            .into_par_iter()
            .map(|j| {
                let mut rng = stream(seed, j as u64);
                let mut y = vec![0.0; n];
                fill_normal(&mut rng, &mut y);
                for i in 0..n {
                    y[i] = mean_y[i] + sd[i] * y[i];
                }
                let mut out = vec![0.0; kk * p];
                for k in 1..=kk {
                    model.theta_into(k, &y, &mut out[(k - 1) * p..k * p]);
                }
                out
            })
            .collect();
        Self {
            scales: kk,
            p,
            replicates,
            thetas: rows.concat(),
            info: (1..=kk).map(|k| model.info(k).clone()).collect(),
        }
    }

    /// Null ensemble `Y = Sigma^{1/2} eps` under the working variances.
    pub fn null(model: &LocalModel<f64>, replicates: usize, seed: u64) -> Self {
        let sd: Vec<f64> = model.model_var().iter().map(|v| v.sqrt()).collect();
        Self::simulate(model, &vec![0.0; model.n()], &sd, replicates, seed)
    }

    pub fn scales(&self) -> usize {
        self.scales
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn replicates(&self) -> usize {
        self.replicates
    }

    pub fn info(&self, k: usize) -> &Matrix<f64> {
        &self.info[k - 1]
    }

    pub fn theta(&self, rep: usize, k: usize) -> &[f64] {
        let base = rep * self.scales * self.p + (k - 1) * self.p;
        &self.thetas[base..base + self.p]
    }

    /// `(theta_a - theta_b)^T B_c (theta_a - theta_b)` for replicate `rep`.
    pub fn form(&self, rep: usize, a: usize, b: usize, c: usize) -> f64 {
        let d: Vec<f64> = self.theta(rep, a).iter().zip(self.theta(rep, b)).map(|(x, y)| x - y).collect();
        self.info(c).quad_form(&d).max(0.0)
    }

    pub fn statistics(&self, rep: usize) -> StatisticTriangle<f64> {
        let mut tri = StatisticTriangle::new(self.scales);
        for l in 1..self.scales {
            for m in l + 1..=self.scales {
                tri.set(l, m, self.form(rep, l, m, l));
            }
        }
        tri
    }
}

/// Cached test statistics and losses used by threshold searches.
#[derive(Debug, Clone)]
pub struct PcCache {
    scales: usize,
    replicates: usize,
    r: f64,
    /// `T_{l,m}` per replicate, row-major over `(l, m)`, `l < m`.
    stats: Vec<f64>,
    /// `|(theta_k - theta_m)^T B_k (theta_k - theta_m)|^r` per replicate, `m < k`.
    losses: Vec<f64>,
}

fn pair_index(scales: usize, a: usize, b: usize) -> usize {
    let row = a - 1;
    row * (2 * scales - row - 1) / 2 + (b - a - 1)
}

impl PcCache {
    pub fn new(ens: &Ensemble, r: f64) -> Self {
        let kk = ens.scales();
        let pairs = kk * (kk - 1) / 2;
        let per: Vec<(Vec<f64>, Vec<f64>)> = (0..ens.replicates())
            .into_par_iter()
            .map(|rep| {
                let mut s = vec![0.0; pairs];
                let mut l = vec![0.0; pairs];
                for a in 1..kk {
                    for b in a + 1..=kk {
                        let idx = pair_index(kk, a, b);
                        s[idx] = ens.form(rep, a, b, a);
                        l[idx] = ens.form(rep, b, a, b).powf(r);
                    }
                }
                (s, l)
            })
            .collect();
        let mut stats = Vec::with_capacity(pairs * ens.replicates());
        let mut losses = Vec::with_capacity(pairs * ens.replicates());
        for (s, l) in per {
            stats.extend(s);
            losses.extend(l);
        }
        Self { scales: kk, replicates: ens.replicates(), r, stats, losses }
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn replicates(&self) -> usize {
        self.replicates
    }

    fn stat(&self, rep: usize, l: usize, m: usize) -> f64 {
        let pairs = self.scales * (self.scales - 1) / 2;
        self.stats[rep * pairs + pair_index(self.scales, l, m)]
    }

    /// Loss at scale `k` when the procedure stopped at `m < k`.
    fn loss(&self, rep: usize, m: usize, k: usize) -> f64 {
        let pairs = self.scales * (self.scales - 1) / 2;
        self.losses[rep * pairs + pair_index(self.scales, m, k)]
    }

    /// First rejected scale using thresholds `z_1..z_j` (the rest infinite),
    /// returned as the selected index `k_hat`.
    fn k_hat_with(&self, rep: usize, thresholds: &[f64]) -> usize {
        for m in 2..=self.scales {
            for l in 1..m.min(thresholds.len() + 1) {
                if self.stat(rep, l, m) > thresholds[l - 1] {
                    return m - 1;
                }
            }
        }
        self.scales
    }

    pub fn k_hat(&self, rep: usize, thresholds: &[f64]) -> usize {
        self.k_hat_with(rep, thresholds)
    }

    /// Per-replicate losses `|(theta_k - theta_hat_k)^T B_k (...)|^r` for `k = 2..K`.
    pub fn loss_samples(&self, thresholds: &[f64]) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.replicates]; self.scales - 1];
        for rep in 0..self.replicates {
            let kh = self.k_hat_with(rep, thresholds);
            for k in kh + 1..=self.scales {
                out[k - 2][rep] = self.loss(rep, kh, k);
            }
        }
        out
    }

    /// Empirical propagation risks for `k = 2..K` with batch-means errors.
    pub fn risks(&self, thresholds: &[f64]) -> Vec<McEstimate> {
        self.loss_samples(thresholds).iter().map(|v| batch_means(v)).collect()
    }

    /// Largest mean risk over `k > l` when `z_l = z`, `z_1..z_{l-1}` come from
    /// `prev_k_hat`, and later thresholds are infinite.
    fn max_risk_at(&self, l: usize, z: f64, prev_k_hat: &[usize]) -> f64 {
        let mut sums = vec![0.0; self.scales + 1];
        for (rep, &prev) in prev_k_hat.iter().enumerate() {
            let mut kh = prev;
            if prev > l {
                for m in l + 1..=prev {
                    if self.stat(rep, l, m) > z {
                        kh = m - 1;
                        break;
                    }
                }
            }
            for (k, s) in sums.iter_mut().enumerate().skip(kh + 1) {
                *s += self.loss(rep, kh, k);
            }
        }
        sums.iter().skip(l + 1).fold(0.0f64, |a, &s| a.max(s)) / self.replicates as f64
    }
}

/// Sequential calibration on a prepared cache: `z_l` is the smallest value
/// keeping every risk at scales `k > l` below `alpha * l/(K-1) * C(p,r)`.
pub fn calibrate_cache(cache: &PcCache, p: usize, alpha: f64) -> Result<Vec<f64>> {
    let kk = cache.scales;
    let c = risk_constant(p, cache.r);
    let mut thresholds: Vec<f64> = Vec::with_capacity(kk - 1);
    for l in 1..kk {
        let budget = alpha * l as f64 / (kk - 1) as f64 * c;
        let prev: Vec<usize> = (0..cache.replicates).map(|rep| cache.k_hat_with(rep, &thresholds)).collect();
        let f = |z: f64| cache.max_risk_at(l, z, &prev);
        let f0 = f(0.0);
        if f0 <= budget {
            thresholds.push(0.0);
            continue;
        }
        let mut hi = 1.0;
        let mut fhi = f(hi);
        while fhi > budget {
            hi *= 2.0;
            if hi > 1e12 {
                return Err(Error::CalibrationDiverged { step: l });
            }
            fhi = f(hi);
        }
        let mut lo = if hi > 1.0 { hi / 2.0 } else { 0.0 };
        let mut flo = if lo == 0.0 { f0 } else { f(lo) };
        for _ in 0..60 {
            if flo - fhi <= 0.005 * budget {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let fm = f(mid);
            if fm <= budget {
                hi = mid;
                fhi = fm;
            } else {
                lo = mid;
                flo = fm;
            }
        }
        thresholds.push(hi);
    }
    Ok(thresholds)
}

/// Monte Carlo thresholds for a prepared local model.
pub fn calibrate_model(
    model: &LocalModel<f64>,
    u: Option<f64>,
    r: f64,
    alpha: f64,
    replicates: usize,
    seed: u64,
) -> Result<CriticalValues> {
    check_common(model.p(), r, alpha)?;
    if replicates < 2 {
        return Err(invalid("replicates", "at least two replicates are required"));
    }
    let ens = Ensemble::null(model, replicates, seed);
    let cache = PcCache::new(&ens, r);
    let thresholds = calibrate_cache(&cache, model.p(), alpha)?;
    Ok(CriticalValues {
        p: model.p(),
        r,
        alpha,
        u,
        k: model.scales(),
        method: Method::MonteCarlo,
        mu: None,
        seed,
        replicates,
        schedule: Some("sequential, uniform risk split alpha*l/(K-1)".into()),
        thresholds,
    })
}

pub fn calibrate_mc(
    ladder: &LocalizationLadder<f64>,
    basis: Basis,
    noise: &NoiseModel<f64>,
    r: f64,
    alpha: f64,
    replicates: usize,
    seed: u64,
) -> Result<CriticalValues> {
    let model = LocalModel::new(ladder, basis, noise)?;
    calibrate_model(&model, ladder.bandwidth_ladder().map(|b| b.ratio()), r, alpha, replicates, seed)
}

/// Batch-wise recalibration: standard errors of each threshold from
/// calibrating the 20 contiguous replicate batches separately.
pub fn threshold_std_errors(cache_batches: &[PcCache], p: usize, alpha: f64) -> Result<Vec<f64>> {
    let per: Vec<Vec<f64>> = cache_batches.iter().map(|c| calibrate_cache(c, p, alpha)).collect::<Result<_>>()?;
    let k = per[0].len();
    Ok((0..k)
        .map(|j| {
            let col: Vec<f64> = per.iter().map(|v| v[j]).collect();
            let m = mean(&col);
            let var = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (col.len() - 1) as f64;
            (var / col.len() as f64).sqrt()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_ladder, DesignGrid, KernelShape};

    #[test]
    fn risk_constant_values() {
        for p in 1..6 {
            assert!((risk_constant(p, 1.0) - p as f64).abs() < 1e-12);
        }
        assert!((risk_constant(1, 2.0) - 3.0).abs() < 1e-12);
        assert!((risk_constant(2, 1.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn risk_constant_matches_simulation() {
        let mut rng = stream(11, 0);
        let mut z = vec![0.0; 200_000];
        fill_normal(&mut rng, &mut z);
        let sq: Vec<f64> = z.iter().map(|x| x.powi(4)).collect();
        let e = batch_means(&sq);
        assert!(e.covers(risk_constant(1, 2.0), 4.0));
    }

    #[test]
    fn c_bar_reference_value() {
        let direct = (4.0 * (1.329_340_388_179_137f64 * std::f64::consts::PI.sqrt()).sqrt() / 0.886_226_925_452_758).ln();
        assert!((c_bar(1, 1.0) - direct).abs() < 1e-12);
        assert!((c_bar(1, 1.0) - 1.9356).abs() < 1e-4);
    }

    #[test]
    fn theoretical_shape() {
        let cv = theoretical_cv(1, 1.0, 1.0, 1.5, 5, 0.1).unwrap();
        assert_eq!(cv.thresholds.len(), 4);
        for w in cv.thresholds.windows(2) {
            assert!((w[0] - w[1] - 40.0 * 1.5f64.ln()).abs() < 1e-9);
        }
        let half = theoretical_cv(1, 1.0, 0.5, 1.5, 5, 0.1).unwrap();
        for (a, b) in cv.thresholds.iter().zip(&half.thresholds) {
            assert!((b - a - 40.0 * 2f64.ln()).abs() < 1e-9);
        }
        assert!(matches!(theoretical_cv(1, 1.0, 1.0, 1.5, 5, 0.25), Err(Error::InvalidMu(_))));
        assert!(theoretical_cv(1, 1.0, 0.0, 1.5, 5, 0.1).is_err());
    }

    fn small_model(k: usize) -> (LocalModel<f64>, f64) {
        let grid = DesignGrid::equidistant(100).unwrap();
        let ladder = build_ladder(&grid, 0.5, KernelShape::Rectangular, 0.05, 1.5, k, 2).unwrap();
        let noise = NoiseModel::homoscedastic(100, 1.0).unwrap();
        (LocalModel::new(&ladder, Basis::new(2).unwrap(), &noise).unwrap(), 1.5)
    }

    #[test]
    fn calibrated_thresholds_satisfy_conditions() {
        let (model, u) = small_model(4);
        let cv = calibrate_model(&model, Some(u), 1.0, 0.5, 20_000, 3).unwrap();
        let ens = Ensemble::null(&model, 20_000, 3);
        let cache = PcCache::new(&ens, 1.0);
        let bound = 0.5 * risk_constant(2, 1.0);
        for est in cache.risks(&cv.thresholds) {
            assert!(est.mean <= bound + 2.0 * est.std_error);
        }
        let theo = theoretical_cv(2, 1.0, 0.5, u, 4, 0.1).unwrap();
        assert!(cv.thresholds.iter().zip(&theo.thresholds).all(|(a, b)| a <= b));
    }

    #[test]
    fn calibration_is_reproducible_and_monotone_in_alpha() {
        let (model, u) = small_model(3);
        let a = calibrate_model(&model, Some(u), 1.0, 0.3, 5_000, 9).unwrap();
        let b = calibrate_model(&model, Some(u), 1.0, 0.3, 5_000, 9).unwrap();
        assert_eq!(a, b);
        let c = calibrate_model(&model, Some(u), 1.0, 0.8, 5_000, 9).unwrap();
        assert!(c.thresholds.iter().zip(&a.thresholds).all(|(x, y)| x <= y));
    }
}
