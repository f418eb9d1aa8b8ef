//! Exact finite-sample identities: best parametric fit, Wilks spectrum,
//! joint covariance, determinant formula, modeling bias and KL divergence.

use crate::design::{ratio_spectra, KernelShape, LocalizationLadder};
use crate::error::{Error, Result};
use crate::linalg::{det_lu, dot, sym_sqrt, Cholesky, Matrix, SymEigen};
use crate::local_model::{qmle, Basis, LocalModel, NoiseModel};

/// `theta_bar_k = B_k^{-1} Psi W_k f`.
pub fn best_parametric_fit(
    ladder: &LocalizationLadder<f64>,
    basis: Basis,
    noise: &NoiseModel<f64>,
    k: usize,
    f_values: &[f64],
) -> Result<Vec<f64>> {
    Ok(qmle(ladder, basis, noise, k, f_values)?.theta)
}

/// `theta_bar_l` for `l = 1..=k` from a prepared model.
pub fn best_fits(model: &LocalModel<f64>, k: usize, f_values: &[f64]) -> Vec<Vec<f64>> {
    (1..=k).map(|l| model.fit(l, f_values).theta).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WilksSpectrum {
    /// The `p` largest eigenvalues, descending.
    pub leading: Vec<f64>,
    /// Largest absolute value among the remaining `n - p` eigenvalues.
    pub residual: f64,
}

/// Spectrum of `S = Sigma_0^{1/2} W_k Psi^T B_k^{-1} Psi W_k Sigma_0^{1/2}`.
pub fn wilks_spectrum(model: &LocalModel<f64>, ladder: &LocalizationLadder<f64>, k: usize) -> WilksSpectrum {
    let support = model.support(k);
    let basis = model.basis();
    let chol = model.cholesky(k);
    let m = support.len();
    let scaled: Vec<Vec<f64>> = support
        .iter()
        .map(|&i| {
            let psi = basis.psi(ladder.grid().points()[i] - ladder.x());
            let w = ladder.weights(k)[i] / model.model_var()[i] * model.true_var()[i].sqrt();
            psi.into_iter().map(|v| v * w).collect()
        })
        .collect();
    let solved: Vec<Vec<f64>> = scaled.iter().map(|v| chol.solve(v)).collect();
    let s = Matrix::from_fn(m, m, |a, b| dot(&scaled[a], &solved[b]));
    let mut values = SymEigen::new(&s).values;
    values.reverse();
    let p = model.p().min(m);
    let leading = values[..p].to_vec();
    let residual = values[p..].iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    WilksSpectrum { leading, residual }
}

/// Joint covariance of `vec(theta_1, ..., theta_k)` under the working and true noise.
#[derive(Debug, Clone, PartialEq)]
pub struct JointCovariance {
    pub k: usize,
    pub p: usize,
    pub sigma: Matrix<f64>,
    pub sigma0: Matrix<f64>,
}

impl JointCovariance {
    /// Smallest eigenvalues of `Sigma_0 - (1-delta) Sigma` and `(1+delta) Sigma - Sigma_0`.
    pub fn sandwich_margins(&self, delta: f64) -> (f64, f64) {
        let lower = SymEigen::new(&self.sigma0.sub(&self.sigma.scale(1.0 - delta))).min();
        let upper = SymEigen::new(&self.sigma.scale(1.0 + delta).sub(&self.sigma0)).min();
        (lower, upper)
    }
}

pub fn joint_covariance(model: &LocalModel<f64>, k: usize) -> JointCovariance {
    let p = model.p();
    let mut sigma = Matrix::zeros(p * k, p * k);
    let mut sigma0 = Matrix::zeros(p * k, p * k);
    for l in 1..=k {
        for m in 1..=k {
            sigma.set_block((l - 1) * p, (m - 1) * p, &model.cross_covariance(l, m, model.model_var()));
            sigma0.set_block((l - 1) * p, (m - 1) * p, &model.cross_covariance(l, m, model.true_var()));
        }
    }
    sigma.symmetrize();
    sigma0.symmetrize();
    JointCovariance { k, p, sigma, sigma0 }
}

/// Direct determinant of `Sigma_k` against
/// `det B_k^{-1} prod_{l=2}^k det(B_{l-1}^{-1} - B_l^{-1})`.
pub fn det_block_formula(model: &LocalModel<f64>, ladder: &LocalizationLadder<f64>, k: usize) -> Result<(f64, f64)> {
    match ladder.kernel() {
        Some(KernelShape::Rectangular) => {}
        Some(other) => {
            return Err(Error::AssumptionViolated(format!("kernel `{}` lacks the binary product property", other.name())))
        }
        None if !ladder.has_binary_products() => {
            return Err(Error::AssumptionViolated("weights are not nested 0/1 indicators".into()))
        }
        None => {}
    }
    let infos: Vec<Matrix<f64>> = (1..=k).map(|l| model.info(l).clone()).collect();
    for (l, spectrum) in ratio_spectra(&infos)?.iter().enumerate() {
        if spectrum.iter().any(|&ev| ev <= 1.0 + 1e-12) {
            return Err(Error::AssumptionViolated(format!(
                "information does not grow strictly between scales {} and {}",
                l + 1,
                l + 2
            )));
        }
    }
    let lhs = det_lu(&joint_covariance(model, k).sigma);
    let inv: Vec<Matrix<f64>> = (1..=k).map(|l| model.cholesky(l).inverse()).collect();
    let mut rhs = det_lu(&inv[k - 1]);
    for l in 2..=k {
        rhs *= det_lu(&inv[l - 2].sub(&inv[l - 1]));
    }
    Ok((lhs, rhs))
}

fn bias_vector(model: &LocalModel<f64>, k: usize, f_values: &[f64], theta_ref: &[f64]) -> Vec<f64> {
    best_fits(model, k, f_values)
        .into_iter()
        .flat_map(|t| t.into_iter().zip(theta_ref).map(|(a, b)| a - b).collect::<Vec<_>>())
        .collect()
}

/// `Delta(k) = b(k)^T Sigma_k^{-1} b(k)`.
pub fn modeling_bias(model: &LocalModel<f64>, k: usize, f_values: &[f64], theta_ref: &[f64]) -> Result<f64> {
    let cov = joint_covariance(model, k);
    let chol = Cholesky::new(&cov.sigma).ok_or(Error::SingularJointCovariance { k })?;
    Ok(chol.inv_quad_form(&bias_vector(model, k, f_values, theta_ref)))
}

/// `Delta(1..=K)`; stops at the first singular joint covariance.
pub fn bias_profile(model: &LocalModel<f64>, f_values: &[f64], theta_ref: &[f64]) -> Result<Vec<f64>> {
    (1..=model.scales()).map(|k| modeling_bias(model, k, f_values, theta_ref)).collect()
}

/// KL divergence between `N(vec Theta*_k, Sigma_{k,0})` and `N(vec Theta_k, Sigma_k)`.
pub fn kl_divergence(model: &LocalModel<f64>, k: usize, f_values: &[f64], theta_ref: &[f64]) -> Result<f64> {
    let cov = joint_covariance(model, k);
    let c = Cholesky::new(&cov.sigma).ok_or(Error::SingularJointCovariance { k })?;
    let c0 = Cholesky::new(&cov.sigma0).ok_or(Error::SingularJointCovariance { k })?;
    let delta = c.inv_quad_form(&bias_vector(model, k, f_values, theta_ref));
    let trace = c.solve_matrix(&cov.sigma0).trace();
    let pk = (model.p() * k) as f64;
    Ok(0.5 * (delta + c.log_det() - c0.log_det() + trace - pk))
}

/// KL for constant working level `sigma` and true level `sigma0`.
pub fn kl_homogeneous(p: usize, k: usize, sigma: f64, sigma0: f64, delta_k: f64) -> f64 {
    let pk = (p * k) as f64;
    pk * (sigma / sigma0).ln() + 0.5 * delta_k + 0.5 * pk * (sigma0 * sigma0 / (sigma * sigma) - 1.0)
}

/// Largest eigenvalue of `V_lk^{1/2} B_l V_lk^{1/2}` with `V_lk = Var(theta_k - theta_l)`.
pub fn pairwise_variance_ratio(model: &LocalModel<f64>, l: usize, k: usize) -> f64 {
    let tv = model.true_var();
    let v = model
        .cross_covariance(k, k, tv)
        .add(&model.cross_covariance(l, l, tv))
        .sub(&model.cross_covariance(l, k, tv))
        .sub(&model.cross_covariance(k, l, tv));
    let half = sym_sqrt(&v);
    SymEigen::new(&half.matmul(model.info(l)).matmul(&half)).max()
}

/// Smallest eigenvalue over all consecutive information ratios.
pub fn measured_u0(model: &LocalModel<f64>) -> Result<f64> {
    let infos: Vec<Matrix<f64>> = (1..=model.scales()).map(|l| model.info(l).clone()).collect();
    Ok(ratio_spectra(&infos)?.iter().flatten().fold(f64::INFINITY, |a, &v| a.min(v)))
}

/// Largest eigenvalue of `B_k^{1/2} Var(theta_k) B_k^{1/2}`.
pub fn variance_ratio(model: &LocalModel<f64>, k: usize) -> f64 {
    let half = sym_sqrt(model.info(k));
    SymEigen::new(&half.matmul(&model.variance(k)).matmul(&half)).max()
}

/// `Lambda_0 = min_k lambda_min(B_k) sigma_max^2 / (n h_k)`.
pub fn design_constant(model: &LocalModel<f64>, bandwidths: &[f64]) -> f64 {
    let s2 = model.model_var().iter().fold(0.0f64, |a, &v| a.max(v));
    let n = model.n() as f64;
    (1..=model.scales())
        .map(|k| SymEigen::new(model.info(k)).min() * s2 / (n * bandwidths[k - 1]))
        .fold(f64::INFINITY, f64::min)
}

/// Checks `(n h_k Lambda_0 / sigma_max^2)^{1/2} |e_j^T d| <= |B_k^{1/2} d|` for all `j`.
pub fn componentwise_bound_holds(info_k: &Matrix<f64>, d: &[f64], n: usize, h_k: f64, lambda0: f64, s2max: f64) -> bool {
    let lhs_scale = (n as f64 * h_k * lambda0 / s2max).sqrt();
    let rhs = info_k.quad_form(d).max(0.0).sqrt();
    d.iter().all(|&v| lhs_scale * v.abs() <= rhs * (1.0 + 1e-9) + 1e-300)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_ladder, DesignGrid};

    fn rect_model(p: usize, sigma0: f64) -> (LocalizationLadder<f64>, LocalModel<f64>) {
        let grid = DesignGrid::equidistant(120).unwrap();
        let ladder = build_ladder(&grid, 0.5, KernelShape::Rectangular, 0.05, 1.5, 4, p).unwrap();
        let noise = NoiseModel::homogeneous(120, 1.0, sigma0).unwrap();
        let model = LocalModel::new(&ladder, Basis::new(p).unwrap(), &noise).unwrap();
        (ladder, model)
    }

    #[test]
    fn best_fit_of_model_space_is_exact() {
        let (ladder, model) = rect_model(2, 1.0);
        let f: Vec<f64> = ladder.grid().points().iter().map(|t| 2.0 - t).collect();
        for t in best_fits(&model, 4, &f) {
            assert!((t[0] - 1.5).abs() < 1e-12 && (t[1] + 1.0).abs() < 1e-12);
        }
        let noise = NoiseModel::homoscedastic(120, 1.0).unwrap();
        let direct = best_parametric_fit(&ladder, Basis::new(2).unwrap(), &noise, 2, &f).unwrap();
        assert!((direct[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn best_fit_is_weighted_average_for_p1() {
        let (ladder, model) = rect_model(1, 1.0);
        let f: Vec<f64> = ladder.grid().points().iter().map(|t| t.sin()).collect();
        let s = ladder.support(2);
        let avg = s.iter().map(|&i| f[i]).sum::<f64>() / s.len() as f64;
        assert!((best_fits(&model, 2, &f)[1][0] - avg).abs() < 1e-13);
    }

    #[test]
    fn wilks_rectangular_projector() {
        let (ladder, model) = rect_model(3, 1.0);
        for k in 1..=4 {
            let s = wilks_spectrum(&model, &ladder, k);
            assert!(s.leading.iter().all(|&v| (v - 1.0).abs() < 1e-9));
            assert!(s.residual < 1e-9);
        }
    }

    #[test]
    fn joint_covariance_blocks_and_sandwich() {
        let (_, model) = rect_model(2, 1.1);
        let cov = joint_covariance(&model, 3);
        for l in 1..=3 {
            let block = cov.sigma0.block((l - 1) * 2, (l - 1) * 2, 2, 2);
            assert!(block.sub(&model.variance(l)).max_abs() < 1e-12);
        }
        let (lo, hi) = cov.sandwich_margins(model.delta());
        assert!(lo >= -1e-9 && hi >= -1e-9);
        // rectangular weights: off-diagonal blocks equal B_{max(l,m)}^{-1}
        let off = cov.sigma.block(0, 4, 2, 2);
        assert!(off.sub(&model.cholesky(3).inverse()).max_abs() < 1e-12);
    }

    #[test]
    fn determinant_formula_holds() {
        for p in 1..=3 {
            let (ladder, model) = rect_model(p, 1.0);
            let (lhs, rhs) = det_block_formula(&model, &ladder, 1).unwrap();
            assert!((lhs / rhs - 1.0).abs() < 1e-9);
            for k in 2..=4 {
                let (lhs, rhs) = det_block_formula(&model, &ladder, k).unwrap();
                assert!(lhs > 0.0 && rhs > 0.0);
                assert!((lhs / rhs - 1.0).abs() < 1e-6, "p={p} k={k} {lhs} {rhs}");
            }
        }
    }

    #[test]
    fn determinant_formula_guards() {
        let grid = DesignGrid::equidistant(60).unwrap();
        let tri = build_ladder(&grid, 0.5, KernelShape::Triangular, 0.1, 1.5, 3, 2).unwrap();
        let noise = NoiseModel::homoscedastic(60, 1.0).unwrap();
        let model = LocalModel::new(&tri, Basis::new(2).unwrap(), &noise).unwrap();
        assert!(matches!(det_block_formula(&model, &tri, 2), Err(Error::AssumptionViolated(_))));
        let w: Vec<f64> = grid.points().iter().map(|&t| if (t - 0.5f64).abs() < 0.2 { 1.0 } else { 0.0 }).collect();
        let flat = LocalizationLadder::from_weights(&grid, 0.5, vec![w.clone(), w]).unwrap();
        let model = LocalModel::new(&flat, Basis::new(2).unwrap(), &noise).unwrap();
        assert!(matches!(det_block_formula(&model, &flat, 2), Err(Error::AssumptionViolated(_))));
        let a: Vec<f64> = grid.points().iter().map(|&t| if t < 0.5 { 1.0 } else { 0.0 }).collect();
        let b: Vec<f64> = grid.points().iter().map(|&t| if t > 0.3 { 1.0 } else { 0.0 }).collect();
        let crossed = LocalizationLadder::from_weights(&grid, 0.5, vec![a, b]).unwrap();
        let model = LocalModel::new(&crossed, Basis::new(2).unwrap(), &noise).unwrap();
        assert!(matches!(det_block_formula(&model, &crossed, 2), Err(Error::AssumptionViolated(_))));
    }

    #[test]
    fn bias_and_kl() {
        let (ladder, model) = rect_model(2, 1.0);
        let pts = ladder.grid().points();
        let lin: Vec<f64> = pts.iter().map(|t| 1.0 + t).collect();
        for k in 1..=4 {
            assert!(modeling_bias(&model, k, &lin, &[1.5, 1.0]).unwrap() < 1e-18);
            assert!(kl_divergence(&model, k, &lin, &[1.5, 1.0]).unwrap().abs() < 1e-9);
        }
        let smooth: Vec<f64> = pts.iter().map(|t| (4.0 * t).sin()).collect();
        let theta = [(2.0f64).sin(), 4.0 * (2.0f64).cos()];
        let prof = bias_profile(&model, &smooth, &theta).unwrap();
        assert!(prof.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        for k in 1..=4 {
            let kl = kl_divergence(&model, k, &smooth, &theta).unwrap();
            assert!((2.0 * kl - prof[k - 1]).abs() <= 1e-8 * prof[k - 1].max(1e-12));
        }
    }

    #[test]
    fn homogeneous_kl_matches_general_formula() {
        let (ladder, model) = rect_model(2, 1.3);
        let f: Vec<f64> = ladder.grid().points().iter().map(|t| (3.0 * t).cos()).collect();
        let theta = [(1.5f64).cos(), -3.0 * (1.5f64).sin()];
        for k in 1..=4 {
            let general = kl_divergence(&model, k, &f, &theta).unwrap();
            let delta = modeling_bias(&model, k, &f, &theta).unwrap();
            let hom = kl_homogeneous(2, k, 1.0, 1.3, delta);
            assert!((general / hom - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn variance_bounds() {
        let grid = DesignGrid::equidistant(150).unwrap();
        let ladder = build_ladder(&grid, 0.4, KernelShape::Epanechnikov, 0.06, 1.4, 5, 2).unwrap();
        let tv: Vec<f64> = (0..150).map(|i| 1.0 + 0.25 * (i as f64).cos()).collect();
        let noise = NoiseModel::new(vec![1.0; 150], tv, 0.25).unwrap();
        let model = LocalModel::new(&ladder, Basis::new(2).unwrap(), &noise).unwrap();
        let u0 = measured_u0(&model).unwrap();
        assert!(u0 > 1.0);
        for k in 1..=5 {
            assert!(variance_ratio(&model, k) <= 1.25 * (1.0 + 1e-9));
            for l in 1..k {
                let bound = 2.0 * 1.25 * (1.0 + u0.powi(-((k - l) as i32)));
                assert!(pairwise_variance_ratio(&model, l, k) <= bound * (1.0 + 1e-9));
            }
        }
        let s = wilks_spectrum(&model, &ladder, 3);
        assert!(s.leading[0] <= 1.25 + 1e-9);
    }
}
