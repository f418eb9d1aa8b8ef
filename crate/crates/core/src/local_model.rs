//! Local polynomial basis, information matrices, quasi-MLE and
//! local-polynomial weights.

use crate::design::LocalizationLadder;
use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, Cholesky, Matrix, SymEigen};
use crate::scalar::Scalar;

/// Polynomial basis `(1, u, u^2/2!, ..., u^{p-1}/(p-1)!)` with `p` columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Basis {
    p: usize,
}

impl Basis {
    pub fn new(p: usize) -> Result<Self> {
        if p == 0 {
            return Err(invalid("p", "basis needs at least one column"));
        }
        Ok(Self { p })
    }

    pub fn dim(self) -> usize {
        self.p
    }

    pub fn psi<T: Scalar>(self, u: T) -> Vec<T> {
        let mut out = Vec::with_capacity(self.p);
        let mut term = T::one();
        for j in 0..self.p {
            if j > 0 {
                term = term * u / T::from_usize_lossy(j);
            }
            out.push(term);
        }
        out
    }
}

/// Working variances `sigma_i^2`, true variances `sigma_{0,i}^2` and the
/// declared misspecification level `delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel<T> {
    model_var: Vec<T>,
    true_var: Vec<T>,
    delta: T,
}

impl<T: Scalar> NoiseModel<T> {
    pub fn new(model_var: Vec<T>, true_var: Vec<T>, delta: T) -> Result<Self> {
        if model_var.len() != true_var.len() {
            return Err(Error::DimensionMismatch { expected: model_var.len(), found: true_var.len() });
        }
        if model_var.iter().chain(&true_var).any(|&v| !(v > T::zero()) || !v.is_finite()) {
            return Err(invalid("noise", "variances must be positive and finite"));
        }
        if !(delta >= T::zero() && delta < T::one()) {
            return Err(invalid("delta", format!("{delta} outside [0, 1)")));
        }
        let slack = T::c(1e-12);
        for (&s, &s0) in model_var.iter().zip(&true_var) {
            let ratio = s0 / s;
            if ratio < T::one() - delta - slack || ratio > T::one() + delta + slack {
                return Err(invalid("delta", format!("variance ratio {ratio} violates the declared level {delta}")));
            }
        }
        Ok(Self { model_var, true_var, delta })
    }

    /// Correctly specified constant noise level.
    pub fn homoscedastic(n: usize, sigma: T) -> Result<Self> {
        let v = vec![sigma * sigma; n];
        Self::new(v.clone(), v, T::zero())
    }

    /// Constant working level `sigma` against constant true level `sigma0`.
    pub fn homogeneous(n: usize, sigma: T, sigma0: T) -> Result<Self> {
        let delta = (sigma0 * sigma0 / (sigma * sigma) - T::one()).abs();
        Self::new(vec![sigma * sigma; n], vec![sigma0 * sigma0; n], delta)
    }

    pub fn model_var(&self) -> &[T] {
        &self.model_var
    }

    pub fn true_var(&self) -> &[T] {
        &self.true_var
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    pub fn len(&self) -> usize {
        self.model_var.len()
    }

    pub fn is_empty(&self) -> bool {
        self.model_var.is_empty()
    }

    /// Smallest level for which the variance-ratio condition holds.
    pub fn effective_delta(&self) -> T {
        self.model_var
            .iter()
            .zip(&self.true_var)
            .fold(T::zero(), |acc, (&s, &s0)| acc.max((s0 / s - T::one()).abs()))
    }

    pub fn max_model_var(&self) -> T {
        self.model_var.iter().fold(T::zero(), |a, &v| a.max(v))
    }

    /// True when working and true variances are constant across points.
    pub fn is_homogeneous(&self) -> bool {
        let first = (self.model_var[0], self.true_var[0]);
        self.model_var.iter().zip(&self.true_var).all(|(&s, &s0)| s == first.0 && s0 == first.1)
    }
}

/// Quasi-MLE at one scale together with its information matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleEstimate<T> {
    pub theta: Vec<T>,
    pub info: Matrix<T>,
    /// 1-based scale index.
    pub scale: usize,
}

fn check_scale<T: Scalar>(ladder: &LocalizationLadder<T>, k: usize) -> Result<()> {
    if k == 0 || k > ladder.scales() {
        return Err(invalid("k", format!("scale {k} outside 1..={}", ladder.scales())));
    }
    Ok(())
}

fn check_noise<T: Scalar>(ladder: &LocalizationLadder<T>, noise: &NoiseModel<T>) -> Result<()> {
    if noise.len() != ladder.n() {
        return Err(Error::DimensionMismatch { expected: ladder.n(), found: noise.len() });
    }
    Ok(())
}

fn singular_tolerance<T: Scalar>() -> T {
    T::c(1e-12).max(T::epsilon() * T::c(100.0))
}

/// `B_k = sum_i Psi_i Psi_i^T w_{k,i} / sigma_i^2`.
pub fn info_matrix<T: Scalar>(
    ladder: &LocalizationLadder<T>,
    basis: Basis,
    noise: &NoiseModel<T>,
    k: usize,
) -> Result<Matrix<T>> {
    check_scale(ladder, k)?;
    check_noise(ladder, noise)?;
    let p = basis.dim();
    let mut b = Matrix::<T>::zeros(p, p);
    let x = ladder.x();
    for i in ladder.support(k) {
        let psi = basis.psi(ladder.grid().points()[i] - x);
        let w = ladder.weights(k)[i] / noise.model_var()[i];
        for a in 0..p {
            for c in 0..=a {
                b[(a, c)] = b[(a, c)] + psi[a] * psi[c] * w;
            }
        }
    }
    for a in 0..p {
        for c in 0..a {
            b[(c, a)] = b[(a, c)];
        }
    }
    let eig = SymEigen::new(&b);
    if !(eig.min() > singular_tolerance::<T>() * eig.max().abs()) {
        return Err(Error::SingularInformation { scale: k });
    }
    Ok(b)
}

fn factor<T: Scalar>(b: &Matrix<T>, k: usize) -> Result<Cholesky<T>> {
    Cholesky::new(b).ok_or(Error::SingularInformation { scale: k })
}

/// `Psi W_k Y`.
fn score<T: Scalar>(ladder: &LocalizationLadder<T>, basis: Basis, noise: &NoiseModel<T>, k: usize, y: &[T]) -> Vec<T> {
    let mut s = vec![T::zero(); basis.dim()];
    for i in ladder.support(k) {
        let psi = basis.psi(ladder.grid().points()[i] - ladder.x());
        let w = ladder.weights(k)[i] / noise.model_var()[i] * y[i];
        for (acc, v) in s.iter_mut().zip(psi) {
            *acc = *acc + v * w;
        }
    }
    s
}

/// `theta_k = B_k^{-1} Psi W_k Y`.
pub fn qmle<T: Scalar>(
    ladder: &LocalizationLadder<T>,
    basis: Basis,
    noise: &NoiseModel<T>,
    k: usize,
    y: &[T],
) -> Result<ScaleEstimate<T>> {
    if y.len() != ladder.n() {
        return Err(Error::DimensionMismatch { expected: ladder.n(), found: y.len() });
    }
    let info = info_matrix(ladder, basis, noise, k)?;
    let chol = factor(&info, k)?;
    let theta = chol.solve(&score(ladder, basis, noise, k, y));
    Ok(ScaleEstimate { theta, info, scale: k })
}

/// Local-polynomial weights `W*_{k,i} = e_1^T B_k^{-1} Psi_i w_{k,i} / sigma_i^2`.
pub fn lp_weights<T: Scalar>(
    ladder: &LocalizationLadder<T>,
    basis: Basis,
    noise: &NoiseModel<T>,
    k: usize,
) -> Result<Vec<T>> {
    let info = info_matrix(ladder, basis, noise, k)?;
    let chol = factor(&info, k)?;
    let mut e1 = vec![T::zero(); basis.dim()];
    e1[0] = T::one();
    let row = chol.solve(&e1);
    let mut out = vec![T::zero(); ladder.n()];
    for i in ladder.support(k) {
        let psi = basis.psi(ladder.grid().points()[i] - ladder.x());
        out[i] = dot(&row, &psi) * ladder.weights(k)[i] / noise.model_var()[i];
    }
    Ok(out)
}

/// `(theta_k - theta)^T B_k (theta_k - theta)`.
pub fn fll_quadratic<T: Scalar>(est: &ScaleEstimate<T>, theta: &[T]) -> T {
    let diff: Vec<T> = est.theta.iter().zip(theta).map(|(&a, &b)| a - b).collect();
    est.info.quad_form(&diff).max(T::zero())
}

/// Local Gaussian log-likelihood `-1/2 sum_i (Y_i - Psi_i^T theta)^2 w_{k,i} / sigma_i^2`.
pub fn log_likelihood<T: Scalar>(
    ladder: &LocalizationLadder<T>,
    basis: Basis,
    noise: &NoiseModel<T>,
    k: usize,
    y: &[T],
    theta: &[T],
) -> T {
    let mut s = T::zero();
    for (i, &w) in ladder.weights(k).iter().enumerate() {
        if w == T::zero() {
            continue;
        }
        let r = y[i] - dot(&basis.psi(ladder.grid().points()[i] - ladder.x()), theta);
        s = s + r * r * w / noise.model_var()[i];
    }
    -s * T::c(0.5)
}

/// Estimates of `f^{(j)}(x)` for `j = 0..p-1`; the factorial scaling of the
/// basis makes these the raw coefficients.
pub fn derivative_estimates<T: Scalar>(est: &ScaleEstimate<T>, basis: Basis) -> Vec<T> {
    est.theta.iter().take(basis.dim()).copied().collect()
}

#[derive(Debug, Clone)]
struct ScaleOperator<T> {
    support: Vec<usize>,
    info: Matrix<T>,
    chol: Cholesky<T>,
    /// `B_k^{-1} Psi W_k` restricted to the support, one column per support point.
    d: Matrix<T>,
}

/// Precomputed linear operators `theta_k = D_k Y` for all scales of a ladder.
#[derive(Debug, Clone)]
pub struct LocalModel<T> {
    basis: Basis,
    n: usize,
    x: T,
    delta: T,
    model_var: Vec<T>,
    true_var: Vec<T>,
    ops: Vec<ScaleOperator<T>>,
}

impl<T: Scalar> LocalModel<T> {
    pub fn new(ladder: &LocalizationLadder<T>, basis: Basis, noise: &NoiseModel<T>) -> Result<Self> {
        check_noise(ladder, noise)?;
        let p = basis.dim();
        let mut ops = Vec::with_capacity(ladder.scales());
        for k in 1..=ladder.scales() {
            let info = info_matrix(ladder, basis, noise, k)?;
            let chol = factor(&info, k)?;
            let support = ladder.support(k);
            let mut d = Matrix::zeros(p, support.len());
            for (c, &i) in support.iter().enumerate() {
                let psi = basis.psi(ladder.grid().points()[i] - ladder.x());
                let col = chol.solve(&psi);
                let w = ladder.weights(k)[i] / noise.model_var()[i];
                for r in 0..p {
                    d[(r, c)] = col[r] * w;
                }
            }
            ops.push(ScaleOperator { support, info, chol, d });
        }
        Ok(Self {
            basis,
            n: ladder.n(),
            x: ladder.x(),
            delta: noise.delta(),
            model_var: noise.model_var().to_vec(),
            true_var: noise.true_var().to_vec(),
            ops,
        })
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn p(&self) -> usize {
        self.basis.dim()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn x(&self) -> T {
        self.x
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    pub fn scales(&self) -> usize {
        self.ops.len()
    }

    pub fn model_var(&self) -> &[T] {
        &self.model_var
    }

    pub fn true_var(&self) -> &[T] {
        &self.true_var
    }

    pub fn info(&self, k: usize) -> &Matrix<T> {
        &self.ops[k - 1].info
    }

    pub fn cholesky(&self, k: usize) -> &Cholesky<T> {
        &self.ops[k - 1].chol
    }

    pub fn support(&self, k: usize) -> &[usize] {
        &self.ops[k - 1].support
    }

    /// Writes `theta_k = D_k y` into `out`.
    pub fn theta_into(&self, k: usize, y: &[T], out: &mut [T]) {
        let op = &self.ops[k - 1];
        for (r, o) in out.iter_mut().enumerate().take(op.d.rows()) {
            let row = op.d.row(r);
            *o = op.support.iter().zip(row).fold(T::zero(), |acc, (&i, &v)| acc + v * y[i]);
        }
    }

    pub fn fit(&self, k: usize, y: &[T]) -> ScaleEstimate<T> {
        let mut theta = vec![T::zero(); self.p()];
        self.theta_into(k, y, &mut theta);
        ScaleEstimate { theta, info: self.info(k).clone(), scale: k }
    }

    pub fn fit_all(&self, y: &[T]) -> Vec<ScaleEstimate<T>> {
        (1..=self.scales()).map(|k| self.fit(k, y)).collect()
    }

    /// Full `p x n` operator `D_k = B_k^{-1} Psi W_k`.
    pub fn operator(&self, k: usize) -> Matrix<T> {
        let op = &self.ops[k - 1];
        let mut full = Matrix::zeros(self.p(), self.n);
        for (c, &i) in op.support.iter().enumerate() {
            for r in 0..self.p() {
                full[(r, i)] = op.d[(r, c)];
            }
        }
        full
    }

    /// `D_l diag(var) D_m^T`.
    pub fn cross_covariance(&self, l: usize, m: usize, var: &[T]) -> Matrix<T> {
        let (a, b) = (&self.ops[l - 1], &self.ops[m - 1]);
        let p = self.p();
        let mut pos_b = vec![usize::MAX; self.n];
        for (c, &i) in b.support.iter().enumerate() {
            pos_b[i] = c;
        }
        let mut out = Matrix::zeros(p, p);
        for (ca, &i) in a.support.iter().enumerate() {
            let cb = pos_b[i];
            if cb == usize::MAX {
                continue;
            }
            for r in 0..p {
                let left = a.d[(r, ca)] * var[i];
                for s in 0..p {
                    out[(r, s)] = out[(r, s)] + left * b.d[(s, cb)];
                }
            }
        }
        out
    }

    /// Exact `Var theta_k` under the true variances.
    pub fn variance(&self, k: usize) -> Matrix<T> {
        let mut v = self.cross_covariance(k, k, &self.true_var);
        v.symmetrize();
        v
    }
}
