//! Design grids, kernels and nested bandwidth ladders.
//!
//! Scale indices `k` are 1-based throughout the public API.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{relative_eigenvalues, Cholesky, Matrix};
use crate::scalar::Scalar;

/// Relative slack applied to the closed window `|X_i - x| <= h`.
pub const WINDOW_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelShape {
    #[default]
    Rectangular,
    Triangular,
    Epanechnikov,
}

impl KernelShape {
    /// Kernel value at `u`; zero outside `[-1, 1]`, one at the origin.
    pub fn weight<T: Scalar>(self, u: T) -> T {
        let a = u.abs();
        if a > T::one() {
            return T::zero();
        }
        match self {
            KernelShape::Rectangular => T::one(),
            KernelShape::Triangular => T::one() - a,
            KernelShape::Epanechnikov => T::one() - a * a,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelShape::Rectangular => "rectangular",
            KernelShape::Triangular => "triangular",
            KernelShape::Epanechnikov => "epanechnikov",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "rectangular" => Ok(KernelShape::Rectangular),
            "triangular" => Ok(KernelShape::Triangular),
            "epanechnikov" => Ok(KernelShape::Epanechnikov),
            other => Err(invalid("kernel", format!("unknown kernel `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignGrid<T> {
    points: Vec<T>,
}

impl<T: Scalar> DesignGrid<T> {
    /// Accepts nondecreasing points in `[0, 1]`.
    pub fn new(points: Vec<T>) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("grid", "no design points"));
        }
        if let Some(bad) = points.iter().find(|&&x| !(x >= T::zero() && x <= T::one())) {
            return Err(invalid("grid", format!("point {bad} outside [0, 1]")));
        }
        if points.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("grid", "points are not sorted"));
        }
        Ok(Self { points })
    }

    /// `n` points `i / (n - 1)`; a single point sits at 1/2.
    pub fn equidistant(n: usize) -> Result<Self> {
        match n {
            0 => Err(invalid("n", "grid needs at least one point")),
            1 => Ok(Self { points: vec![T::c(0.5)] }),
            _ => {
                let denom = T::from_usize_lossy(n - 1);
                Ok(Self { points: (0..n).map(|i| T::from_usize_lossy(i) / denom).collect() })
            }
        }
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Closed-window membership test shared by every support computation.
pub fn in_window<T: Scalar>(distance: T, h: T) -> bool {
    distance.abs() <= h * (T::one() + T::c(WINDOW_TOLERANCE))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthLadder<T> {
    bandwidths: Vec<T>,
    ratio: T,
}

impl<T: Scalar> BandwidthLadder<T> {
    /// Geometric ladder `h_k = h1 u^{k-1}` for a grid of `n` points.
    pub fn new(h1: T, u: T, k: usize, n: usize) -> Result<Self> {
        if !(u > T::one()) || !u.is_finite() {
            return Err(Error::InvalidLadder(format!("ratio u = {u} must exceed 1")));
        }
        if k < 2 {
            return Err(Error::InvalidLadder(format!("K = {k} must be at least 2")));
        }
        let floor = T::one() / T::from_usize_lossy(2 * n.max(1));
        if !(h1 >= floor) {
            return Err(Error::InvalidLadder(format!("h1 = {h1} is below 1/(2n) = {floor}")));
        }
        let mut bandwidths = Vec::with_capacity(k);
        let mut h = h1;
        for _ in 0..k {
            bandwidths.push(h);
            h = h * u;
        }
        let top = bandwidths[k - 1];
        if top > T::one() * (T::one() + T::c(1e-12)) {
            return Err(Error::InvalidLadder(format!("largest bandwidth {top} exceeds 1")));
        }
        Ok(Self { bandwidths, ratio: u })
    }

    pub fn bandwidths(&self) -> &[T] {
        &self.bandwidths
    }

    pub fn ratio(&self) -> T {
        self.ratio
    }

    pub fn len(&self) -> usize {
        self.bandwidths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bandwidths.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationLadder<T> {
    grid: DesignGrid<T>,
    x: T,
    kernel: Option<KernelShape>,
    bandwidths: Option<BandwidthLadder<T>>,
    weights: Vec<Vec<T>>,
}

/// Builds the nested kernel ladder at `x`; `min_support` is the number of
/// parameters `p` that the smallest window must identify.
pub fn build_ladder<T: Scalar>(
    grid: &DesignGrid<T>,
    x: T,
    kernel: KernelShape,
    h1: T,
    u: T,
    k: usize,
    min_support: usize,
) -> Result<LocalizationLadder<T>> {
    if !(x >= T::zero() && x <= T::one()) {
        return Err(invalid("x", format!("reference point {x} outside [0, 1]")));
    }
    let bandwidths = BandwidthLadder::new(h1, u, k, grid.len())?;
    let weights: Vec<Vec<T>> = bandwidths
        .bandwidths()
        .iter()
        .map(|&h| {
            grid.points()
                .iter()
                .map(|&xi| {
                    let dist = xi - x;
                    if in_window(dist, h) {
                        let v = (dist / h).max(-T::one()).min(T::one());
                        kernel.weight(v)
                    } else {
                        T::zero()
                    }
                })
                .collect()
        })
        .collect();
    let found = weights[0].iter().filter(|&&w| w > T::zero()).count();
    if found < min_support {
        return Err(Error::InsufficientSupport { needed: min_support, found });
    }
    Ok(LocalizationLadder { grid: grid.clone(), x, kernel: Some(kernel), bandwidths: Some(bandwidths), weights })
}

impl<T: Scalar> LocalizationLadder<T> {
    /// Wraps explicit per-scale weights. Only ranges and shapes are checked;
    /// use [`LocalizationLadder::is_nested`] for the ordering condition.
    pub fn from_weights(grid: &DesignGrid<T>, x: T, weights: Vec<Vec<T>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidLadder("no scales".into()));
        }
        for row in &weights {
            if row.len() != grid.len() {
                return Err(Error::DimensionMismatch { expected: grid.len(), found: row.len() });
            }
            if row.iter().any(|&w| !(w >= T::zero() && w <= T::one())) {
                return Err(invalid("weights", "weights must lie in [0, 1]"));
            }
        }
        Ok(Self { grid: grid.clone(), x, kernel: None, bandwidths: None, weights })
    }

    pub fn grid(&self) -> &DesignGrid<T> {
        &self.grid
    }

    pub fn x(&self) -> T {
        self.x
    }

    pub fn kernel(&self) -> Option<KernelShape> {
        self.kernel
    }

    pub fn bandwidth_ladder(&self) -> Option<&BandwidthLadder<T>> {
        self.bandwidths.as_ref()
    }

    pub fn bandwidth(&self, k: usize) -> Option<T> {
        self.bandwidths.as_ref().map(|b| b.bandwidths()[k - 1])
    }

    /// Number of scales `K`.
    pub fn scales(&self) -> usize {
        self.weights.len()
    }

    pub fn n(&self) -> usize {
        self.grid.len()
    }

    pub fn weights(&self, k: usize) -> &[T] {
        &self.weights[k - 1]
    }

    /// Indices with positive weight at scale `k`.
    pub fn support(&self, k: usize) -> Vec<usize> {
        self.weights(k).iter().enumerate().filter(|(_, &w)| w > T::zero()).map(|(i, _)| i).collect()
    }

    pub fn max_weight(&self) -> T {
        self.weights.iter().flatten().fold(T::zero(), |a, &w| a.max(w))
    }

    /// Ordering condition: weights never decrease with the scale.
    pub fn is_nested(&self) -> bool {
        self.weights.windows(2).all(|w| w[0].iter().zip(&w[1]).all(|(&a, &b)| b >= a))
    }

    /// Binary product property `w_l w_m = w_min(l,m)`, i.e. 0/1 nested weights.
    pub fn has_binary_products(&self) -> bool {
        self.is_nested() && self.weights.iter().flatten().all(|&w| w == T::zero() || w == T::one())
    }
}

/// Eigenvalues of `B_{k-1}^{-1/2} B_k B_{k-1}^{-1/2}` for each consecutive pair.
pub fn ratio_spectra<T: Scalar>(bks: &[Matrix<T>]) -> Result<Vec<Vec<T>>> {
    let chols = bks
        .iter()
        .enumerate()
        .map(|(i, b)| Cholesky::new(b).ok_or_else(|| Error::SingularMatrix(format!("B_{}", i + 1))))
        .collect::<Result<Vec<_>>>()?;
    Ok(bks.iter().skip(1).zip(&chols).map(|(b, prev)| relative_eigenvalues(b, prev)).collect())
}

/// Checks `u0 I <= B_{k-1}^{-1/2} B_k B_{k-1}^{-1/2} <= u I` for every k.
pub fn verify_assumption_b<T: Scalar>(bks: &[Matrix<T>], u0: T, u: T) -> Result<bool> {
    let tol = T::c(1e-9);
    let spectra = ratio_spectra(bks)?;
    Ok(spectra
        .iter()
        .flatten()
        .all(|&ev| ev >= u0 * (T::one() - tol) && ev <= u * (T::one() + tol)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rectangular_all_points_inside() {
        let grid = DesignGrid::new(vec![0.0, 0.5, 1.0]).unwrap();
        let ladder = build_ladder(&grid, 0.5, KernelShape::Rectangular, 0.6, 1.2, 2, 1).unwrap();
        assert_eq!(ladder.weights(1), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn rectangular_closed_window() {
        let grid = DesignGrid::<f64>::equidistant(11).unwrap();
        let ladder = build_ladder(&grid, 0.5, KernelShape::Rectangular, 0.4, 1.2, 2, 1).unwrap();
        let expected: Vec<f64> =
            grid.points().iter().map(|&x| if (x - 0.5f64).abs() <= 0.4 + 1e-12 { 1.0 } else { 0.0 }).collect();
        assert_eq!(ladder.weights(1), expected.as_slice());
        assert_eq!(ladder.support(1).len(), 9);
    }

    #[test]
    fn ladder_errors() {
        let grid = DesignGrid::<f64>::equidistant(11).unwrap();
        assert!(matches!(
            build_ladder(&grid, 0.5, KernelShape::Rectangular, 0.1, 1.0, 3, 1),
            Err(Error::InvalidLadder(_))
        ));
        assert!(matches!(
            build_ladder(&grid, 0.5, KernelShape::Rectangular, 0.05, 1.5, 3, 2),
            Err(Error::InsufficientSupport { needed: 2, found: 1 })
        ));
        assert!(matches!(
            build_ladder(&grid, 0.5, KernelShape::Rectangular, 0.01, 1.5, 1, 1),
            Err(Error::InvalidLadder(_))
        ));
    }

    #[test]
    fn bandwidths_are_geometric() {
        let b = BandwidthLadder::new(0.05, 1.3, 6, 100).unwrap();
        for w in b.bandwidths().windows(2) {
            assert!((w[1] / w[0] - 1.3f64).abs() < 1e-12);
        }
    }

    #[test]
    fn assumption_b_scalar_cases() {
        let b1 = Matrix::from_rows(&[vec![2.0]]);
        let b2 = b1.scale(1.5);
        let b3 = b2.scale(1.5);
        assert!(verify_assumption_b(&[b1.clone(), b2, b3], 1.5, 1.5).unwrap());
        assert!(!verify_assumption_b(&[b1.clone(), b1.clone()], 1.1, 2.0).unwrap());
        let bad = Matrix::from_rows(&[vec![0.0]]);
        assert!(matches!(verify_assumption_b(&[b1, bad], 1.0, 2.0), Err(Error::SingularMatrix(_))));
    }

    #[test]
    fn kernel_shapes() {
        for k in [KernelShape::Rectangular, KernelShape::Triangular, KernelShape::Epanechnikov] {
            assert_eq!(k.weight(0.0f64), 1.0);
            assert_eq!(k.weight(1.5f64), 0.0);
            assert_eq!(KernelShape::parse(k.name()).unwrap(), k);
        }
        assert_eq!(KernelShape::Rectangular.weight(1.0f64), 1.0);
    }

    proptest! {
        #[test]
        fn random_grids_give_nested_ladders(
            mut pts in proptest::collection::vec(0.0f64..=1.0, 20..60),
            x in 0.2f64..0.8,
            shape in 0usize..3,
            u in 1.05f64..1.6,
        ) {
            pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let grid = DesignGrid::new(pts).unwrap();
            let kernel = [KernelShape::Rectangular, KernelShape::Triangular, KernelShape::Epanechnikov][shape];
            let h1 = 0.3f64;
            let k = ((1.0f64 / h1).ln() / u.ln()).floor() as usize;
            prop_assume!(k >= 2);
            match build_ladder(&grid, x, kernel, h1, u, k.min(6), 1) {
                Ok(ladder) => {
                    prop_assert!(ladder.is_nested());
                    prop_assert!(ladder.max_weight() <= 1.0);
                    for s in 1..=ladder.scales() {
                        let h = ladder.bandwidth(s).unwrap();
                        for (i, &w) in ladder.weights(s).iter().enumerate() {
                            if !in_window(grid.points()[i] - x, h) {
                                prop_assert_eq!(w, 0.0);
                            }
                        }
                    }
                }
                Err(Error::InsufficientSupport { .. }) => {}
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}
