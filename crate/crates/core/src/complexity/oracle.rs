//! Brute-force references for the pruned enumeration.

/// Minimal `n` such that the `n` largest products `lambda_k^2` over `{1..m}^d`
/// sum to at least `(1 - eps^2) Lambda^d`, by materializing and sorting.
/// Returns `u64::MAX` if the grid never reaches the target.
pub fn sort_oracle(values: &[f64], trace: f64, epsilon: f64, d: usize) -> u64 {
    let mut products = vec![1.0f64];
    for _ in 0..d {
        products = products.iter().flat_map(|p| values.iter().map(move |v| p * v)).collect();
    }
    products.sort_by(|a, b| b.total_cmp(a));
    let target = (1.0 - epsilon * epsilon) * trace.powi(d as i32);
    let mut acc = 0.0;
    for (i, p) in products.iter().enumerate() {
        acc += p;
        if acc >= target {
            return i as u64 + 1;
        }
    }
    u64::MAX
}

/// A finitely supported law on the real line, atoms sorted by value.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLaw {
    pub atoms: Vec<(f64, f64)>,
}

impl DiscreteLaw {
    /// Law of `U = -log lambda_i` with probabilities `lambda_i^2 / sum`.
    pub fn from_spectrum(values: &[f64]) -> Self {
        let total: f64 = values.iter().sum();
        Self::new(values.iter().map(|v| (-0.5 * v.ln(), v / total)).collect())
    }

    pub fn new(mut atoms: Vec<(f64, f64)>) -> Self {
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        DiscreteLaw { atoms }
    }

    /// Law of the sum of independent copies.
    pub fn convolve(&self, other: &DiscreteLaw) -> DiscreteLaw {
        let mut out = Vec::with_capacity(self.atoms.len() * other.atoms.len());
        for &(a, p) in &self.atoms {
            for &(b, q) in &other.atoms {
                out.push((a + b, p * q));
            }
        }
        DiscreteLaw::new(out)
    }

    pub fn power(&self, d: usize) -> DiscreteLaw {
        let mut acc = DiscreteLaw::new(vec![(0.0, 1.0)]);
        for _ in 0..d {
            acc = acc.convolve(self);
        }
        acc
    }

    /// `P(X > t)`.
    pub fn survival(&self, t: f64) -> f64 {
        let start = self.atoms.partition_point(|a| a.0 <= t);
        self.atoms[start..].iter().map(|a| a.1).sum()
    }
}
