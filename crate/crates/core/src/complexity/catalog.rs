use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};

/// Largest truncation length materialized by default.
pub const MAX_TRUNCATION: usize = 1 << 20;

/// Relative trace tail targeted by the default truncation.
pub const TRACE_TOLERANCE: f64 = 1e-8;

/// Marginal covariance spectra of tensor-product random fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "field", rename_all = "kebab-case")]
pub enum Field {
    BrownianSheet,
    BrownianBridge,
    CenteredWiener,
    CenteredBridge,
    CenteredIntegratedBridge,
    AndersonDarling,
    Pycke { mu: f64 },
    Geometric { rho: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Lattice {
    Nonlattice,
    Lattice { span: f64 },
}

impl Lattice {
    pub fn span(&self) -> Option<f64> {
        match *self {
            Lattice::Nonlattice => None,
            Lattice::Lattice { span } => Some(span),
        }
    }
}

impl Field {
    /// Parses names such as `brownian-bridge`, `pycke:2` or `geometric:0.5`.
    pub fn parse(spec: &str) -> Result<Field> {
        let (name, arg) = match spec.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (spec.trim(), None),
        };
        let param = |label: &'static str| -> Result<f64> {
            arg.ok_or_else(|| invalid(label, format!("field `{name}` needs a parameter, e.g. `{name}:0.5`")))?
                .parse::<f64>()
                .map_err(|_| invalid(label, format!("cannot parse `{}`", arg.unwrap_or_default())))
        };
        let field = match name {
            "brownian-sheet" | "wiener-chentsov" => Field::BrownianSheet,
            "brownian-bridge" | "brownian-pillow" => Field::BrownianBridge,
            "centered-wiener" => Field::CenteredWiener,
            "centered-bridge" | "watson" => Field::CenteredBridge,
            "centered-integrated-bridge" => Field::CenteredIntegratedBridge,
            "anderson-darling" => Field::AndersonDarling,
            "pycke" => Field::Pycke { mu: param("mu")? },
            "geometric" => Field::Geometric { rho: param("rho")? },
            other => return Err(Error::UnknownField(other.to_string())),
        };
        field.validate()?;
        Ok(field)
    }

    pub fn name(&self) -> String {
        match *self {
            Field::BrownianSheet => "brownian-sheet".into(),
            Field::BrownianBridge => "brownian-bridge".into(),
            Field::CenteredWiener => "centered-wiener".into(),
            Field::CenteredBridge => "centered-bridge".into(),
            Field::CenteredIntegratedBridge => "centered-integrated-bridge".into(),
            Field::AndersonDarling => "anderson-darling".into(),
            Field::Pycke { mu } => format!("pycke:{mu}"),
            Field::Geometric { rho } => format!("geometric:{rho}"),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Field::Pycke { mu } if !(mu > 0.0 && mu.is_finite()) => Err(invalid("mu", "must be positive")),
            Field::Geometric { rho } if !(rho > 0.0 && rho < 1.0) => Err(invalid("rho", "must lie in (0, 1)")),
            _ => Ok(()),
        }
    }

    /// Each distinct eigenvalue is repeated this many times.
    pub fn multiplicity(&self) -> usize {
        match self {
            Field::CenteredBridge => 2,
            _ => 1,
        }
    }

    /// Distinct eigenvalue `lambda^2` as a smooth function of its index `s >= 1`.
    pub fn distinct_value(&self, s: f64) -> f64 {
        match *self {
            Field::BrownianSheet => (PI * (s - 0.5)).powi(-2),
            Field::BrownianBridge | Field::CenteredWiener => (PI * s).powi(-2),
            Field::CenteredBridge => (2.0 * PI * s).powi(-2),
            Field::CenteredIntegratedBridge => (PI * s).powi(-4),
            Field::AndersonDarling => 1.0 / (s * (s + 1.0)),
            Field::Pycke { mu } => mu / ((mu + s - 1.0) * (mu + s)),
            Field::Geometric { rho } => rho.powf(2.0 * (s - 1.0)),
        }
    }

    /// `lambda_i^2` for the 1-based index `i`.
    pub fn value(&self, i: usize) -> f64 {
        let m = self.multiplicity();
        self.distinct_value(i.div_ceil(m) as f64)
    }

    /// Closed-form trace `sum_i lambda_i^2`.
    pub fn trace(&self) -> f64 {
        match *self {
            Field::BrownianSheet => 0.5,
            Field::BrownianBridge | Field::CenteredWiener => 1.0 / 6.0,
            Field::CenteredBridge => 1.0 / 12.0,
            Field::CenteredIntegratedBridge => 1.0 / 90.0,
            Field::AndersonDarling | Field::Pycke { .. } => 1.0,
            Field::Geometric { rho } => 1.0 / (1.0 - rho * rho),
        }
    }

    pub fn lattice(&self) -> Lattice {
        match *self {
            Field::Geometric { rho } => Lattice::Lattice { span: -rho.ln() },
            _ => Lattice::Nonlattice,
        }
    }

    /// Truncation length with relative trace tail at most `TRACE_TOLERANCE`,
    /// capped at `MAX_TRUNCATION` and rounded to a whole multiplicity block.
    pub fn default_truncation(&self) -> usize {
        let total = self.trace();
        let mut m = 64usize;
        loop {
            let head: f64 = (1..=m).map(|i| self.value(i)).sum();
            if (total - head) / total <= TRACE_TOLERANCE || m >= MAX_TRUNCATION {
                return m.min(MAX_TRUNCATION);
            }
            m *= 2;
        }
    }
}

/// A truncated marginal spectrum `lambda_1^2 >= lambda_2^2 >= ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSequence {
    pub name: String,
    /// The field the values came from; `None` for a finite spectrum.
    pub field: Option<Field>,
    /// `lambda_i^2`, `i = 1..m`.
    pub values: Vec<f64>,
    /// Full trace `Lambda`.
    pub trace_full: f64,
    /// `Lambda - sum_{i <= m} lambda_i^2`.
    pub trace_tail: f64,
    pub lattice: Lattice,
}

pub fn catalog(field: Field, m: usize) -> Result<EigenSequence> {
    field.validate()?;
    if m < 2 {
        return Err(invalid("m", "truncation length must be at least 2"));
    }
    let mult = field.multiplicity();
    let m = m.div_ceil(mult) * mult;
    let values: Vec<f64> = (1..=m).map(|i| field.value(i)).collect();
    let trace_full = field.trace();
    let head = crate::stats::pairwise_sum(&values);
    Ok(EigenSequence {
        name: field.name(),
        field: Some(field),
        values,
        trace_full,
        trace_tail: (trace_full - head).max(0.0),
        lattice: field.lattice(),
    })
}

/// Catalog entry with the default truncation length.
pub fn catalog_default(field: Field) -> Result<EigenSequence> {
    catalog(field, field.default_truncation())
}

impl EigenSequence {
    /// A spectrum with finitely many positive eigenvalues, given exactly.
    pub fn finite(name: &str, mut values: Vec<f64>, lattice: Lattice) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(invalid("values", "eigenvalues must be positive and finite"));
        }
        values.sort_by(|a, b| b.total_cmp(a));
        let trace_full = crate::stats::pairwise_sum(&values);
        Ok(EigenSequence { name: name.to_string(), field: None, values, trace_full, trace_tail: 0.0, lattice })
    }

    /// The truncated values viewed as an exact finite spectrum.
    pub fn as_finite(&self) -> Self {
        EigenSequence::finite(&format!("{} (first {})", self.name, self.values.len()), self.values.clone(), self.lattice)
            .expect("catalog values are positive")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn truncated_trace(&self) -> f64 {
        self.trace_full - self.trace_tail
    }

    /// `U`-values `-log lambda_i`.
    pub fn u_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| -0.5 * v.ln()).collect()
    }
}

/// Recovers the span of a lattice carrying `us`, or `None` when the points are
/// not on a common lattice at tolerance `tol`.
pub fn detect_lattice(us: &[f64], tol: f64) -> Option<f64> {
    let base = *us.first()?;
    let diffs: Vec<f64> = us.iter().map(|u| (u - base).abs()).filter(|d| *d > tol).collect();
    let mut g = *diffs.first()?;
    for &d in &diffs[1..] {
        let (mut a, mut b) = (g.max(d), g.min(d));
        while b > tol {
            let r = a % b;
            a = b;
            b = if r > b - tol { 0.0 } else { r };
        }
        g = a;
        if g <= 1e3 * tol {
            return None;
        }
    }
    let ok = diffs.iter().all(|&d| {
        let k = (d / g).round();
        k <= 1e6 && (d - k * g).abs() <= tol * k.max(1.0)
    });
    ok.then_some(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_traces_match_partial_sums() {
        for field in [
            Field::BrownianSheet,
            Field::BrownianBridge,
            Field::CenteredBridge,
            Field::CenteredIntegratedBridge,
            Field::AndersonDarling,
            Field::Pycke { mu: 2.5 },
            Field::Geometric { rho: 0.5 },
        ] {
            let seq = catalog(field, 200_000).unwrap();
            let head: f64 = seq.values.iter().sum();
            let rel = (head - seq.trace_full).abs() / seq.trace_full;
            assert!(rel < 2e-5, "{}: {rel}", seq.name);
            assert!((head + seq.trace_tail - seq.trace_full).abs() <= 1e-12 * seq.trace_full);
        }
    }

    #[test]
    fn catalog_values() {
        let b = catalog(Field::BrownianBridge, 10).unwrap();
        assert!((b.values[0] - PI.powi(-2)).abs() < 1e-15);
        let ad = catalog(Field::AndersonDarling, 10).unwrap();
        assert_eq!(ad.values[2], 1.0 / 12.0);
        let partial: f64 = ad.values.iter().sum();
        assert!((partial - (1.0 - 1.0 / 11.0)).abs() < 1e-14);
        let cb = catalog(Field::CenteredBridge, 5).unwrap();
        assert_eq!(cb.len(), 6);
        assert_eq!(cb.values[0], cb.values[1]);
        assert!((cb.values[2] - (4.0 * PI).powi(-2)).abs() < 1e-16);
        let p1 = catalog(Field::Pycke { mu: 1.0 }, 50).unwrap();
        for (a, b) in p1.values.iter().zip(catalog(Field::AndersonDarling, 50).unwrap().values) {
            assert!((a - b).abs() < 1e-16);
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!(Field::parse("geometric:0.5").unwrap(), Field::Geometric { rho: 0.5 });
        assert!(matches!(Field::parse("nope"), Err(Error::UnknownField(_))));
        assert!(Field::parse("geometric").is_err());
        assert!(Field::parse("geometric:1.5").is_err());
        assert_eq!(Field::parse("pycke:2").unwrap().name(), "pycke:2");
    }

    #[test]
    fn default_truncation_meets_tolerance_or_cap() {
        let g = Field::Geometric { rho: 0.5 };
        let m = g.default_truncation();
        assert!(m <= 64);
        let b = Field::BrownianBridge.default_truncation();
        assert_eq!(b, MAX_TRUNCATION);
    }

    #[test]
    fn lattice_detection() {
        let g = catalog(Field::Geometric { rho: 0.5 }, 40).unwrap();
        let span = detect_lattice(&g.u_values(), 1e-9).unwrap();
        assert!((span - 2f64.ln()).abs() < 1e-9);
        let b = catalog(Field::BrownianBridge, 40).unwrap();
        assert_eq!(detect_lattice(&b.u_values(), 1e-9), None);
        let ad = catalog(Field::AndersonDarling, 40).unwrap();
        assert_eq!(detect_lattice(&ad.u_values(), 1e-9), None);
    }
}
