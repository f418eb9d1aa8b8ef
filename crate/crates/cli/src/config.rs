//! Run configuration. Every section has documented defaults; the resolved
//! configuration is echoed into each output document.

use serde::{Deserialize, Serialize};

use lpa_core::calibration::Method;
use lpa_core::KernelShape;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    /// Structured JSON document.
    #[default]
    Records,
    /// Comma-separated table with a commented header.
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses the available parallelism.
    pub threads: usize,
    pub format: Format,
    pub out: Option<String>,
    pub verbose: bool,
    pub estimate: EstimateConfig,
    pub calibrate: CalibrateConfig,
    pub risk: RiskConfig,
    pub complexity: ComplexityConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            threads: 0,
            format: Format::Records,
            out: None,
            verbose: false,
            estimate: EstimateConfig::default(),
            calibrate: CalibrateConfig::default(),
            risk: RiskConfig::default(),
            complexity: ComplexityConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CvSource {
    Theoretical,
    MonteCarlo,
    File,
}

/// Where the estimate command gets its critical values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub source: CvSource,
    /// Critical-values document, for `source = "file"`.
    pub file: Option<String>,
    pub r: f64,
    pub alpha: f64,
    pub mu: f64,
    pub replicates: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig { source: CvSource::Theoretical, file: None, r: 1.0, alpha: 1.0, mu: 0.1, replicates: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub kernel: KernelShape,
    pub p: usize,
    pub h1: f64,
    pub u: f64,
    #[serde(rename = "K")]
    pub k: usize,
    /// `homoscedastic:SIGMA`, or `column` for a per-observation `sigma` column.
    pub noise: String,
    /// Reference points at which the function is estimated.
    pub points: Vec<f64>,
    pub cv: CvConfig,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            kernel: KernelShape::Rectangular,
            p: 2,
            h1: 0.05,
            u: 1.25,
            k: 8,
            noise: "homoscedastic:1".into(),
            points: vec![0.5],
            cv: CvConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateConfig {
    pub method: Method,
    pub p: usize,
    pub r: f64,
    pub alpha: f64,
    pub u: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub mu: f64,
    pub replicates: usize,
    /// Equidistant design size for Monte Carlo calibration (ignored with `--data`).
    pub n: usize,
    pub x: f64,
    pub h1: f64,
    pub kernel: KernelShape,
    pub sigma: f64,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        CalibrateConfig {
            method: Method::Theoretical,
            p: 1,
            r: 1.0,
            alpha: 1.0,
            u: 1.5,
            k: 5,
            mu: 0.1,
            replicates: 10_000,
            n: 200,
            x: 0.5,
            h1: 0.03,
            kernel: KernelShape::Rectangular,
            sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskConfig {
    pub scenario: String,
    /// Overrides the scenario's replicate count.
    pub replicates: Option<usize>,
    /// Bias budget defining the oracle scale.
    pub delta_budget: f64,
    pub cv: Method,
    pub mu: f64,
    pub calibration_replicates: usize,
}

impl Default for RiskConfig {
    fn default() -> Self {
        RiskConfig {
            scenario: "parametric-linear".into(),
            replicates: None,
            delta_budget: 1.0,
            cv: Method::Theoretical,
            mu: 0.1,
            calibration_replicates: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComplexityAction {
    Exact,
    Asymptotic,
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComplexityConfig {
    /// Field name, e.g. `brownian-bridge`, `pycke:2`, `geometric:0.5`.
    pub field: String,
    pub action: ComplexityAction,
    pub epsilon: f64,
    pub d: usize,
    pub d_min: usize,
    pub d_max: usize,
    /// Truncation length; the field's default when absent.
    pub m: Option<usize>,
    /// DFS node budget.
    pub budget: u64,
}

impl Default for ComplexityConfig {
    fn default() -> Self {
        ComplexityConfig {
            field: "brownian-bridge".into(),
            action: ComplexityAction::Exact,
            epsilon: 0.5,
            d: 3,
            d_min: 1,
            d_max: 6,
            m: None,
            budget: lpa_core::complexity::enumerate::DEFAULT_BUDGET,
        }
    }
}

/// Parses TOML text, applies `key.path=value` overrides, and resolves defaults.
pub fn load(text: Option<&str>, overrides: &[String]) -> CliResult<RunConfig> {
    let mut table: toml::Table = match text {
        Some(t) => t.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?,
        None => toml::Table::new(),
    };
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override `{item}` is not of the form key=value")))?;
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        set_path(&mut table, key.trim(), value)?;
    }
    toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> CliResult<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| CliError::Config(format!("empty key in `{key}`")))?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> CliResult<()> {
    if cond {
        Ok(())
    } else {
        Err(CliError::Validation(msg()))
    }
}

fn check_alpha(name: &str, alpha: f64) -> CliResult<()> {
    check(alpha > 0.0 && alpha <= 1.0, || format!("{name} = {alpha} must lie in (0, 1]"))
}

fn check_positive(name: &str, v: f64) -> CliResult<()> {
    check(v > 0.0 && v.is_finite(), || format!("{name} = {v} must be positive"))
}

impl EstimateConfig {
    pub fn validate(&self) -> CliResult<()> {
        check(self.p >= 1, || "estimate.p must be at least 1".into())?;
        check(self.k >= 2, || format!("estimate.K = {} must be at least 2", self.k))?;
        check(self.u > 1.0, || format!("estimate.u = {} must exceed 1", self.u))?;
        check_positive("estimate.h1", self.h1)?;
        check(!self.points.is_empty(), || "estimate.points must not be empty".into())?;
        for &x in &self.points {
            check((0.0..=1.0).contains(&x), || format!("estimate.points entry {x} outside [0, 1]"))?;
        }
        check_positive("estimate.cv.r", self.cv.r)?;
        check_alpha("estimate.cv.alpha", self.cv.alpha)?;
        check(self.cv.mu > 0.0 && self.cv.mu < 0.25, || format!("estimate.cv.mu = {} outside (0, 1/4)", self.cv.mu))?;
        if self.cv.source == CvSource::File {
            check(self.cv.file.is_some(), || "estimate.cv.file is required when source = \"file\"".into())?;
        }
        if self.cv.source == CvSource::MonteCarlo {
            check(self.cv.replicates >= 2, || "estimate.cv.replicates must be at least 2".into())?;
        }
        Ok(())
    }
}

impl CalibrateConfig {
    pub fn validate(&self) -> CliResult<()> {
        check(self.p >= 1, || "calibrate.p must be at least 1".into())?;
        check_positive("calibrate.r", self.r)?;
        check_alpha("calibrate.alpha", self.alpha)?;
        check(self.u > 1.0, || format!("calibrate.u = {} must exceed 1", self.u))?;
        check(self.k >= 2, || format!("calibrate.K = {} must be at least 2", self.k))?;
        match self.method {
            Method::Theoretical => {
                check(self.mu > 0.0 && self.mu < 0.25, || format!("calibrate.mu = {} outside (0, 1/4)", self.mu))
            }
            Method::MonteCarlo => {
                check(self.replicates >= 2, || "calibrate.replicates must be at least 2".into())?;
                check((0.0..=1.0).contains(&self.x), || format!("calibrate.x = {} outside [0, 1]", self.x))?;
                check_positive("calibrate.h1", self.h1)?;
                check_positive("calibrate.sigma", self.sigma)
            }
        }
    }
}

impl RiskConfig {
    pub fn validate(&self) -> CliResult<()> {
        if let Some(r) = self.replicates {
            check(r >= 1, || "risk.replicates must be at least 1".into())?;
        }
        check_positive("risk.delta_budget", self.delta_budget)?;
        check(self.mu > 0.0 && self.mu < 0.25, || format!("risk.mu = {} outside (0, 1/4)", self.mu))?;
        check(self.calibration_replicates >= 2, || "risk.calibration_replicates must be at least 2".into())
    }
}

impl ComplexityConfig {
    pub fn validate(&self) -> CliResult<()> {
        check(self.epsilon > 0.0 && self.epsilon < 1.0, || {
            format!("complexity.epsilon = {} outside (0, 1)", self.epsilon)
        })?;
        match self.action {
            ComplexityAction::Table => {
                check(self.d_min >= 1, || "complexity.d_min must be at least 1".into())?;
                check(self.d_max >= self.d_min, || "complexity.d_max must be at least d_min".into())
            }
            _ => check(self.d >= 1, || format!("complexity.d = {} must be at least 1", self.d)),
        }?;
        if let Some(m) = self.m {
            check(m >= 2, || "complexity.m must be at least 2".into())?;
        }
        check(self.budget >= 1, || "complexity.budget must be positive".into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_from_empty_text() {
        assert_eq!(load(None, &[]).unwrap(), RunConfig::default());
        assert_eq!(load(Some(""), &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn overrides_apply() {
        let cfg = load(
            Some("[complexity]\nfield = \"geometric:0.5\"\n"),
            &["complexity.d=10".into(), "complexity.action=asymptotic".into(), "seed=7".into()],
        )
        .unwrap();
        assert_eq!(cfg.complexity.d, 10);
        assert_eq!(cfg.complexity.action, ComplexityAction::Asymptotic);
        assert_eq!(cfg.complexity.field, "geometric:0.5");
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(load(Some("[estimate]\nbandwidth = 3\n"), &[]), Err(CliError::Config(_))));
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = CalibrateConfig { alpha: 0.0, ..CalibrateConfig::default() };
        assert!(c.validate().is_err());
        c.alpha = 0.5;
        assert!(c.validate().is_ok());
        let x = ComplexityConfig { d: 0, ..ComplexityConfig::default() };
        assert!(x.validate().is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(load(Some(&text), &[]).unwrap(), cfg);
    }
}
