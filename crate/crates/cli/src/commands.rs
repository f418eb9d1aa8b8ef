//! The four subcommands. Each validates its section of the configuration,
//! calls into `lpa_core`, and returns a serializable result.

use std::path::Path;

use serde::{Deserialize, Serialize};

use lpa_core::calibration::{calibrate_mc, calibrate_model, theoretical_cv, CriticalValues, Method};
use lpa_core::complexity::{
    asymptotic_n, catalog, catalog_default, convergence_table, exact_count, moments, ComplexityQuery, ExactOptions,
    Field, MomentSummary,
};
use lpa_core::design::build_ladder;
use lpa_core::lepski::select;
use lpa_core::local_model::derivative_estimates;
use lpa_core::risk_lab::{invariant_checks, oracle_report, CheckOutcome, OracleReport, SimulationScenario};
use lpa_core::{Basis, DesignGrid, LocalModel, NoiseModel};

use crate::config::{ComplexityAction, CvSource, RunConfig};
use crate::data::{read_observations, Observations};
use crate::error::{CliError, CliResult};
use crate::output::{Cell, Table, Tabular};

fn log(cfg: &RunConfig, msg: impl AsRef<str>) {
    if cfg.verbose {
        eprintln!("lpa: {}", msg.as_ref());
    }
}

// ---------------------------------------------------------------- estimate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub x: f64,
    pub k_hat: usize,
    pub h_hat: f64,
    pub theta_hat: Vec<f64>,
    pub f_hat: f64,
    /// `f^{(j)}(x)` for `j = 0..p-1`.
    pub derivatives: Vec<f64>,
    /// Row `l` holds `T_{l,m}` for `m = l+1..K`.
    #[serde(rename = "T_triangle")]
    pub t_triangle: Vec<Vec<f64>>,
    pub thresholds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub n: usize,
    pub cv_method: Method,
    pub records: Vec<EstimateRecord>,
}

impl Tabular for EstimateResult {
    fn table(&self) -> Table {
        let p = self.records.first().map_or(0, |r| r.derivatives.len());
        let mut cols = vec!["x".to_string(), "k_hat".into(), "h_hat".into(), "f_hat".into()];
        cols.extend((0..p).map(|j| format!("derivative_{j}")));
        let mut t = Table { columns: cols, ..Table::default() };
        for r in &self.records {
            let mut row: Vec<Cell> = vec![r.x.into(), r.k_hat.into(), r.h_hat.into(), r.f_hat.into()];
            row.extend(r.derivatives.iter().map(|&v| Cell::from(v)));
            t.push(row);
        }
        t
    }
}

fn noise_model(spec: &str, obs: &Observations) -> CliResult<NoiseModel> {
    let n = obs.len();
    if spec == "column" {
        let sigma = obs
            .sigma
            .as_ref()
            .ok_or_else(|| CliError::Validation("estimate.noise = \"column\" needs a `sigma` column in the data".into()))?;
        let var: Vec<f64> = sigma.iter().map(|s| s * s).collect();
        return Ok(NoiseModel::new(var.clone(), var, 0.0)?);
    }
    let sigma = spec
        .strip_prefix("homoscedastic:")
        .and_then(|s| s.trim().parse::<f64>().ok())
        .filter(|s| *s > 0.0 && s.is_finite())
        .ok_or_else(|| {
            CliError::Validation(format!("estimate.noise = `{spec}`: expected `homoscedastic:SIGMA` or `column`"))
        })?;
    Ok(NoiseModel::homoscedastic(n, sigma)?)
}

/// Reads a critical-values file: either a bare record or a calibrate document.
pub fn read_critical_values(path: &Path) -> CliResult<CriticalValues> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Parse { line: e.line(), message: e.to_string() })?;
    if let Some(inner) = value.get_mut("result") {
        value = inner.take();
    }
    let cv: CriticalValues =
        serde_json::from_value(value).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    cv.validate()?;
    Ok(cv)
}

pub fn estimate(cfg: &RunConfig, data: Option<&Path>) -> CliResult<EstimateResult> {
    let ec = &cfg.estimate;
    ec.validate()?;
    let path = data.ok_or_else(|| CliError::Validation("estimate needs --data PATH".into()))?;
    let obs = read_observations(path)?.sorted();
    if obs.is_empty() {
        return Err(CliError::Validation(format!("{} holds no observations", path.display())));
    }
    let grid = DesignGrid::new(obs.x.clone())?;
    let noise = noise_model(&ec.noise, &obs)?;
    let basis = Basis::new(ec.p)?;
    let fixed_cv = match ec.cv.source {
        CvSource::Theoretical => Some(theoretical_cv(ec.p, ec.cv.r, ec.cv.alpha, ec.u, ec.k, ec.cv.mu)?),
        CvSource::File => {
            let cv = read_critical_values(Path::new(ec.cv.file.as_deref().unwrap_or_default()))?;
            if cv.k != ec.k || cv.p != ec.p {
                return Err(CliError::Validation(format!(
                    "critical values are for p = {}, K = {}; estimate uses p = {}, K = {}",
                    cv.p, cv.k, ec.p, ec.k
                )));
            }
            Some(cv)
        }
        CvSource::MonteCarlo => None,
    };
    let mut records = Vec::with_capacity(ec.points.len());
    for &x in &ec.points {
        log(cfg, format!("estimating at x = {x}"));
        let ladder = build_ladder(&grid, x, ec.kernel, ec.h1, ec.u, ec.k, ec.p)?;
        let cv = match &fixed_cv {
            Some(cv) => cv.clone(),
            None => calibrate_mc(&ladder, basis, &noise, ec.cv.r, ec.cv.alpha, ec.cv.replicates, cfg.seed)?,
        };
        let model = LocalModel::new(&ladder, basis, &noise)?;
        let fit = select(model.fit_all(&obs.y), &cv.thresholds)?;
        let est = &fit.estimates[fit.k_hat - 1];
        let derivatives = derivative_estimates(est, basis);
        records.push(EstimateRecord {
            x,
            k_hat: fit.k_hat,
            h_hat: ladder.bandwidth(fit.k_hat).expect("kernel ladder has bandwidths"),
            f_hat: derivatives[0],
            theta_hat: fit.adaptive_theta.clone(),
            derivatives,
            t_triangle: fit.statistics.to_rows(),
            thresholds: cv.thresholds,
        });
    }
    let cv_method = fixed_cv.map_or(Method::MonteCarlo, |c| c.method);
    Ok(EstimateResult { n: obs.len(), cv_method, records })
}

// --------------------------------------------------------------- calibrate

impl Tabular for CriticalValues {
    fn table(&self) -> Table {
        let mut t = Table::new(&["k", "threshold"]);
        t.notes.push(format!(
            "method: {}, p: {}, r: {}, alpha: {}, K: {}",
            serde_json::to_string(&self.method).unwrap_or_default().trim_matches('"'),
            self.p,
            self.r,
            self.alpha,
            self.k
        ));
        for (j, &z) in self.thresholds.iter().enumerate() {
            t.push(vec![(j + 1).into(), z.into()]);
        }
        t
    }
}

pub fn calibrate(cfg: &RunConfig, data: Option<&Path>) -> CliResult<CriticalValues> {
    let c = &cfg.calibrate;
    c.validate()?;
    match c.method {
        Method::Theoretical => Ok(theoretical_cv(c.p, c.r, c.alpha, c.u, c.k, c.mu)?),
        Method::MonteCarlo => {
            let grid = match data {
                Some(path) => DesignGrid::new(read_observations(path)?.sorted().x)?,
                None => DesignGrid::equidistant(c.n)?,
            };
            let ladder = build_ladder(&grid, c.x, c.kernel, c.h1, c.u, c.k, c.p)?;
            let noise = NoiseModel::homoscedastic(grid.len(), c.sigma)?;
            log(cfg, format!("calibrating with {} replicates", c.replicates));
            let model = LocalModel::new(&ladder, Basis::new(c.p)?, &noise)?;
            Ok(calibrate_model(&model, Some(c.u), c.r, c.alpha, c.replicates, cfg.seed)?)
        }
    }
}

// -------------------------------------------------------------------- risk

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskResult {
    pub scenario: SimulationScenario,
    pub critical_values: CriticalValues,
    /// Absent when the oracle experiment could not run; see `oracle_error`.
    pub oracle: Option<OracleReport>,
    pub oracle_error: Option<String>,
    pub checks: Vec<CheckOutcome>,
    pub all_passed: bool,
}

impl Tabular for RiskResult {
    fn table(&self) -> Table {
        let mut t = Table::new(&["k", "delta", "k_hat_count", "threshold"]);
        if let Some(o) = &self.oracle {
            t.notes.push(format!(
                "oracle k*: {}, adaptive risk: {}, bound: {}, passed: {}",
                o.oracle_index,
                crate::output::fmt_real(o.adaptive_risk.mean),
                crate::output::fmt_real(o.bound_value),
                o.passed
            ));
        }
        if let Some(e) = &self.oracle_error {
            t.notes.push(format!("oracle: {e}"));
        }
        for c in &self.checks {
            t.notes.push(format!("check {}: {} ({})", c.name, if c.passed { "pass" } else { "FAIL" }, c.detail));
        }
        for k in 1..=self.scenario.scales {
            let delta = self.oracle.as_ref().map(|o| o.delta_profile[k - 1]);
            let count = self.oracle.as_ref().map(|o| o.k_hat_histogram[k - 1]);
            let z = self.critical_values.thresholds.get(k - 1).copied();
            t.push(vec![k.into(), delta.into(), count.into(), z.into()]);
        }
        t
    }
}

pub fn risk(cfg: &RunConfig) -> CliResult<RiskResult> {
    let rc = &cfg.risk;
    rc.validate()?;
    let mut scenario = SimulationScenario::named(&rc.scenario)?;
    scenario.seed = cfg.seed;
    if let Some(r) = rc.replicates {
        scenario.replicates = r;
    }
    let prep = scenario.prepare()?;
    let cv = match rc.cv {
        Method::Theoretical => {
            theoretical_cv(scenario.p, scenario.r, scenario.alpha, scenario.u, scenario.scales, rc.mu)?
        }
        Method::MonteCarlo => {
            log(cfg, "calibrating critical values");
            calibrate_model(
                &prep.model,
                Some(scenario.u),
                scenario.r,
                scenario.alpha,
                rc.calibration_replicates,
                cfg.seed ^ 0xca11b,
            )?
        }
    };
    log(cfg, format!("oracle experiment, {} replicates", scenario.replicates));
    let (oracle, oracle_error) = match oracle_report(&scenario, &cv, rc.delta_budget) {
        Ok(o) => (Some(o), None),
        Err(e @ lpa_core::Error::SmbViolatedAtFirstScale { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    log(cfg, "invariant checks");
    let checks = invariant_checks(&scenario, &prep, &cv)?;
    let all_passed = checks.iter().all(|c| c.passed) && oracle.as_ref().is_none_or(|o| o.passed);
    Ok(RiskResult { scenario, critical_values: cv, oracle, oracle_error, checks, all_passed })
}

// -------------------------------------------------------------- complexity

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityRow {
    pub d: usize,
    pub n_exact: Option<u64>,
    pub n_asymptotic: f64,
    pub ratio: Option<f64>,
    pub theta: Option<f64>,
    pub zeta: Option<f64>,
    /// `[lower, upper]` bounds on `n_exact` when the node budget ran out.
    pub partial: Option<[u64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub field: Field,
    pub epsilon: f64,
    pub action: ComplexityAction,
    pub truncation: usize,
    pub trace: f64,
    pub lattice_span: Option<f64>,
    pub moments: MomentSummary,
    pub q: f64,
    pub constant_k: f64,
    pub rows: Vec<ComplexityRow>,
}

impl Tabular for ComplexityReport {
    fn table(&self) -> Table {
        let mut t = Table::new(&["d", "n_exact", "n_asymptotic", "ratio", "theta", "zeta", "lower", "upper"]);
        t.notes.push(format!(
            "field: {}, epsilon: {}, explosion: {}, q: {}, K: {}",
            self.field.name(),
            self.epsilon,
            crate::output::fmt_real(self.moments.explosion),
            crate::output::fmt_real(self.q),
            crate::output::fmt_real(self.constant_k)
        ));
        for r in &self.rows {
            t.push(vec![
                r.d.into(),
                r.n_exact.into(),
                r.n_asymptotic.into(),
                r.ratio.into(),
                r.theta.into(),
                r.zeta.into(),
                r.partial.map(|p| p[0]).into(),
                r.partial.map(|p| p[1]).into(),
            ]);
        }
        t
    }
}

pub fn complexity(cfg: &RunConfig) -> CliResult<ComplexityReport> {
    let c = &cfg.complexity;
    c.validate()?;
    let field = Field::parse(&c.field)?;
    let seq = match c.m {
        Some(m) => catalog(field, m)?,
        None => catalog_default(field)?,
    };
    let summary = moments(&seq)?;
    let opts = ExactOptions { budget: c.budget, ..ExactOptions::default() };
    let d_ref = if c.action == ComplexityAction::Table { c.d_min } else { c.d };
    let base = asymptotic_n(&summary, seq.lattice, ComplexityQuery::new(c.epsilon, d_ref)?)?;
    let rows = match c.action {
        ComplexityAction::Exact => {
            log(cfg, format!("exact count at d = {}", c.d));
            let r = exact_count(&seq, ComplexityQuery::new(c.epsilon, c.d)?, opts)?;
            let n = r.n_exact.expect("exact count");
            vec![ComplexityRow {
                d: c.d,
                n_exact: Some(n),
                n_asymptotic: r.n_asymptotic,
                ratio: Some(n as f64 / r.n_asymptotic),
                theta: Some(r.theta_quantile),
                zeta: Some(r.zeta),
                partial: None,
            }]
        }
        ComplexityAction::Asymptotic => vec![ComplexityRow {
            d: c.d,
            n_exact: None,
            n_asymptotic: base.n_asymptotic,
            ratio: None,
            theta: Some(base.theta_quantile),
            zeta: Some(base.zeta),
            partial: None,
        }],
        ComplexityAction::Table => {
            log(cfg, format!("table for d = {}..={}", c.d_min, c.d_max));
            convergence_table(&seq, c.epsilon, c.d_min..=c.d_max, opts)?
                .into_iter()
                .map(|r| ComplexityRow {
                    d: r.d,
                    n_exact: r.n_exact,
                    n_asymptotic: r.n_asymptotic,
                    ratio: r.ratio,
                    theta: r.theta,
                    zeta: r.zeta,
                    partial: r.partial,
                })
                .collect()
        }
    };
    Ok(ComplexityReport {
        field,
        epsilon: c.epsilon,
        action: c.action,
        truncation: seq.len(),
        trace: seq.trace_full,
        lattice_span: seq.lattice.span(),
        moments: summary,
        q: base.q,
        constant_k: base.constant_k,
        rows,
    })
}
