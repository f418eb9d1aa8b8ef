use serde::{Deserialize, Serialize};

use super::functions::TestFunction;
use crate::design::{build_ladder, DesignGrid, KernelShape, LocalizationLadder};
use crate::error::{invalid, Error, Result};
use crate::local_model::{Basis, LocalModel, NoiseModel};

/// How the true noise deviates from the working noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseSpec {
    /// Working level `sigma`, true level `sigma0`, both constant.
    Homogeneous { sigma: f64, sigma0: f64 },
    /// Working level `sigma`; true variances `sigma^2 (1 + delta sin(7.3 i))`.
    Wavy { sigma: f64, delta: f64 },
}

impl NoiseSpec {
    pub fn build(&self, n: usize) -> Result<NoiseModel<f64>> {
        match *self {
            NoiseSpec::Homogeneous { sigma, sigma0 } => {
                if !(sigma > 0.0 && sigma0 > 0.0) {
                    return Err(invalid("sigma", "noise levels must be positive"));
                }
                NoiseModel::homogeneous(n, sigma, sigma0)
            }
            NoiseSpec::Wavy { sigma, delta } => {
                if !(sigma > 0.0) {
                    return Err(invalid("sigma", "noise level must be positive"));
                }
                let s2 = sigma * sigma;
                let true_var = (0..n).map(|i| s2 * (1.0 + delta * (7.3 * i as f64).sin())).collect();
                NoiseModel::new(vec![s2; n], true_var, delta)
            }
        }
    }
}

/// A complete simulation setting on an equidistant grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationScenario {
    pub name: String,
    pub truth: TestFunction,
    pub n: usize,
    pub x: f64,
    #[serde(default)]
    pub kernel: KernelShape,
    pub h1: f64,
    pub u: f64,
    #[serde(rename = "K")]
    pub scales: usize,
    pub p: usize,
    pub noise: NoiseSpec,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default = "default_r")]
    pub r: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Reference parameter; defaults to the Taylor coefficients of the truth at `x`.
    #[serde(default)]
    pub theta_ref: Option<Vec<f64>>,
}

fn default_r() -> f64 {
    1.0
}

fn default_alpha() -> f64 {
    1.0
}

/// Everything derived from a scenario that simulations need.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub grid: DesignGrid<f64>,
    pub ladder: LocalizationLadder<f64>,
    pub basis: Basis,
    pub noise: NoiseModel<f64>,
    pub model: LocalModel<f64>,
    pub f_values: Vec<f64>,
    pub theta_ref: Vec<f64>,
}

impl Prepared {
    pub fn true_sd(&self) -> Vec<f64> {
        self.noise.true_var().iter().map(|v| v.sqrt()).collect()
    }
}

impl SimulationScenario {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(invalid("replicates", "must be at least 1"));
        }
        if self.n < 2 {
            return Err(invalid("n", "grid needs at least two points"));
        }
        if self.p == 0 {
            return Err(invalid("p", "must be at least 1"));
        }
        if !(self.r > 0.0) {
            return Err(invalid("r", "must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(invalid("alpha", "must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn prepare(&self) -> Result<Prepared> {
        self.validate()?;
        let grid = DesignGrid::equidistant(self.n)?;
        let ladder = build_ladder(&grid, self.x, self.kernel, self.h1, self.u, self.scales, self.p)?;
        let basis = Basis::new(self.p)?;
        let noise = self.noise.build(self.n)?;
        let model = LocalModel::new(&ladder, basis, &noise)?;
        let f_values = self.truth.values(grid.points());
        let theta_ref = match &self.theta_ref {
            Some(t) if t.len() != self.p => return Err(Error::DimensionMismatch { expected: self.p, found: t.len() }),
            Some(t) => t.clone(),
            None => self
                .truth
                .taylor(self.x, self.p)
                .ok_or_else(|| invalid("theta_ref", "truth has no Taylor expansion at x; supply theta_ref"))?,
        };
        Ok(Prepared { grid, ladder, basis, noise, model, f_values, theta_ref })
    }

    /// Built-in scenarios addressable by name.
    pub fn named(name: &str) -> Result<Self> {
        let base = SimulationScenario {
            name: name.to_string(),
            truth: TestFunction::Linear { intercept: 1.0, slope: 2.0 },
            n: 200,
            x: 0.5,
            kernel: KernelShape::Rectangular,
            h1: 0.03,
            u: 1.4,
            scales: 6,
            p: 2,
            noise: NoiseSpec::Homogeneous { sigma: 1.0, sigma0: 1.0 },
            replicates: 20_000,
            seed: 1,
            r: 1.0,
            alpha: 1.0,
            theta_ref: None,
        };
        let s = match name {
            "parametric-linear" => base,
            "constant" => SimulationScenario { truth: TestFunction::Constant { value: 0.7 }, p: 1, ..base },
            "kink" => SimulationScenario {
                truth: TestFunction::Kink { location: 0.56, value: 0.0, left_slope: 0.0, right_slope: 12.0 },
                ..base
            },
            "sine" => SimulationScenario { truth: TestFunction::Sine { amplitude: 1.0, omega: 6.0 }, ..base },
            "holder" => SimulationScenario {
                truth: TestFunction::Holder { beta: 2.0, center: 0.5, amplitude: 10.0 },
                ..base
            },
            "misspecified" => SimulationScenario { noise: NoiseSpec::Wavy { sigma: 1.0, delta: 0.2 }, ..base },
            other => return Err(invalid("scenario", format!("unknown scenario `{other}`"))),
        };
        Ok(s)
    }

    pub fn names() -> &'static [&'static str] {
        &["parametric-linear", "constant", "kink", "sine", "holder", "misspecified"]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_scenarios_prepare() {
        for name in SimulationScenario::names() {
            let s = SimulationScenario::named(name).unwrap();
            let prep = s.prepare().unwrap();
            assert_eq!(prep.theta_ref.len(), s.p);
            assert_eq!(prep.model.scales(), s.scales);
        }
        assert!(SimulationScenario::named("nope").is_err());
    }

    #[test]
    fn wavy_noise_respects_delta() {
        let noise = NoiseSpec::Wavy { sigma: 2.0, delta: 0.3 }.build(50).unwrap();
        assert!(noise.effective_delta() <= 0.3 + 1e-12);
    }

    #[test]
    fn zero_replicates_rejected() {
        let mut s = SimulationScenario::named("kink").unwrap();
        s.replicates = 0;
        assert!(s.prepare().is_err());
    }
}
