use serde::{Deserialize, Serialize};

/// Regression functions used by simulation scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TestFunction {
    Constant { value: f64 },
    Linear { intercept: f64, slope: f64 },
    /// `amplitude * sin(omega * t)`.
    Sine { amplitude: f64, omega: f64 },
    /// Continuous piecewise-linear function with a slope change at `location`.
    Kink { location: f64, value: f64, left_slope: f64, right_slope: f64 },
    /// `amplitude * |t - center|^beta`.
    Holder { beta: f64, center: f64, amplitude: f64 },
}

impl TestFunction {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            TestFunction::Constant { value } => value,
            TestFunction::Linear { intercept, slope } => intercept + slope * t,
            TestFunction::Sine { amplitude, omega } => amplitude * (omega * t).sin(),
            TestFunction::Kink { location, value, left_slope, right_slope } => {
                let s = if t < location { left_slope } else { right_slope };
                value + s * (t - location)
            }
            TestFunction::Holder { beta, center, amplitude } => amplitude * (t - center).abs().powf(beta),
        }
    }

    /// `j`-th derivative at `t`; one-sided (from the right) at kinks.
    /// `None` where the derivative does not exist.
    pub fn derivative(&self, j: usize, t: f64) -> Option<f64> {
        if j == 0 {
            return Some(self.eval(t));
        }
        match *self {
            TestFunction::Constant { .. } => Some(0.0),
            TestFunction::Linear { slope, .. } => Some(if j == 1 { slope } else { 0.0 }),
            TestFunction::Sine { amplitude, omega } => {
                let phase = (omega * t) + j as f64 * std::f64::consts::FRAC_PI_2;
                Some(amplitude * omega.powi(j as i32) * phase.sin())
            }
            TestFunction::Kink { location, left_slope, right_slope, .. } => match j {
                1 => Some(if t < location { left_slope } else { right_slope }),
                _ => Some(0.0),
            },
            TestFunction::Holder { beta, center, amplitude } => {
                let d = t - center;
                let mut coef = amplitude;
                for i in 0..j {
                    coef *= beta - i as f64;
                }
                let jf = j as f64;
                if d == 0.0 {
                    let even_power = beta.fract() == 0.0 && (beta as i64) % 2 == 0;
                    return if jf < beta {
                        Some(0.0)
                    } else if jf == beta && even_power {
                        Some(coef)
                    } else if jf > beta && even_power {
                        Some(0.0)
                    } else {
                        None
                    };
                }
                Some(coef * d.abs().powf(beta - jf) * d.signum().powi(j as i32))
            }
        }
    }

    /// Taylor coefficients `(f(x), f'(x), ..., f^{(p-1)}(x))`, matching the
    /// factorially scaled basis.
    pub fn taylor(&self, x: f64, p: usize) -> Option<Vec<f64>> {
        (0..p).map(|j| self.derivative(j, x)).collect()
    }

    pub fn values(&self, points: &[f64]) -> Vec<f64> {
        points.iter().map(|&t| self.eval(t)).collect()
    }
}
