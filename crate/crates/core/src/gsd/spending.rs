use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Error spending function `total * min(t^rho, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSpending {
    pub total: f64,
    pub rho: f64,
}

impl PowerSpending {
    pub fn new(total: f64, rho: f64) -> Self {
        Self { total, rho }
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else if t >= 1.0 {
            self.total
        } else {
            self.total * libm::pow(t, self.rho)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSpendingSpec {
    pub k_stages: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Alternative used for Type II spending.
    pub delta_alt: f64,
    pub f: PowerSpending,
    pub g: PowerSpending,
    /// Maximum information; the final decision information of the model when absent.
    pub i_max: Option<f64>,
}

impl Default for ErrorSpendingSpec {
    fn default() -> Self {
        Self {
            k_stages: 5,
            alpha: 0.025,
            beta: 0.2,
            delta_alt: 0.122,
            f: PowerSpending::new(0.025, 2.0),
            g: PowerSpending::new(0.2, 2.0),
            i_max: None,
        }
    }
}

impl ErrorSpendingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k_stages < 2 {
            return Err(invalid("at least two stages are required"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0 && self.beta > 0.0 && self.beta < 1.0) {
            return Err(invalid("alpha and beta must lie in (0, 1)"));
        }
        if !(self.delta_alt > 0.0) {
            return Err(invalid("delta_alt must be positive"));
        }
        if !(self.f.rho > 0.0 && self.g.rho > 0.0) {
            return Err(invalid("spending exponents must be positive"));
        }
        if libm::fabs(self.f.total - self.alpha) > 1e-12 || libm::fabs(self.g.total - self.beta) > 1e-12 {
            return Err(invalid("spending functions must reach alpha and beta at t = 1"));
        }
        if self.i_max.is_some_and(|i| !(i > 0.0)) {
            return Err(invalid("i_max must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_spending() {
        let f = PowerSpending::new(0.025, 2.0);
        assert_eq!(f.eval(0.0), 0.0);
        assert!((f.eval(0.2) - 0.001).abs() < 1e-15);
        assert_eq!(f.eval(1.3), 0.025);
        assert!(ErrorSpendingSpec::default().validate().is_ok());
    }
}
