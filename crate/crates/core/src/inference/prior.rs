use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Independent priors: `α ~ Unif(0, 1)` for every internal node and
/// `τ ~ (h_max / 2) · Beta(2, 5)` for every leaf bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub h_max: f64,
}

impl Prior {
    pub fn new(h_max: f64) -> Result<Self> {
        if h_max > 0.0 && h_max.is_finite() {
            Ok(Prior { h_max })
        } else {
            Err(Error::domain(format!("h_max = {h_max} must be positive")))
        }
    }

    pub fn tau_upper(&self) -> f64 {
        0.5 * self.h_max
    }

    pub fn log_alpha(&self, alpha: f64) -> f64 {
        if alpha > 0.0 && alpha < 1.0 {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Normalized log density of the scaled Beta(2, 5).
    pub fn log_tau(&self, tau: f64) -> f64 {
        let c = self.tau_upper();
        let x = tau / c;
        if !(x > 0.0 && x < 1.0) {
            return f64::NEG_INFINITY;
        }
        // 1 / B(2, 5) = 30
        30f64.ln() + x.ln() + 4.0 * (1.0 - x).ln() - c.ln()
    }
}
