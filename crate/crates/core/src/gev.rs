//! Generalized extreme-value margins.
//!
//! A GEV(μ, σ, ξ) variable `Z*` maps to unit Fréchet through
//! `Z = {1 + ξ(Z* − μ)/σ}^{1/ξ}` and back through `Z* = μ + σ(Z^ξ − 1)/ξ`.
//! Near `ξ = 0` both maps switch to the Gumbel limit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shapes smaller than this in magnitude use the Gumbel formulas.
pub const GUMBEL_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GevParams {
    pub mu: f64,
    pub sigma: f64,
    pub xi: f64,
}

impl GevParams {
    pub fn new(mu: f64, sigma: f64, xi: f64) -> Result<Self> {
        if !(sigma > 0.0) || !mu.is_finite() || !sigma.is_finite() || !xi.is_finite() {
            return Err(Error::domain(format!("invalid GEV parameters ({mu}, {sigma}, {xi})")));
        }
        Ok(GevParams { mu, sigma, xi })
    }

    /// GEV(1, 1, 1), which is exactly unit Fréchet.
    pub const UNIT_FRECHET: GevParams = GevParams { mu: 1.0, sigma: 1.0, xi: 1.0 };

    /// Unit-Fréchet level to this GEV scale.
    pub fn from_frechet(&self, z: f64) -> f64 {
        if self.xi.abs() < GUMBEL_EPS {
            self.mu + self.sigma * z.ln()
        } else {
            self.mu + self.sigma * (z.powf(self.xi) - 1.0) / self.xi
        }
    }

    /// This GEV scale to unit Fréchet; `None` outside the support.
    pub fn to_frechet(&self, x: f64) -> Option<f64> {
        let u = (x - self.mu) / self.sigma;
        if self.xi.abs() < GUMBEL_EPS {
            let z = u.exp();
            return (z > 0.0 && z.is_finite()).then_some(z);
        }
        let t = 1.0 + self.xi * u;
        if !(t > 0.0) {
            return None;
        }
        let z = t.powf(1.0 / self.xi);
        (z > 0.0 && z.is_finite()).then_some(z)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self.to_frechet(x) {
            Some(z) => (-1.0 / z).exp(),
            None if self.xi > 0.0 => 0.0,
            None => 1.0,
        }
    }

    /// Log density; `-inf` outside the support.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        let u = (x - self.mu) / self.sigma;
        if self.xi.abs() < GUMBEL_EPS {
            return -self.sigma.ln() - u - (-u).exp();
        }
        let t = 1.0 + self.xi * u;
        if !(t > 0.0) {
            return f64::NEG_INFINITY;
        }
        let lt = t.ln();
        -self.sigma.ln() - (1.0 + 1.0 / self.xi) * lt - (-lt / self.xi).exp()
    }

    pub fn quantile(&self, p: f64) -> f64 {
        self.from_frechet(-1.0 / p.ln())
    }
}
