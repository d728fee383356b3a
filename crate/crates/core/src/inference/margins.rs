//! Per-cell GEV fits by maximum likelihood and the transform to unit Fréchet.

use argmin::core::{CostFunction, Executor, State, TerminationReason};
use argmin::solver::neldermead::NelderMead;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gev::GevParams;
use crate::kernel::Site;

use super::data::MaximaData;

/// Fewer replicates than this trigger a warning.
pub const MIN_REPLICATES: usize = 15;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const PENALTY: f64 = 1e300;

/// Maximum-likelihood GEV fit of one series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevFit {
    pub params: GevParams,
    pub neg_log_lik: f64,
    pub converged: bool,
}

struct NegLogLik<'a> {
    x: &'a [f64],
}

impl CostFunction for NegLogLik<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let g = GevParams { mu: p[0], sigma: p[1].exp(), xi: p[2] };
        let ll: f64 = self.x.iter().map(|&v| g.ln_pdf(v)).sum();
        Ok(if ll.is_finite() { -ll } else { PENALTY })
    }
}

fn nelder_mead(x: &[f64], start: [f64; 3], step: [f64; 3]) -> Option<(Vec<f64>, f64, bool)> {
    let mut simplex = vec![start.to_vec()];
    for i in 0..3 {
        let mut v = start.to_vec();
        v[i] += step[i];
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex).with_sd_tolerance(1e-10).ok()?;
    let res = Executor::new(NegLogLik { x }, solver).configure(|s| s.max_iters(4000)).run().ok()?;
    let state = res.state();
    let best = state.get_best_param()?.clone();
    let converged = matches!(state.get_termination_reason(), Some(TerminationReason::SolverConverged));
    Some((best, state.get_best_cost(), converged))
}

/// Fits GEV(μ, σ, ξ) to `x` by maximizing the likelihood over
/// `(μ, log σ, ξ)` from a few moment-based starts. `NaN` entries are ignored.
pub fn fit_gev(x: &[f64]) -> GevFit {
    let obs: Vec<f64> = x.iter().copied().filter(|v| !v.is_nan()).collect();
    let failed = GevFit { params: GevParams::UNIT_FRECHET, neg_log_lik: f64::INFINITY, converged: false };
    let n = obs.len() as f64;
    if obs.len() < 3 || obs.iter().any(|v| !v.is_finite()) {
        return failed;
    }
    let mean = obs.iter().sum::<f64>() / n;
    let sd = (obs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if !(sd > 1e-12 * mean.abs().max(1.0)) {
        return failed;
    }
    let sigma0 = sd * 6f64.sqrt() / std::f64::consts::PI;
    let mu0 = mean - EULER_GAMMA * sigma0;
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for xi0 in [0.1, -0.2, 0.5] {
        if let Some(cand) = nelder_mead(&obs, [mu0, sigma0.ln(), xi0], [0.5 * sigma0, 0.3, 0.2]) {
            if best.as_ref().is_none_or(|b| cand.1 < b.1) {
                best = Some(cand);
            }
        }
    }
    match best {
        Some((p, nll, converged)) if nll < PENALTY => GevFit {
            params: GevParams { mu: p[0], sigma: p[1].exp(), xi: p[2] },
            neg_log_lik: nll,
            converged: converged && p.iter().all(|v| v.is_finite()),
        },
        _ => failed,
    }
}

/// Fit of one (leaf, site) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginFit {
    pub leaf: String,
    pub site: usize,
    pub n_obs: usize,
    pub fit: GevFit,
}

/// Fitted margins for every cell, the data transformed to unit Fréchet, and
/// warnings. Cells whose fit failed are missing in `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginReport {
    pub fits: Vec<MarginFit>,
    pub data: MaximaData,
    pub warnings: Vec<String>,
}

impl MarginReport {
    /// Fitted parameters in leaf-major, then site order.
    pub fn params(&self) -> Vec<GevParams> {
        self.fits.iter().map(|f| f.fit.params).collect()
    }
}

/// Fits a GEV law to every (leaf, site) cell of GEV-scale maxima laid out
/// leaf-major, then site, then replicate, and maps each cell to unit Fréchet.
pub fn fit_margins_gev(leaves: &[String], sites: &[Site], n_rep: usize, values: &[f64]) -> Result<MarginReport> {
    let d_count = sites.len();
    if values.len() != leaves.len() * d_count * n_rep {
        return Err(Error::Structure(format!(
            "{} values for {} leaves x {} sites x {} replicates",
            values.len(),
            leaves.len(),
            d_count,
            n_rep
        )));
    }
    let mut fits = Vec::with_capacity(leaves.len() * d_count);
    let mut warnings = Vec::new();
    let mut out = vec![f64::NAN; values.len()];
    for (k, leaf) in leaves.iter().enumerate() {
        for d in 0..d_count {
            let cell = &values[(k * d_count + d) * n_rep..(k * d_count + d + 1) * n_rep];
            let n_obs = cell.iter().filter(|v| !v.is_nan()).count();
            if n_obs < MIN_REPLICATES {
                warnings.push(format!("{leaf} site {d}: only {n_obs} replicates (fewer than {MIN_REPLICATES})"));
            }
            let fit = fit_gev(cell);
            if fit.converged {
                for (r, &x) in cell.iter().enumerate() {
                    if let Some(z) = fit.params.to_frechet(x) {
                        out[(k * d_count + d) * n_rep + r] = z;
                    }
                }
            } else {
                warnings.push(format!("{leaf} site {d}: GEV fit did not converge, cell excluded"));
            }
            fits.push(MarginFit { leaf: leaf.clone(), site: d, n_obs, fit });
        }
    }
    let data = MaximaData::new(leaves.to_vec(), sites.to_vec(), n_rep, out)?;
    Ok(MarginReport { fits, data, warnings })
}
