use crate::error::{Error, Result};
use crate::gev::{GevParams, GUMBEL_EPS};
use crate::kernel::{KernelBasis, KnotGrid, Site};
use crate::math::log_sum_exp;
use crate::tree::DependenceTree;

use super::mcmc::McmcState;

/// Log density of one unit-Fréchet observation `z` given `S = ϑ^{1/p}`:
/// `log S − log p − (1/p + 1) log z − S z^{−1/p}`.
#[inline]
pub fn cell_log_density(z: f64, s: f64, p: f64) -> f64 {
    let lz = z.ln();
    s.ln() - p.ln() - (1.0 / p + 1.0) * lz - s * (-lz / p).exp()
}

/// Conditional log-likelihood of the data given the latent field in `state`,
/// recomputed from scratch.
///
/// `values` follows the leaf-major sample layout with `NaN` for missing
/// cells. With `margins` (one per leaf and site) the values are on the GEV
/// scale and each cell is GEV(μ*, σ*, ξ*) with `μ* = μ + σ(ϑ^ξ − 1)/ξ`,
/// `σ* = pσϑ^ξ`, `ξ* = pξ`; without, they are unit Fréchet.
pub fn log_conditional_likelihood(
    state: &McmcState,
    tree: &DependenceTree,
    grid: &KnotGrid,
    sites: &[Site],
    values: &[f64],
    margins: Option<&[GevParams]>,
) -> Result<f64> {
    let (k_count, d_count, n) = (tree.n_leaves(), sites.len(), state.n_rep);
    let l_count = grid.len();
    if values.len() != k_count * d_count * n
        || state.alphas.len() != tree.n_nodes()
        || state.taus.len() != k_count
        || state.n_knots != l_count
    {
        return Err(Error::Structure("state, tree, sites and values disagree in size".into()));
    }
    if let Some(m) = margins {
        if m.len() != k_count * d_count {
            return Err(Error::Structure("need one margin per (leaf, site)".into()));
        }
    }
    let tree = tree.with_parameters(&state.alphas, &state.taus)?;
    let mut total = 0.0;
    let mut log_b = vec![0.0; l_count];
    for k in 0..k_count {
        let p = tree.path_product_of(k);
        let exps = tree.amplitude_exponents(k);
        let path = &tree.leaves()[k].path;
        let log_w = KernelBasis::new(grid, state.taus[k])?.log_weight_table(sites);
        for r in 0..n {
            for (l, b) in log_b.iter_mut().enumerate() {
                *b = path.iter().zip(&exps).map(|(&j, e)| e * state.amplitude(r, j, l).ln()).sum();
            }
            for d in 0..d_count {
                let x = values[(k * d_count + d) * n + r];
                if x.is_nan() {
                    continue;
                }
                // log S = log Σ_l B_l ω_l^{1/p}
                let log_s = log_sum_exp(
                    log_b.iter().zip(&log_w[d * l_count..(d + 1) * l_count]).map(|(b, w)| b + w / p),
                );
                total += match margins {
                    None => cell_log_density(x, log_s.exp(), p),
                    Some(m) => conditional_gev(&m[k * d_count + d], p * log_s, p).ln_pdf(x),
                };
            }
        }
    }
    Ok(total)
}

/// Conditional GEV law of a cell with margins `g`, smooth process `log ϑ`
/// and path product `p`.
fn conditional_gev(g: &GevParams, log_theta: f64, p: f64) -> GevParams {
    if g.xi.abs() < GUMBEL_EPS {
        GevParams { mu: g.mu + g.sigma * log_theta, sigma: p * g.sigma, xi: 0.0 }
    } else {
        let theta_xi = (g.xi * log_theta).exp();
        GevParams { mu: g.mu + g.sigma / g.xi * (theta_xi - 1.0), sigma: p * g.sigma * theta_xi, xi: p * g.xi }
    }
}
