//! Exact simulation of nested max-stable fields.
//!
//! Each replicate draws one positive stable amplitude per internal node and
//! knot. Leaf `k` with path product `p` composes its amplitudes along the
//! root path into `B_{k;l}` and forms the smooth process
//! `ϑ_k(s) = {Σ_l B_{k;l} ω_{k;l}(s)^{1/p}}^p`. The observed value is
//! `Z_k(s) = U_k(s) ϑ_k(s)` with independent Fréchet noise
//! `P(U ≤ u) = exp(-u^{-1/p})`. Margins are exactly unit Fréchet for any
//! number of knots.
//!
//! Sample arrays are laid out leaf-major, then site, then replicate:
//! `values[(leaf * D + site) * N + replicate]`.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dependence::leaf_log_weights;
use crate::error::{Error, Result, SupportViolation};
use crate::gev::GevParams;
use crate::kernel::{KernelBasis, KnotGrid, Site};
use crate::math::log_sum_exp;
use crate::rng::{self, Domain};
use crate::stable::{self, StableParam};
use crate::tree::DependenceTree;

/// One positive stable amplitude per internal node per knot, node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStableField {
    pub n_nodes: usize,
    pub n_knots: usize,
    pub values: Vec<f64>,
}

impl LatentStableField {
    #[inline]
    pub fn get(&self, node: usize, knot: usize) -> f64 {
        self.values[node * self.n_knots + knot]
    }
}

/// Independent PS(α_node) draws for every internal node and knot.
pub fn draw_latent<R: Rng + ?Sized>(tree: &DependenceTree, n_knots: usize, rng: &mut R) -> LatentStableField {
    let mut values = Vec::with_capacity(tree.n_nodes() * n_knots);
    for node in tree.nodes() {
        // alphas are validated when the tree is built
        let alpha = StableParam::new(node.alpha).expect("validated alpha");
        for _ in 0..n_knots {
            values.push(stable::sample_one(alpha, rng));
        }
    }
    LatentStableField { n_nodes: tree.n_nodes(), n_knots, values }
}

/// `log B_{leaf;l}` for every knot.
pub(crate) fn log_composed_amplitudes(
    tree: &DependenceTree,
    latent: &LatentStableField,
    leaf: usize,
    out: &mut [f64],
) {
    let path = &tree.leaves()[leaf].path;
    let exps = tree.amplitude_exponents(leaf);
    for (l, o) in out.iter_mut().enumerate() {
        *o = path.iter().zip(&exps).map(|(&n, e)| e * latent.get(n, l).ln()).sum();
    }
}

fn check_latent(tree: &DependenceTree, grid: &KnotGrid, latent: &LatentStableField) -> Result<()> {
    if latent.n_nodes != tree.n_nodes()
        || latent.n_knots != grid.len()
        || latent.values.len() != latent.n_nodes * latent.n_knots
    {
        return Err(Error::Structure(format!(
            "latent field is {}x{}, model needs {} nodes x {} knots",
            latent.n_nodes,
            latent.n_knots,
            tree.n_nodes(),
            grid.len()
        )));
    }
    Ok(())
}

/// The smooth process `ϑ_leaf(s)` for a given latent field.
pub fn smooth_process(
    tree: &DependenceTree,
    grid: &KnotGrid,
    latent: &LatentStableField,
    leaf: &str,
    s: Site,
) -> Result<f64> {
    check_latent(tree, grid, latent)?;
    let k = tree.leaf_index(leaf)?;
    let p = tree.path_product_of(k);
    let mut log_b = vec![0.0; grid.len()];
    log_composed_amplitudes(tree, latent, k, &mut log_b);
    let log_w = KernelBasis::new(grid, tree.leaves()[k].tau)?.log_weights(&s);
    let log_s = log_sum_exp(log_b.iter().zip(&log_w).map(|(b, w)| b + w / p));
    Ok((p * log_s).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    UnitFrechet,
    Gev,
}

impl Scale {
    pub fn as_str(self) -> &'static str {
        match self {
            Scale::UnitFrechet => "unit_frechet",
            Scale::Gev => "gev",
        }
    }
}

/// Simulated values on a leaf × site × replicate array.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxStableSample {
    pub leaves: Vec<String>,
    pub sites: Vec<Site>,
    pub n_rep: usize,
    pub values: Vec<f64>,
    pub scale: Scale,
    pub seed: u64,
}

impl MaxStableSample {
    #[inline]
    pub fn index(&self, leaf: usize, site: usize, rep: usize) -> usize {
        (leaf * self.sites.len() + site) * self.n_rep + rep
    }

    #[inline]
    pub fn get(&self, leaf: usize, site: usize, rep: usize) -> f64 {
        self.values[self.index(leaf, site, rep)]
    }

    /// All replicates of one (leaf, site) cell.
    pub fn cell(&self, leaf: usize, site: usize) -> &[f64] {
        let start = self.index(leaf, site, 0);
        &self.values[start..start + self.n_rep]
    }
}

/// Precomputed per-leaf quantities for repeated simulation.
pub(crate) struct SimPlan {
    /// `log ω / p`, `[leaf][d * L + l]`.
    scaled_log_w: Vec<Vec<f64>>,
    path_products: Vec<f64>,
    n_sites: usize,
    n_knots: usize,
}

impl SimPlan {
    pub(crate) fn new(tree: &DependenceTree, grid: &KnotGrid, sites: &[Site]) -> Result<Self> {
        let path_products: Vec<f64> = (0..tree.n_leaves()).map(|k| tree.path_product_of(k)).collect();
        let scaled_log_w = leaf_log_weights(tree, grid, sites)?
            .into_iter()
            .zip(&path_products)
            .map(|(w, p)| w.into_iter().map(|v| v / p).collect())
            .collect();
        Ok(SimPlan { scaled_log_w, path_products, n_sites: sites.len(), n_knots: grid.len() })
    }

    /// One replicate for the selected leaves, written `[leaf_pos * D + d]`.
    pub(crate) fn replicate<R: Rng + ?Sized>(
        &self,
        tree: &DependenceTree,
        leaves: &[usize],
        rng: &mut R,
        out: &mut [f64],
    ) {
        let latent = draw_latent(tree, self.n_knots, rng);
        let (d_count, l_count) = (self.n_sites, self.n_knots);
        let mut log_b = vec![0.0; l_count];
        for (pos, &k) in leaves.iter().enumerate() {
            log_composed_amplitudes(tree, &latent, k, &mut log_b);
            let p = self.path_products[k];
            let w = &self.scaled_log_w[k];
            for d in 0..d_count {
                let log_s = log_sum_exp(log_b.iter().zip(&w[d * l_count..(d + 1) * l_count]).map(|(b, w)| b + w));
                let e: f64 = Exp1.sample(rng);
                out[pos * d_count + d] = (p * (log_s - e.ln())).exp();
            }
        }
    }
}

/// `n_rep` independent replicates on the unit-Fréchet scale.
///
/// Replicate `r` uses its own stream derived from `seed`, so the output does
/// not depend on how rayon schedules the work.
pub fn simulate(
    tree: &DependenceTree,
    grid: &KnotGrid,
    sites: &[Site],
    n_rep: usize,
    seed: u64,
) -> Result<MaxStableSample> {
    if n_rep == 0 {
        return Err(Error::domain("need at least one replicate"));
    }
    if sites.is_empty() {
        return Err(Error::domain("need at least one site"));
    }
    let plan = SimPlan::new(tree, grid, sites)?;
    let leaves: Vec<usize> = (0..tree.n_leaves()).collect();
    let cells = leaves.len() * sites.len();
    let per_rep: Vec<Vec<f64>> = (0..n_rep)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::substream(seed, Domain::Simulation, r as u64);
            let mut out = vec![0.0; cells];
            plan.replicate(tree, &leaves, &mut rng, &mut out);
            out
        })
        .collect();
    let mut values = vec![0.0; cells * n_rep];
    for (r, rep) in per_rep.iter().enumerate() {
        for (cell, v) in rep.iter().enumerate() {
            values[cell * n_rep + r] = *v;
        }
    }
    Ok(MaxStableSample {
        leaves: tree.leaf_names(),
        sites: sites.to_vec(),
        n_rep,
        values,
        scale: Scale::UnitFrechet,
        seed,
    })
}

fn check_params(sample: &MaxStableSample, params: &[GevParams]) -> Result<()> {
    let cells = sample.leaves.len() * sample.sites.len();
    if params.len() != cells {
        return Err(Error::Structure(format!(
            "need one GEV parameter set per (leaf, site) cell: {} != {}",
            params.len(),
            cells
        )));
    }
    Ok(())
}

/// Maps a unit-Fréchet sample to GEV margins; `params[leaf * D + site]`.
pub fn to_gev(sample: &MaxStableSample, params: &[GevParams]) -> Result<MaxStableSample> {
    if sample.scale != Scale::UnitFrechet {
        return Err(Error::domain("to_gev expects a unit-Fréchet sample"));
    }
    check_params(sample, params)?;
    let n = sample.n_rep;
    let values = sample
        .values
        .iter()
        .enumerate()
        .map(|(i, z)| params[i / n].from_frechet(*z))
        .collect();
    Ok(MaxStableSample { values, scale: Scale::Gev, ..sample.clone() })
}

/// Maps GEV-scale data back to unit Fréchet, reporting every cell that
/// falls outside its support.
pub fn from_gev(sample: &MaxStableSample, params: &[GevParams]) -> Result<MaxStableSample> {
    if sample.scale != Scale::Gev {
        return Err(Error::domain("from_gev expects a GEV-scale sample"));
    }
    check_params(sample, params)?;
    let (n, d) = (sample.n_rep, sample.sites.len());
    let mut violations = Vec::new();
    let mut values = Vec::with_capacity(sample.values.len());
    for (i, x) in sample.values.iter().enumerate() {
        let cell = i / n;
        match params[cell].to_frechet(*x) {
            Some(z) => values.push(z),
            None => {
                violations.push(SupportViolation { leaf: cell / d, site: cell % d, replicate: i % n, value: *x });
                values.push(f64::NAN);
            }
        }
    }
    if !violations.is_empty() {
        return Err(Error::Support(violations));
    }
    Ok(MaxStableSample { values, scale: Scale::UnitFrechet, ..sample.clone() })
}
