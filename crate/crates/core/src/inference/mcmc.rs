//! Metropolis-within-Gibbs sampler for the dependence parameters.
//!
//! One sweep updates, in this order:
//!
//! 1. every latent amplitude jointly with its auxiliary uniform
//!    (replicate-major, then internal node, then knot), with a random walk on
//!    `(log A, logit aux)`;
//! 2. every internal-node alpha, deepest nodes first and the root last, with
//!    a random walk on `logit α`, twice: once with the latent amplitudes held
//!    fixed, and once moving the node's amplitudes along with α so that each
//!    amplitude keeps its stable-law representation `A = (ψ(π·aux)/E)^{(1-α)/α}`
//!    with the same `(aux, E)`; nodes whose children are all internal get a
//!    third move that rescales the children's alphas to keep every path
//!    product and every composed leaf amplitude unchanged;
//! 3. every leaf bandwidth, in leaf order, with a random walk on `log τ`
//!    (skipped when bandwidths are fixed).
//!
//! Proposal scales are tuned per block toward the target acceptance rate in
//! batches during burn-in only and are frozen afterwards.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{KernelBasis, KnotGrid};
use crate::rng::{self, Domain};
use crate::stable::{log_density_augmented_raw, log_zolotarev, AUX_EPS};
use crate::tree::DependenceTree;

use super::data::MaximaData;
use super::prior::Prior;
use super::proposal::{accept, log_walk, logit_walk};

/// Name of the log-likelihood trace in chain exports.
pub const LOG_LIKELIHOOD: &str = "log_likelihood";

const ALPHA_FLOOR: f64 = 0.01;
const ALPHA_CEIL: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    /// Sweeps per adaptation batch during burn-in.
    #[serde(default = "default_batch")]
    pub adapt_batch: usize,
    #[serde(default = "default_target")]
    pub target_acceptance: f64,
    /// Starting alphas in internal-node preorder; defaults to the tree's values.
    #[serde(default)]
    pub initial_alphas: Option<Vec<f64>>,
    /// Starting bandwidths in leaf order; defaults to the tree's values.
    #[serde(default)]
    pub initial_taus: Option<Vec<f64>>,
    /// Keep bandwidths at their starting values.
    #[serde(default)]
    pub fix_taus: bool,
}

fn default_batch() -> usize {
    50
}

fn default_target() -> f64 {
    0.30
}

impl McmcConfig {
    /// `iterations` sweeps with a burn-in of one fifth and no thinning.
    pub fn new(iterations: usize, seed: u64) -> Self {
        McmcConfig {
            iterations,
            burn_in: iterations / 5,
            thinning: 1,
            seed,
            adapt_batch: default_batch(),
            target_acceptance: default_target(),
            initial_alphas: None,
            initial_taus: None,
            fix_taus: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::domain("iterations must be positive"));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::domain(format!(
                "burn-in {} must be smaller than iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thinning == 0 || self.adapt_batch == 0 {
            return Err(Error::domain("thinning and adaptation batch must be >= 1"));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::domain("target acceptance must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Number of retained states, `floor((R - burn_in) / thinning)`.
    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in) / self.thinning
    }
}

/// Full state of the chain: parameters and the augmented latent field.
#[derive(Debug, Clone, PartialEq)]
pub struct McmcState {
    pub alphas: Vec<f64>,
    pub taus: Vec<f64>,
    pub n_rep: usize,
    pub n_nodes: usize,
    pub n_knots: usize,
    /// `[(replicate * n_nodes + node) * n_knots + knot]`.
    pub amplitudes: Vec<f64>,
    pub aux: Vec<f64>,
}

impl McmcState {
    #[inline]
    pub fn index(&self, rep: usize, node: usize, knot: usize) -> usize {
        (rep * self.n_nodes + node) * self.n_knots + knot
    }

    #[inline]
    pub fn amplitude(&self, rep: usize, node: usize, knot: usize) -> f64 {
        self.amplitudes[self.index(rep, node, knot)]
    }

    /// Every amplitude at one and every auxiliary at one half.
    pub fn neutral(alphas: Vec<f64>, taus: Vec<f64>, n_rep: usize, n_knots: usize) -> Self {
        let n_nodes = alphas.len();
        let cells = n_rep * n_nodes * n_knots;
        McmcState { alphas, taus, n_rep, n_nodes, n_knots, amplitudes: vec![1.0; cells], aux: vec![0.5; cells] }
    }
}

/// Acceptance bookkeeping for one update block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRate {
    pub block: String,
    pub accepted: u64,
    pub proposed: u64,
    pub scale: f64,
}

impl BlockRate {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Latent amplitudes live on the finite positive doubles.
#[inline]
fn representable(log_a: f64) -> bool {
    (f64::MIN_POSITIVE.ln()..f64::MAX.ln()).contains(&log_a)
}

/// Retained states of one chain after burn-in removal and thinning.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorChain {
    /// Alpha labels in internal-node preorder, then `tau_<leaf>`.
    pub parameter_names: Vec<String>,
    /// Sweep number (1-based) of each retained state.
    pub iterations: Vec<usize>,
    /// One row per retained state, aligned with `parameter_names`.
    pub samples: Vec<Vec<f64>>,
    pub log_likelihood: Vec<f64>,
    /// Post-burn-in acceptance per block.
    pub acceptance: Vec<BlockRate>,
    pub config: McmcConfig,
    pub n_alphas: usize,
}

impl PosteriorChain {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Trace of one parameter, or of [`LOG_LIKELIHOOD`].
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        if name == LOG_LIKELIHOOD {
            return Ok(self.log_likelihood.clone());
        }
        let j = self
            .parameter_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        Ok(self.samples.iter().map(|row| row[j]).collect())
    }

    /// Tree carrying the parameters of retained state `i`.
    pub fn tree_at(&self, i: usize, tree: &DependenceTree) -> Result<DependenceTree> {
        let row = &self.samples[i];
        tree.with_parameters(&row[..self.n_alphas], &row[self.n_alphas..])
    }

    /// Tree carrying the posterior median of every parameter.
    pub fn median_tree(&self, tree: &DependenceTree) -> Result<DependenceTree> {
        if self.is_empty() {
            return Err(Error::domain("empty chain has no median"));
        }
        let med: Vec<f64> = (0..self.parameter_names.len())
            .map(|j| {
                let mut col: Vec<f64> = self.samples.iter().map(|r| r[j]).collect();
                col.sort_by(f64::total_cmp);
                crate::math::sorted_quantile(&col, 0.5)
            })
            .collect();
        tree.with_parameters(&med[..self.n_alphas], &med[self.n_alphas..])
    }
}

/// Cached per-leaf quantities for the current parameters.
#[derive(Debug, Clone)]
struct LeafCache {
    p: f64,
    /// `(path node, exponent)` pairs composing the leaf amplitude.
    path: Vec<(usize, f64)>,
    /// `log ω`, `[d * L + l]`.
    log_w: Vec<f64>,
    /// `ω^{1/p}`, `[d * L + l]`.
    w_pow: Vec<f64>,
    /// `z^{-1/p}`, `[d * N + r]`, zero for missing cells.
    z_pow: Vec<f64>,
    /// Composed amplitudes `B`, `[r * L + l]`.
    b: Vec<f64>,
    /// `S = Σ_l B_l ω_l^{1/p}`, `[r * D + d]`.
    s: Vec<f64>,
    /// Log-likelihood per replicate.
    ll: Vec<f64>,
}

/// The sampler: data, model topology, current state and caches.
pub struct Sampler<'a> {
    tree: DependenceTree,
    grid: &'a KnotGrid,
    data: MaximaData,
    prior: Prior,
    config: McmcConfig,
    state: McmcState,
    log_amp: Vec<f64>,
    log_z: Vec<f64>,
    leaves: Vec<LeafCache>,
    /// For each internal node, the leaves below it and the node's exponent on each.
    node_leaves: Vec<Vec<(usize, usize)>>,
    /// Sum of augmented latent log densities per internal node.
    latent_lp: Vec<f64>,
    blocks: Vec<BlockRate>,
    batch: Vec<(u64, u64)>,
    n_batches: usize,
    sweeps: usize,
    scratch: Vec<f64>,
}

impl<'a> Sampler<'a> {
    pub fn new(
        tree: &DependenceTree,
        grid: &'a KnotGrid,
        data: &MaximaData,
        prior: Prior,
        config: McmcConfig,
    ) -> Result<Self> {
        config.validate()?;
        let alphas = match &config.initial_alphas {
            Some(a) => a.clone(),
            None => tree.alphas(),
        };
        let taus = match &config.initial_taus {
            Some(t) => t.clone(),
            None => tree.taus(),
        };
        if alphas.len() != tree.n_nodes() || taus.len() != tree.n_leaves() {
            return Err(Error::Structure("initial parameter vectors do not match the tree".into()));
        }
        let alphas = alphas.into_iter().map(|a| a.clamp(ALPHA_FLOOR, ALPHA_CEIL)).collect();
        let taus = taus.into_iter().map(|t| t.min(0.99 * prior.tau_upper())).collect();
        let state = McmcState::neutral(alphas, taus, data.n_rep, grid.len());
        Self::from_state(tree, grid, data, prior, config, state)
    }

    pub fn from_state(
        tree: &DependenceTree,
        grid: &'a KnotGrid,
        data: &MaximaData,
        prior: Prior,
        config: McmcConfig,
        state: McmcState,
    ) -> Result<Self> {
        config.validate()?;
        let data = data.aligned_to(tree)?;
        if state.n_rep != data.n_rep || state.n_knots != grid.len() || state.n_nodes != tree.n_nodes() {
            return Err(Error::Structure("state dimensions do not match data and model".into()));
        }
        if state.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::domain("sampled alphas must lie strictly inside (0, 1)"));
        }
        let tree = tree.with_parameters(&state.alphas, &state.taus)?;
        let node_leaves = (0..tree.n_nodes())
            .map(|j| {
                tree.leaves_under(j)
                    .into_iter()
                    .map(|k| (k, tree.leaves()[k].path.iter().position(|&n| n == j).expect("on path")))
                    .collect()
            })
            .collect();
        let mut blocks = Vec::new();
        for n in tree.nodes() {
            blocks.push(BlockRate { block: format!("latent:{}", n.label), accepted: 0, proposed: 0, scale: 1.0 });
        }
        for n in tree.nodes() {
            blocks.push(BlockRate { block: n.label.clone(), accepted: 0, proposed: 0, scale: 0.5 });
        }
        for n in tree.nodes() {
            blocks.push(BlockRate { block: format!("{}:joint", n.label), accepted: 0, proposed: 0, scale: 0.5 });
        }
        for n in tree.nodes() {
            blocks.push(BlockRate { block: format!("{}:ridge", n.label), accepted: 0, proposed: 0, scale: 0.5 });
        }
        for l in tree.leaves() {
            blocks.push(BlockRate { block: format!("tau_{}", l.name), accepted: 0, proposed: 0, scale: 0.3 });
        }
        let log_z = data.values.iter().map(|v| v.ln()).collect();
        let log_amp = state.amplitudes.iter().map(|a| a.ln()).collect();
        let n_blocks = blocks.len();
        let mut sampler = Sampler {
            tree,
            grid,
            data,
            prior,
            config,
            latent_lp: vec![0.0; state.n_nodes],
            state,
            log_amp,
            log_z,
            leaves: Vec::new(),
            node_leaves,
            blocks,
            batch: vec![(0, 0); n_blocks],
            n_batches: 0,
            sweeps: 0,
            scratch: Vec::new(),
        };
        sampler.refresh()?;
        Ok(sampler)
    }

    pub fn state(&self) -> &McmcState {
        &self.state
    }

    pub fn into_state(self) -> McmcState {
        self.state
    }

    pub fn blocks(&self) -> &[BlockRate] {
        &self.blocks
    }

    pub fn log_likelihood(&self) -> f64 {
        self.leaves.iter().flat_map(|c| c.ll.iter()).sum()
    }

    /// Log posterior up to its normalizing constant.
    pub fn log_posterior(&self) -> f64 {
        let mut lp = self.log_likelihood() + self.latent_lp.iter().sum::<f64>();
        lp += self.state.alphas.iter().map(|a| self.prior.log_alpha(*a)).sum::<f64>();
        if !self.config.fix_taus {
            lp += self.state.taus.iter().map(|t| self.prior.log_tau(*t)).sum::<f64>();
        }
        lp
    }

    fn n_obs_sites(&self) -> usize {
        self.data.sites.len()
    }

    /// Recomputes every cache from the state.
    fn refresh(&mut self) -> Result<()> {
        let mut leaves = Vec::with_capacity(self.tree.n_leaves());
        for k in 0..self.tree.n_leaves() {
            let log_w = KernelBasis::new(self.grid, self.state.taus[k])?.log_weight_table(&self.data.sites);
            leaves.push(self.build_leaf(k, &self.state.alphas, log_w));
        }
        self.leaves = leaves;
        self.latent_lp = (0..self.state.n_nodes).map(|j| self.node_latent_lp(j, self.state.alphas[j])).collect();
        let lp = self.log_posterior();
        if !lp.is_finite() {
            return Err(Error::Numerical(format!("log posterior {lp} at the current state")));
        }
        Ok(())
    }

    fn node_latent_lp(&self, node: usize, alpha: f64) -> f64 {
        let s = &self.state;
        let mut total = 0.0;
        for r in 0..s.n_rep {
            let base = s.index(r, node, 0);
            for l in 0..s.n_knots {
                total += log_density_augmented_raw(s.amplitudes[base + l], s.aux[base + l], alpha);
            }
        }
        total
    }

    fn build_leaf(&self, k: usize, alphas: &[f64], log_w: Vec<f64>) -> LeafCache {
        let path_nodes = &self.tree.leaves()[k].path;
        let p: f64 = path_nodes.iter().map(|&j| alphas[j]).product();
        let mut path = vec![(0, 1.0); path_nodes.len()];
        let mut below = 1.0;
        for (i, &j) in path_nodes.iter().enumerate().rev() {
            path[i] = (j, 1.0 / below);
            below *= alphas[j];
        }
        let (d_count, l_count, n) = (self.n_obs_sites(), self.grid.len(), self.state.n_rep);
        let w_pow: Vec<f64> = log_w.iter().map(|w| (w / p).exp()).collect();
        let mut z_pow = vec![0.0; d_count * n];
        for d in 0..d_count {
            for r in 0..n {
                let lz = self.log_z[(k * d_count + d) * n + r];
                if !lz.is_nan() {
                    z_pow[d * n + r] = (-lz / p).exp();
                }
            }
        }
        let mut b = vec![0.0; n * l_count];
        for r in 0..n {
            for l in 0..l_count {
                let lb: f64 = path.iter().map(|&(j, e)| e * self.log_amp[self.state.index(r, j, l)]).sum();
                b[r * l_count + l] = lb.exp();
            }
        }
        let mut s = vec![0.0; n * d_count];
        for r in 0..n {
            for d in 0..d_count {
                s[r * d_count + d] = b[r * l_count..(r + 1) * l_count]
                    .iter()
                    .zip(&w_pow[d * l_count..(d + 1) * l_count])
                    .map(|(b, w)| b * w)
                    .sum();
            }
        }
        let mut cache = LeafCache { p, path, log_w, w_pow, z_pow, b, s, ll: vec![0.0; n] };
        for r in 0..n {
            cache.ll[r] = self.rep_ll(k, &cache, r, &cache.s[r * d_count..(r + 1) * d_count]);
        }
        cache
    }

    /// Log-likelihood of replicate `r` of leaf `k` for the given `S` values.
    #[inline]
    fn rep_ll(&self, k: usize, cache: &LeafCache, r: usize, s: &[f64]) -> f64 {
        let (d_count, n) = (self.n_obs_sites(), self.state.n_rep);
        let log_p = cache.p.ln();
        let inv_p1 = 1.0 / cache.p + 1.0;
        let mut ll = 0.0;
        for (d, &sv) in s.iter().enumerate() {
            let lz = self.log_z[(k * d_count + d) * n + r];
            if lz.is_nan() {
                continue;
            }
            ll += sv.ln() - log_p - inv_p1 * lz - sv * cache.z_pow[d * n + r];
        }
        if ll.is_nan() {
            f64::NEG_INFINITY
        } else {
            ll
        }
    }

    fn record(&mut self, block: usize, accepted: bool) {
        self.batch[block].1 += 1;
        if accepted {
            self.batch[block].0 += 1;
        }
        if self.sweeps >= self.config.burn_in {
            self.blocks[block].proposed += 1;
            if accepted {
                self.blocks[block].accepted += 1;
            }
        }
    }

    fn update_latent<R: Rng + ?Sized>(&mut self, r: usize, j: usize, l: usize, rng: &mut R) {
        let scale = self.blocks[j].scale;
        let idx = self.state.index(r, j, l);
        let (a, u) = (self.state.amplitudes[idx], self.state.aux[idx]);
        let pa = log_walk(a, scale, rng);
        let pu = logit_walk(u, scale, rng);
        let alpha = self.state.alphas[j];
        let lp_old = log_density_augmented_raw(a, u, alpha);
        let lp_new = log_density_augmented_raw(pa.value, pu.value, alpha);
        let mut log_ratio = lp_new - lp_old + pa.log_jacobian + pu.log_jacobian;
        if !representable(pa.value.ln()) {
            log_ratio = f64::NEG_INFINITY;
        }
        let log_step = pa.value.ln() - self.log_amp[idx];

        let (d_count, l_count) = (self.n_obs_sites(), self.grid.len());
        let affected = &self.node_leaves[j];
        let mut scratch = std::mem::take(&mut self.scratch);
        scratch.resize(affected.len() * d_count + affected.len(), 0.0);
        let (s_new, ll_new) = scratch.split_at_mut(affected.len() * d_count);
        for (pos, &(k, path_pos)) in affected.iter().enumerate() {
            let cache = &self.leaves[k];
            let e = cache.path[path_pos].1;
            let b_old = cache.b[r * l_count + l];
            let db = b_old * ((e * log_step).exp() - 1.0);
            let out = &mut s_new[pos * d_count..(pos + 1) * d_count];
            for d in 0..d_count {
                out[d] = cache.s[r * d_count + d] + db * cache.w_pow[d * l_count + l];
            }
            ll_new[pos] = self.rep_ll(k, cache, r, out);
            log_ratio += ll_new[pos] - cache.ll[r];
        }
        let ok = accept(log_ratio, rng);
        if ok {
            self.state.amplitudes[idx] = pa.value;
            self.state.aux[idx] = pu.value;
            self.log_amp[idx] = pa.value.ln();
            self.latent_lp[j] += lp_new - lp_old;
            for (pos, &(k, path_pos)) in affected.iter().enumerate() {
                let cache = &mut self.leaves[k];
                let e = cache.path[path_pos].1;
                cache.b[r * l_count + l] *= (e * log_step).exp();
                cache.s[r * d_count..(r + 1) * d_count].copy_from_slice(&s_new[pos * d_count..(pos + 1) * d_count]);
                cache.ll[r] = ll_new[pos];
            }
        }
        self.scratch = scratch;
        self.record(j, ok);
    }

    fn update_alpha<R: Rng + ?Sized>(&mut self, j: usize, rng: &mut R) {
        let block = self.state.n_nodes + j;
        let prop = logit_walk(self.state.alphas[j], self.blocks[block].scale, rng);
        let mut alphas = self.state.alphas.clone();
        alphas[j] = prop.value;
        let lp_new = self.node_latent_lp(j, prop.value);
        let mut log_ratio = lp_new - self.latent_lp[j] + prop.log_jacobian
            + self.prior.log_alpha(prop.value)
            - self.prior.log_alpha(self.state.alphas[j]);
        let affected: Vec<usize> = self.node_leaves[j].iter().map(|(k, _)| *k).collect();
        let mut fresh = Vec::with_capacity(affected.len());
        for &k in &affected {
            let cache = self.build_leaf(k, &alphas, self.leaves[k].log_w.clone());
            log_ratio += cache.ll.iter().sum::<f64>() - self.leaves[k].ll.iter().sum::<f64>();
            fresh.push(cache);
        }
        let ok = accept(log_ratio, rng);
        if ok {
            self.state.alphas = alphas;
            self.latent_lp[j] = lp_new;
            for (k, cache) in affected.into_iter().zip(fresh) {
                self.leaves[k] = cache;
            }
        }
        self.record(block, ok);
    }

    fn update_alpha_joint<R: Rng + ?Sized>(&mut self, j: usize, rng: &mut R) {
        let block = 2 * self.state.n_nodes + j;
        let alpha = self.state.alphas[j];
        let prop = logit_walk(alpha, self.blocks[block].scale, rng);
        let (c, c_new) = ((1.0 - alpha) / alpha, (1.0 - prop.value) / prop.value);
        let (n, l_count) = (self.state.n_rep, self.grid.len());
        let mut moved = Vec::with_capacity(n * l_count);
        for r in 0..n {
            for l in 0..l_count {
                let idx = self.state.index(r, j, l);
                let u = PI * self.state.aux[idx].clamp(AUX_EPS, 1.0 - AUX_EPS);
                let log_e = log_zolotarev(alpha, u) - self.log_amp[idx] / c;
                moved.push((idx, c_new * (log_zolotarev(prop.value, u) - log_e)));
            }
        }
        for (idx, v) in moved.iter_mut() {
            std::mem::swap(&mut self.log_amp[*idx], v);
        }
        let mut alphas = self.state.alphas.clone();
        alphas[j] = prop.value;
        let mut log_ratio = prop.log_jacobian + self.prior.log_alpha(prop.value) - self.prior.log_alpha(alpha);
        if moved.iter().any(|(idx, _)| !representable(self.log_amp[*idx])) {
            log_ratio = f64::NEG_INFINITY;
        }
        let affected: Vec<usize> = self.node_leaves[j].iter().map(|(k, _)| *k).collect();
        let mut fresh = Vec::with_capacity(affected.len());
        for &k in &affected {
            let cache = self.build_leaf(k, &alphas, self.leaves[k].log_w.clone());
            log_ratio += cache.ll.iter().sum::<f64>() - self.leaves[k].ll.iter().sum::<f64>();
            fresh.push(cache);
        }
        let ok = accept(log_ratio, rng);
        if ok {
            for &(idx, _) in &moved {
                self.state.amplitudes[idx] = self.log_amp[idx].exp();
            }
            self.state.alphas = alphas;
            self.latent_lp[j] = self.node_latent_lp(j, prop.value);
            for (k, cache) in affected.into_iter().zip(fresh) {
                self.leaves[k] = cache;
            }
        } else {
            for (idx, v) in moved {
                self.log_amp[idx] = v;
            }
        }
        self.record(block, ok);
    }

    fn update_alpha_ridge<R: Rng + ?Sized>(&mut self, j: usize, rng: &mut R) {
        let node = &self.tree.nodes()[j];
        if !node.child_leaves.is_empty() || node.child_nodes.is_empty() {
            return;
        }
        let children = node.child_nodes.clone();
        let block = 3 * self.state.n_nodes + j;
        let alpha = self.state.alphas[j];
        let prop = logit_walk(alpha, self.blocks[block].scale, rng);
        let ratio = alpha / prop.value;
        let mut alphas = self.state.alphas.clone();
        alphas[j] = prop.value;
        let mut log_ratio = prop.log_jacobian + self.prior.log_alpha(prop.value) - self.prior.log_alpha(alpha);
        for &c in &children {
            alphas[c] = self.state.alphas[c] * ratio;
            log_ratio += ratio.ln() + self.prior.log_alpha(alphas[c]) - self.prior.log_alpha(self.state.alphas[c]);
        }
        let mut moved = Vec::new();
        let mut lp_new = vec![0.0; children.len()];
        if log_ratio.is_finite() {
            for (ci, &c) in children.iter().enumerate() {
                let shift = 1.0 / self.state.alphas[c] - 1.0 / alphas[c];
                for r in 0..self.state.n_rep {
                    for l in 0..self.grid.len() {
                        let idx = self.state.index(r, c, l);
                        let log_a = self.log_amp[idx] + shift * self.log_amp[self.state.index(r, j, l)];
                        lp_new[ci] += log_density_augmented_raw(log_a.exp(), self.state.aux[idx], alphas[c]);
                        log_ratio += log_a - self.log_amp[idx];
                        if !representable(log_a) {
                            log_ratio = f64::NEG_INFINITY;
                        }
                        moved.push((idx, log_a));
                    }
                }
                log_ratio += lp_new[ci] - self.latent_lp[c];
            }
            let lp_j = self.node_latent_lp(j, prop.value);
            log_ratio += lp_j - self.latent_lp[j];
            lp_new.push(lp_j);
        }
        let ok = accept(log_ratio, rng);
        if ok {
            for (idx, log_a) in moved {
                self.log_amp[idx] = log_a;
                self.state.amplitudes[idx] = log_a.exp();
            }
            self.state.alphas = alphas;
            for (ci, &c) in children.iter().enumerate() {
                self.latent_lp[c] = lp_new[ci];
            }
            self.latent_lp[j] = lp_new[children.len()];
            for (k, _) in self.node_leaves[j].clone() {
                let log_w = std::mem::take(&mut self.leaves[k].log_w);
                self.leaves[k] = self.build_leaf(k, &self.state.alphas, log_w);
            }
        }
        self.record(block, ok);
    }

    fn update_tau<R: Rng + ?Sized>(&mut self, k: usize, rng: &mut R) {
        let block = 4 * self.state.n_nodes + k;
        let prop = log_walk(self.state.taus[k], self.blocks[block].scale, rng);
        let prior_diff = self.prior.log_tau(prop.value) - self.prior.log_tau(self.state.taus[k]);
        let mut ok = false;
        if prior_diff.is_finite() {
            let log_w = KernelBasis::new(self.grid, prop.value)
                .expect("positive bandwidth")
                .log_weight_table(&self.data.sites);
            let cache = self.build_leaf(k, &self.state.alphas, log_w);
            let log_ratio = prior_diff + prop.log_jacobian + cache.ll.iter().sum::<f64>()
                - self.leaves[k].ll.iter().sum::<f64>();
            ok = accept(log_ratio, rng);
            if ok {
                self.state.taus[k] = prop.value;
                self.leaves[k] = cache;
            }
        } else {
            // draw the acceptance uniform anyway so the stream stays aligned
            let _: f64 = rng.random();
        }
        self.record(block, ok);
    }

    fn adapt(&mut self) {
        self.n_batches += 1;
        let gain = 2.0 / (self.n_batches as f64).sqrt();
        for (block, (acc, tries)) in self.blocks.iter_mut().zip(self.batch.iter_mut()) {
            if *tries > 0 {
                let rate = *acc as f64 / *tries as f64;
                block.scale = (block.scale.ln() + gain * (rate - self.config.target_acceptance))
                    .exp()
                    .clamp(1e-4, 50.0);
            }
            *acc = 0;
            *tries = 0;
        }
    }

    /// One full sweep over all blocks.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        self.refresh()?;
        let (n, m, l_count) = (self.state.n_rep, self.state.n_nodes, self.grid.len());
        for r in 0..n {
            for j in 0..m {
                for l in 0..l_count {
                    self.update_latent(r, j, l, rng);
                }
            }
        }
        for j in self.tree.bottom_up_order() {
            self.update_alpha(j, rng);
            self.update_alpha_joint(j, rng);
            self.update_alpha_ridge(j, rng);
        }
        if !self.config.fix_taus {
            for k in 0..self.tree.n_leaves() {
                self.update_tau(k, rng);
            }
        }
        self.sweeps += 1;
        if self.sweeps <= self.config.burn_in && self.sweeps % self.config.adapt_batch == 0 {
            self.adapt();
        }
        Ok(())
    }

    fn parameter_names(&self) -> Vec<String> {
        self.tree
            .nodes()
            .iter()
            .map(|n| n.label.clone())
            .chain(self.tree.leaves().iter().map(|l| format!("tau_{}", l.name)))
            .collect()
    }

    /// Runs the configured number of sweeps and returns the retained states.
    pub fn run<R: Rng + ?Sized>(mut self, rng: &mut R) -> Result<PosteriorChain> {
        let cfg = self.config.clone();
        let mut chain = PosteriorChain {
            parameter_names: self.parameter_names(),
            iterations: Vec::with_capacity(cfg.retained()),
            samples: Vec::with_capacity(cfg.retained()),
            log_likelihood: Vec::with_capacity(cfg.retained()),
            acceptance: Vec::new(),
            config: cfg.clone(),
            n_alphas: self.state.n_nodes,
        };
        for i in 1..=cfg.iterations {
            self.sweep(rng)?;
            if i > cfg.burn_in && (i - cfg.burn_in) % cfg.thinning == 0 {
                let lp = self.log_posterior();
                if !lp.is_finite() {
                    return Err(Error::Numerical(format!("non-finite log posterior at sweep {i}")));
                }
                chain.iterations.push(i);
                chain.samples.push(self.state.alphas.iter().chain(&self.state.taus).copied().collect());
                chain.log_likelihood.push(self.log_likelihood());
            }
        }
        chain.acceptance = self.blocks.clone();
        Ok(chain)
    }
}

/// One sweep from `state`; convenience wrapper around [`Sampler::sweep`].
pub fn mh_step<R: Rng + ?Sized>(
    state: McmcState,
    data: &MaximaData,
    tree: &DependenceTree,
    grid: &KnotGrid,
    prior: Prior,
    rng: &mut R,
) -> Result<McmcState> {
    let config = McmcConfig { burn_in: 0, ..McmcConfig::new(1, 0) };
    let mut sampler = Sampler::from_state(tree, grid, data, prior, config, state)?;
    sampler.sweep(rng)?;
    Ok(sampler.into_state())
}

/// Runs one chain with the stream derived from `config.seed`.
pub fn run_chain(
    data: &MaximaData,
    tree: &DependenceTree,
    grid: &KnotGrid,
    prior: Prior,
    config: McmcConfig,
) -> Result<PosteriorChain> {
    let mut rng = rng::substream(config.seed, Domain::Chain, 0);
    Sampler::new(tree, grid, data, prior, config)?.run(&mut rng)
}

/// Runs several chains concurrently; chain `c` gets its own derived seed.
pub fn run_chains(
    data: &MaximaData,
    tree: &DependenceTree,
    grid: &KnotGrid,
    prior: Prior,
    configs: Vec<McmcConfig>,
) -> Result<Vec<PosteriorChain>> {
    configs
        .into_par_iter()
        .map(|cfg| run_chain(data, tree, grid, prior, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::log_conditional_likelihood;
    use crate::kernel::{make_regular_grid, Rect, Site};
    use crate::simulate::simulate;
    use crate::tree::TreeSpec;

    fn setup(n_rep: usize) -> (DependenceTree, KnotGrid, MaximaData) {
        let tree = DependenceTree::new(&TreeSpec::two_layer(0.6, &[("A", 0.5, 1.5), ("B", 0.8, 2.0)])).unwrap();
        let grid = make_regular_grid(Rect::new(0.0, 4.0, 0.0, 4.0).unwrap(), 3, 3).unwrap();
        let sites: Vec<Site> = [(0.5, 0.5), (3.0, 1.0), (2.0, 3.5)].iter().map(|&(x, y)| Site::new(x, y).unwrap()).collect();
        let sample = simulate(&tree, &grid, &sites, n_rep, 11).unwrap();
        (tree, grid, MaximaData::try_from(&sample).unwrap())
    }

    #[test]
    fn cached_likelihood_matches_full_recompute() {
        let (tree, grid, data) = setup(6);
        let prior = Prior::new(data.max_distance()).unwrap();
        let mut s = Sampler::new(&tree, &grid, &data, prior, McmcConfig::new(40, 1)).unwrap();
        let mut r = rng::master(3);
        for _ in 0..15 {
            s.sweep(&mut r).unwrap();
            let st = s.state();
            let full = log_conditional_likelihood(st, &tree, &grid, &data.sites, &data.values, None).unwrap();
            let cached = s.log_likelihood();
            assert!((full - cached).abs() < 1e-8 * full.abs().max(1.0), "{full} vs {cached}");
        }
    }

    #[test]
    fn chain_length_follows_config() {
        let (tree, grid, data) = setup(2);
        let prior = Prior::new(data.max_distance()).unwrap();
        let cfg = McmcConfig { burn_in: 200, thinning: 10, ..McmcConfig::new(1000, 5) };
        let chain = run_chain(&data, &tree, &grid, prior, cfg).unwrap();
        assert_eq!(chain.len(), 80);
        assert_eq!(chain.iterations[0], 210);
        assert_eq!(chain.parameter_names, ["alpha_0", "alpha_1", "alpha_2", "tau_A", "tau_B"]);
        assert!(chain.samples.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn same_seed_same_chain() {
        let (tree, grid, data) = setup(3);
        let prior = Prior::new(data.max_distance()).unwrap();
        let a = run_chain(&data, &tree, &grid, prior, McmcConfig::new(60, 8)).unwrap();
        let b = run_chain(&data, &tree, &grid, prior, McmcConfig::new(60, 8)).unwrap();
        assert_eq!(a, b);
        let c = run_chain(&data, &tree, &grid, prior, McmcConfig::new(60, 9)).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn mismatched_leaves_fail_before_sampling() {
        let (tree, grid, mut data) = setup(2);
        data.leaves[1] = "C".into();
        let prior = Prior::new(5.0).unwrap();
        assert!(matches!(run_chain(&data, &tree, &grid, prior, McmcConfig::new(10, 1)), Err(Error::Structure(_))));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(McmcConfig { burn_in: 10, ..McmcConfig::new(10, 0) }.validate().is_err());
        assert!(McmcConfig { thinning: 0, ..McmcConfig::new(10, 0) }.validate().is_err());
        assert_eq!(McmcConfig::new(1000, 0).burn_in, 200);
    }

    #[test]
    fn scales_frozen_after_burn_in() {
        let (tree, grid, data) = setup(2);
        let prior = Prior::new(data.max_distance()).unwrap();
        let cfg = McmcConfig { burn_in: 100, adapt_batch: 10, ..McmcConfig::new(300, 2) };
        let mut s = Sampler::new(&tree, &grid, &data, prior, cfg).unwrap();
        let mut r = rng::master(1);
        for _ in 0..100 {
            s.sweep(&mut r).unwrap();
        }
        let frozen: Vec<f64> = s.blocks().iter().map(|b| b.scale).collect();
        assert!(frozen.iter().any(|v| *v != 1.0 && *v != 0.5 && *v != 0.3));
        for _ in 0..50 {
            s.sweep(&mut r).unwrap();
        }
        assert_eq!(frozen, s.blocks().iter().map(|b| b.scale).collect::<Vec<_>>());
    }
}
