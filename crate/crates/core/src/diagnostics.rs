//! Chain diagnostics, empirical extremal coefficients and posterior-predictive
//! quantiles of spatial maxima.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gev::GevParams;
use crate::inference::PosteriorChain;
use crate::kernel::{KnotGrid, Site};
use crate::math::sorted_quantile;
use crate::rng::{self, Domain};
use crate::simulate::{simulate, to_gev};
use crate::tree::DependenceTree;

/// Shortest chain accepted by [`ess`].
pub const MIN_ESS_LENGTH: usize = 10;

/// Sample autocorrelations at lags `0..=max_lag` (biased, `1/n` normalization).
pub fn acf(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let c0 = c.iter().map(|v| v * v).sum::<f64>();
    (0..=max_lag.min(n - 1))
        .map(|k| {
            if c0 == 0.0 {
                return if k == 0 { 1.0 } else { 0.0 };
            }
            c[..n - k].iter().zip(&c[k..]).map(|(a, b)| a * b).sum::<f64>() / c0
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EssResult {
    pub value: f64,
    /// The chain is constant and carries no information.
    pub degenerate: bool,
}

/// Effective sample size `n / (1 + 2 Σ ρ_k)`, truncating the autocorrelation
/// sum with Geyer's initial monotone sequence. Never exceeds `n`.
pub fn ess(x: &[f64]) -> Result<EssResult> {
    let n = x.len();
    if n < MIN_ESS_LENGTH {
        return Err(Error::domain(format!("ESS needs at least {MIN_ESS_LENGTH} samples, got {n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("ESS of a chain with non-finite values"));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let c0 = c.iter().map(|v| v * v).sum::<f64>();
    if c0 <= f64::EPSILON * f64::EPSILON * n as f64 * mean.abs().max(1.0).powi(2) {
        return Ok(EssResult { value: 0.0, degenerate: true });
    }
    let rho = |k: usize| c[..n - k].iter().zip(&c[k..]).map(|(a, b)| a * b).sum::<f64>() / c0;
    // tau = -1 + 2 Σ_m (ρ_{2m} + ρ_{2m+1}) over the initial positive, monotone run
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let gamma = rho(2 * m) + rho(2 * m + 1);
        if gamma <= 0.0 {
            break;
        }
        let gamma = gamma.min(prev);
        tau += 2.0 * gamma;
        prev = gamma;
        m += 1;
    }
    let value = (n as f64 / tau).min(n as f64);
    Ok(EssResult { value, degenerate: false })
}

/// Trace, autocorrelations and ESS of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub parameter: String,
    /// `(lag, correlation)`.
    pub acf: Vec<(usize, f64)>,
    pub ess: EssResult,
    /// `(iteration, value)`.
    pub trace: Vec<(usize, f64)>,
}

pub fn chain_diagnostics(chain: &PosteriorChain, parameter: &str, max_lag: usize) -> Result<ChainDiagnostics> {
    let (trace, acf) = export_trace(chain, parameter, max_lag)?;
    let values: Vec<f64> = trace.iter().map(|r| r.1).collect();
    Ok(ChainDiagnostics { parameter: parameter.to_string(), acf, ess: ess(&values)?, trace })
}

/// `(iteration, value)` rows of one parameter plus the `(lag, acf)` sidecar.
#[allow(clippy::type_complexity)]
pub fn export_trace(
    chain: &PosteriorChain,
    parameter: &str,
    max_lag: usize,
) -> Result<(Vec<(usize, f64)>, Vec<(usize, f64)>)> {
    let values = chain.column(parameter)?;
    let trace = chain.iterations.iter().copied().zip(values.iter().copied()).collect();
    let acf = acf(&values, max_lag).into_iter().enumerate().collect();
    Ok((trace, acf))
}

/// Posterior summary of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub parameter: String,
    pub median: f64,
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
    pub q25: f64,
    pub q75: f64,
    pub acceptance_rate: Option<f64>,
    pub ess: Option<f64>,
}

/// Summaries of every parameter in chain order.
pub fn summarize(chain: &PosteriorChain) -> Result<Vec<ParameterSummary>> {
    if chain.is_empty() {
        return Err(Error::domain("cannot summarize an empty chain"));
    }
    chain
        .parameter_names
        .iter()
        .map(|name| {
            let values = chain.column(name)?;
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            let q = |p| sorted_quantile(&sorted, p);
            let acceptance_rate = chain.acceptance.iter().find(|b| &b.block == name).map(|b| b.rate());
            Ok(ParameterSummary {
                parameter: name.clone(),
                median: q(0.5),
                mean: values.iter().sum::<f64>() / values.len() as f64,
                q025: q(0.025),
                q975: q(0.975),
                q25: q(0.25),
                q75: q(0.75),
                acceptance_rate,
                ess: ess(&values).ok().map(|e| e.value),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaEstimator {
    /// Rank-based F-madogram.
    Madogram,
    /// `n / Σ min(1/x, 1/y)`; assumes unit-Fréchet margins.
    Naive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    Delta,
    Bootstrap { resamples: usize, seed: u64 },
}

/// Empirical pairwise extremal coefficient with a 95% interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalTheta {
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub pair: String,
    pub n_rep: usize,
    pub warnings: Vec<String>,
}

/// Fewer complete pairs than this are rejected.
pub const MIN_THETA_PAIRS: usize = 20;
const WARN_THETA_PAIRS: usize = 50;
const Z975: f64 = 1.959_963_984_540_054;

/// Midranks of `x`, scaled to `(0, 1)` by `n + 1`, and the number of tied values.
fn scaled_ranks(x: &[f64]) -> (Vec<f64>, usize) {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; n];
    let mut ties = 0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = mid / (n as f64 + 1.0);
        }
        if j > i {
            ties += j - i + 1;
        }
        i = j + 1;
    }
    (ranks, ties)
}

fn theta_terms(x: &[f64], y: &[f64], estimator: ThetaEstimator) -> (Vec<f64>, usize) {
    match estimator {
        ThetaEstimator::Madogram => {
            let (fx, tx) = scaled_ranks(x);
            let (fy, ty) = scaled_ranks(y);
            (fx.iter().zip(&fy).map(|(a, b)| 0.5 * (a - b).abs()).collect(), tx.max(ty))
        }
        ThetaEstimator::Naive => (x.iter().zip(y).map(|(a, b)| (1.0 / a).min(1.0 / b)).collect(), 0),
    }
}

fn theta_of(mean_term: f64, estimator: ThetaEstimator) -> f64 {
    match estimator {
        ThetaEstimator::Madogram => (1.0 + 2.0 * mean_term) / (1.0 - 2.0 * mean_term),
        ThetaEstimator::Naive => 1.0 / mean_term,
    }
}

fn estimate(x: &[f64], y: &[f64], estimator: ThetaEstimator) -> f64 {
    let (terms, _) = theta_terms(x, y, estimator);
    theta_of(terms.iter().sum::<f64>() / terms.len() as f64, estimator)
}

/// Estimates θ for two replicate series observed on the same replicates.
/// Replicates with a missing value in either series are dropped.
pub fn empirical_extremal_coefficient(
    x: &[f64],
    y: &[f64],
    estimator: ThetaEstimator,
    ci: CiMethod,
    pair: impl Into<String>,
) -> Result<EmpiricalTheta> {
    if x.len() != y.len() {
        return Err(Error::Structure(format!("series lengths differ: {} vs {}", x.len(), y.len())));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        x.iter().zip(y).filter(|(a, b)| !a.is_nan() && !b.is_nan()).map(|(a, b)| (*a, *b)).unzip();
    let n = xs.len();
    if n < MIN_THETA_PAIRS {
        return Err(Error::domain(format!("need at least {MIN_THETA_PAIRS} complete replicates, got {n}")));
    }
    if estimator == ThetaEstimator::Naive && xs.iter().chain(&ys).any(|v| !(*v > 0.0)) {
        return Err(Error::domain("the naive estimator needs positive unit-Fréchet data"));
    }
    let mut warnings = Vec::new();
    if n < WARN_THETA_PAIRS {
        warnings.push(format!("only {n} replicates; the estimate is noisy"));
    }
    let (terms, ties) = theta_terms(&xs, &ys, estimator);
    if ties > 0 {
        warnings.push(format!("{ties} tied values; midranks used"));
    }
    let m = terms.iter().sum::<f64>() / n as f64;
    let raw = theta_of(m, estimator);
    let (lo, hi) = match ci {
        CiMethod::Delta => {
            let var = terms.iter().map(|t| (t - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            let se_m = (var / n as f64).sqrt();
            let slope = match estimator {
                ThetaEstimator::Madogram => 4.0 / (1.0 - 2.0 * m).powi(2),
                ThetaEstimator::Naive => 1.0 / (m * m),
            };
            (raw - Z975 * slope * se_m, raw + Z975 * slope * se_m)
        }
        CiMethod::Bootstrap { resamples, seed } => {
            if resamples < 2 {
                return Err(Error::domain("bootstrap needs at least two resamples"));
            }
            let mut boot: Vec<f64> = (0..resamples)
                .into_par_iter()
                .map(|b| {
                    let mut r = rng::substream(seed, Domain::Bootstrap, b as u64);
                    let (bx, by): (Vec<f64>, Vec<f64>) = (0..n)
                        .map(|_| {
                            let i = r.random_range(0..n);
                            (xs[i], ys[i])
                        })
                        .unzip();
                    estimate(&bx, &by, estimator)
                })
                .collect();
            boot.sort_by(f64::total_cmp);
            (sorted_quantile(&boot, 0.025), sorted_quantile(&boot, 0.975))
        }
    };
    let clamp = |v: f64| if v.is_nan() { v } else { v.clamp(1.0, 2.0) };
    let estimate = clamp(raw);
    Ok(EmpiricalTheta {
        estimate,
        ci_low: clamp(lo).min(estimate),
        ci_high: clamp(hi).max(estimate),
        pair: pair.into(),
        n_rep: n,
        warnings,
    })
}

/// Return periods (years) recognised when labelling monthly-maximum quantiles.
pub const RETURN_PERIODS: [u32; 7] = [1, 2, 5, 10, 20, 50, 100];

/// `"<y>-year"` when `p` is within `5e-4` of `1 - 1/(12 y)`.
pub fn return_period_label(p: f64) -> Option<String> {
    RETURN_PERIODS
        .iter()
        .find(|&&y| (p - (1.0 - 1.0 / (12.0 * y as f64))).abs() < 5e-4)
        .map(|y| format!("{y}-year"))
}

/// One row of a posterior-predictive quantile table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub p: f64,
    /// `-log(-log p)`.
    pub gumbel: f64,
    pub z_p: f64,
    pub label: Option<String>,
}

/// What to take the maximum over and how to draw it.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveRequest<'a> {
    pub leaves: &'a [String],
    pub sites: &'a [Site],
    pub p_grid: &'a [f64],
    /// Fields simulated per retained draw.
    pub n_sim: usize,
    /// GEV margins for every (tree leaf, requested site), leaf-major.
    pub margins: Option<&'a [GevParams]>,
    pub seed: u64,
}

/// Quantiles of the spatial maximum over the requested leaves and sites,
/// pooling `n_sim` simulated fields from every retained posterior draw.
pub fn posterior_predictive_max_quantile(
    chain: &PosteriorChain,
    tree: &DependenceTree,
    grid: &KnotGrid,
    req: &PredictiveRequest<'_>,
) -> Result<Vec<QuantileRow>> {
    if req.leaves.is_empty() {
        return Err(Error::domain("empty leaf subset"));
    }
    if req.sites.is_empty() {
        return Err(Error::domain("empty site subset"));
    }
    if chain.is_empty() {
        return Err(Error::domain("empty posterior chain"));
    }
    if req.n_sim == 0 {
        return Err(Error::domain("need at least one simulation per draw"));
    }
    if let Some(p) = req.p_grid.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(Error::domain(format!("probability {p} outside (0, 1)")));
    }
    let leaf_idx = req.leaves.iter().map(|l| tree.leaf_index(l)).collect::<Result<Vec<_>>>()?;
    let pooled: Vec<Vec<f64>> = (0..chain.len())
        .into_par_iter()
        .map(|i| {
            let t = chain.tree_at(i, tree)?;
            let seed = rng::derive_seed(req.seed, Domain::Predictive, i as u64);
            let mut sample = simulate(&t, grid, req.sites, req.n_sim, seed)?;
            if let Some(m) = req.margins {
                sample = to_gev(&sample, m)?;
            }
            Ok((0..req.n_sim)
                .map(|r| {
                    leaf_idx
                        .iter()
                        .flat_map(|&k| (0..req.sites.len()).map(move |d| (k, d)))
                        .map(|(k, d)| sample.get(k, d, r))
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut all: Vec<f64> = pooled.into_iter().flatten().collect();
    all.sort_by(f64::total_cmp);
    Ok(req
        .p_grid
        .iter()
        .map(|&p| QuantileRow { p, gumbel: -(-p.ln()).ln(), z_p: sorted_quantile(&all, p), label: return_period_label(p) })
        .collect())
}

/// Kolmogorov–Smirnov test of `x` against a continuous CDF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

pub fn ks_test(x: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    let n = x.len();
    if n == 0 {
        return Err(Error::domain("KS test of an empty sample"));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let statistic = sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / nf).max((i + 1) as f64 / nf - f)
        })
        .fold(0.0, f64::max);
    Ok(KsResult { statistic, p_value: kolmogorov_p_value(statistic, n) })
}

/// Asymptotic `P(D_n > d)` with the small-sample correction of Stephens.
pub fn kolmogorov_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let j = j as f64;
        let term = 2.0 * (-1f64).powf(j - 1.0) * (-2.0 * j * j * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::master(seed);
        (0..n).map(|_| StandardNormal.sample(&mut r)).collect()
    }

    #[test]
    fn iid_chain_ess_near_n() {
        let x = normals(10_000, 1);
        let e = ess(&x).unwrap();
        assert!(!e.degenerate);
        assert!((e.value / 1e4 - 1.0).abs() < 0.15, "{}", e.value);
    }

    #[test]
    fn ar1_chain_ess_near_a_third() {
        let eps = normals(100_000, 2);
        let mut x = vec![0.0; eps.len()];
        for i in 1..x.len() {
            x[i] = 0.5 * x[i - 1] + eps[i];
        }
        let e = ess(&x).unwrap().value;
        assert!((e / (1e5 / 3.0) - 1.0).abs() < 0.10, "{e}");
    }

    #[test]
    fn constant_and_short_chains() {
        let e = ess(&[2.5; 50]).unwrap();
        assert!(e.degenerate && e.value == 0.0);
        assert!(ess(&[1.0; 9]).is_err());
    }

    #[test]
    fn acf_starts_at_one() {
        let a = acf(&normals(100, 3), 5);
        assert_eq!(a.len(), 6);
        assert!((a[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identical_series_give_theta_one() {
        let x: Vec<f64> = (1..=200).map(|i| (i as f64 * 0.37).sin() + 2.0).collect();
        let t = empirical_extremal_coefficient(&x, &x, ThetaEstimator::Madogram, CiMethod::Delta, "x-x").unwrap();
        assert_eq!(t.estimate, 1.0);
        assert!(t.ci_low <= t.estimate && t.estimate <= t.ci_high);
    }

    #[test]
    fn too_few_pairs_rejected_and_ties_warned() {
        let x = vec![1.0; 10];
        assert!(empirical_extremal_coefficient(&x, &x, ThetaEstimator::Madogram, CiMethod::Delta, "").is_err());
        let x: Vec<f64> = (0..60).map(|i| (i / 2) as f64).collect();
        let t = empirical_extremal_coefficient(&x, &x, ThetaEstimator::Madogram, CiMethod::Delta, "").unwrap();
        assert!(t.warnings.iter().any(|w| w.contains("midranks")));
    }

    #[test]
    fn bootstrap_is_reproducible() {
        let x = normals(300, 4);
        let y: Vec<f64> = normals(300, 5).iter().zip(&x).map(|(a, b)| a + b).collect();
        let ci = CiMethod::Bootstrap { resamples: 200, seed: 9 };
        let a = empirical_extremal_coefficient(&x, &y, ThetaEstimator::Madogram, ci, "").unwrap();
        let b = empirical_extremal_coefficient(&x, &y, ThetaEstimator::Madogram, ci, "").unwrap();
        assert_eq!(a, b);
        assert!(a.ci_low <= a.estimate && a.estimate <= a.ci_high);
    }

    #[test]
    fn labels_match_return_periods() {
        assert_eq!(return_period_label(0.917).as_deref(), Some("1-year"));
        assert_eq!(return_period_label(0.996).as_deref(), Some("20-year"));
        assert_eq!(return_period_label(0.5), None);
    }

    #[test]
    fn ks_uniform_sample() {
        let mut r = rng::master(6);
        let x: Vec<f64> = (0..5000).map(|_| r.random::<f64>()).collect();
        let k = ks_test(&x, |v| v.clamp(0.0, 1.0)).unwrap();
        assert!(k.p_value > 0.01, "{k:?}");
        let shifted: Vec<f64> = x.iter().map(|v| v * 0.9).collect();
        assert!(ks_test(&shifted, |v| v.clamp(0.0, 1.0)).unwrap().p_value < 1e-6);
    }

    #[test]
    fn kolmogorov_tail_reference_values() {
        // P(K > 1.3581) = 0.05 and P(K > 1.6276) = 0.01 asymptotically
        let n = 1_000_000;
        let scale = (n as f64).sqrt() + 0.12 + 0.11 / (n as f64).sqrt();
        assert!((kolmogorov_p_value(1.3581 / scale, n) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_p_value(1.6276 / scale, n) - 0.01).abs() < 1e-4);
    }
}
