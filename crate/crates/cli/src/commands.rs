use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nestmax::diagnostics::{
    self, chain_diagnostics, empirical_extremal_coefficient, posterior_predictive_max_quantile, summarize,
    ParameterSummary, PredictiveRequest,
};
use nestmax::inference::{fit_margins_gev, run_chains, BlockRate, MaximaData, PosteriorChain, Prior};
use nestmax::kernel::{check_grid_spacing, KernelBasis};
use nestmax::rng::{derive_seed, Domain};
use nestmax::simulate::{simulate, to_gev};
use nestmax::{dependence, DependenceTree, KnotGrid, Site};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{PairSpec, PredictScale, RunConfig};
use crate::data::{self, Dataset};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Simulate,
    Fit,
    Extremal,
    Diagnose,
    Predict,
}

/// Everything a command needs, resolved from flags and configuration.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub config: RunConfig,
    pub config_bytes: Vec<u8>,
    pub data: Option<PathBuf>,
    pub chain_files: Vec<PathBuf>,
    pub margins: Option<PathBuf>,
    pub seed: u64,
    pub chains: Option<usize>,
    pub unit_frechet: bool,
}

/// Files produced by a command, written only after all of them are ready.
#[derive(Debug, Default)]
pub struct Outputs {
    pub files: Vec<(String, Vec<u8>)>,
    pub warnings: Vec<String>,
}

impl Outputs {
    fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    /// Writes every file into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> CliResult<()> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        }
        Ok(())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn file_digest(path: &Path) -> CliResult<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| CliError::io(path, e))?))
}

fn to_json<T: Serialize>(v: &T) -> CliResult<Vec<u8>> {
    let mut bytes =
        serde_json::to_vec_pretty(v).map_err(|e| CliError::Numerical(format!("JSON encoding failed: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn run(kind: CommandKind, inv: &Invocation) -> CliResult<Outputs> {
    let mut out = match kind {
        CommandKind::Simulate => cmd_simulate(inv)?,
        CommandKind::Fit => cmd_fit(inv)?,
        CommandKind::Extremal => cmd_extremal(inv)?,
        CommandKind::Diagnose => cmd_diagnose(inv)?,
        CommandKind::Predict => cmd_predict(inv)?,
    };
    let mut inputs = BTreeMap::new();
    if let Some(d) = &inv.data {
        inputs.insert("data".to_string(), json!(file_digest(d)?));
    }
    if let Some(m) = &inv.margins {
        inputs.insert("margins".to_string(), json!(file_digest(m)?));
    }
    if !inv.chain_files.is_empty() {
        let digests = inv.chain_files.iter().map(|c| file_digest(c)).collect::<CliResult<Vec<_>>>()?;
        inputs.insert("chains".to_string(), json!(digests));
    }
    let outputs: BTreeMap<&str, String> = out.files.iter().map(|(n, b)| (n.as_str(), sha256_hex(b))).collect();
    let provenance = json!({
        "command": kind,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": inv.seed,
        "config_sha256": sha256_hex(&inv.config_bytes),
        "inputs": inputs,
        "outputs": outputs,
        "unit_frechet": inv.unit_frechet,
        "chains": inv.chains,
    });
    out.add("provenance.json", to_json(&provenance)?);
    Ok(out)
}

fn require_data(inv: &Invocation) -> CliResult<Dataset> {
    let path = inv.data.as_ref().ok_or_else(|| CliError::validation("this command needs --data"))?;
    data::read_maxima(path, &inv.config.coordinates)
}

/// Sites from the data if given, otherwise from the configuration.
fn resolve_sites(inv: &Invocation, ds: Option<&Dataset>) -> CliResult<(Vec<String>, Vec<Site>)> {
    if let Some(ds) = ds {
        return Ok((ds.site_ids.clone(), ds.sites.clone()));
    }
    let sites = inv
        .config
        .config_sites()?
        .ok_or_else(|| CliError::validation("no sites: pass --data or declare `sites` in the configuration"))?;
    Ok(((0..sites.len()).map(|d| format!("s{d}")).collect(), sites))
}

fn spacing_warnings(tree: &DependenceTree, grid: &KnotGrid, out: &mut Outputs) -> CliResult<()> {
    for leaf in tree.leaves() {
        if let Some(w) = check_grid_spacing(&KernelBasis::new(grid, leaf.tau)?) {
            out.warnings.push(format!("leaf {}: {w}", leaf.name));
        }
    }
    Ok(())
}

fn read_chains(inv: &Invocation, tree: &DependenceTree) -> CliResult<Vec<PosteriorChain>> {
    if inv.chain_files.is_empty() {
        return Err(CliError::validation("this command needs at least one --chain file"));
    }
    inv.chain_files.iter().map(|p| data::read_chain(p, tree)).collect()
}

fn pooled(chains: &[PosteriorChain]) -> PosteriorChain {
    let mut all = chains[0].clone();
    for c in &chains[1..] {
        all.iterations.extend(&c.iterations);
        all.samples.extend(c.samples.iter().cloned());
        all.log_likelihood.extend(&c.log_likelihood);
    }
    all.acceptance = chains[0]
        .acceptance
        .iter()
        .map(|b| {
            let (acc, prop) = chains
                .iter()
                .flat_map(|c| c.acceptance.iter().filter(|x| x.block == b.block))
                .fold((0, 0), |(a, p), x| (a + x.accepted, p + x.proposed));
            BlockRate { accepted: acc, proposed: prop, ..b.clone() }
        })
        .collect();
    all
}

fn cmd_simulate(inv: &Invocation) -> CliResult<Outputs> {
    let cfg = &inv.config;
    let section = cfg.simulate.as_ref().ok_or_else(|| CliError::validation("configuration has no simulate section"))?;
    let tree = cfg.dependence_tree()?;
    let (site_ids, sites) = resolve_sites(inv, None)?;
    let grid = cfg.knot_grid(&sites)?;
    let mut out = Outputs::default();
    spacing_warnings(&tree, &grid, &mut out)?;
    let leaves = tree.leaf_names();
    let margins = inv.margins.as_ref().map(|m| data::read_margins(m, &leaves, &site_ids)).transpose()?;
    let mut sample = simulate(&tree, &grid, &sites, section.n_rep, inv.seed)?;
    if let Some(m) = &margins {
        sample = to_gev(&sample, m)?;
    }
    let raw = match cfg.sites.as_ref() {
        Some(crate::config::PointSetSpec::Points(p)) => p.iter().map(|[a, b]| (*a, *b)).collect(),
        _ => sites.iter().map(|s| (s.x, s.y)).collect(),
    };
    let ds = Dataset { site_ids, raw_coords: raw, sites, leaves, n_rep: sample.n_rep, values: sample.values };
    out.add("sample.csv", data::maxima_csv(&ds)?);
    Ok(out)
}

/// Unit-Fréchet data for inference, fitting GEV margins unless told not to.
fn standardize(inv: &Invocation, ds: &Dataset, out: &mut Outputs) -> CliResult<MaximaData> {
    if inv.unit_frechet {
        return Ok(MaximaData::new(ds.leaves.clone(), ds.sites.clone(), ds.n_rep, ds.values.clone())?);
    }
    let report = fit_margins_gev(&ds.leaves, &ds.sites, ds.n_rep, &ds.values)?;
    out.warnings.extend(report.warnings.iter().cloned());
    out.add("margins.csv", data::margins_csv(&report.fits, &ds.site_ids)?);
    Ok(report.data)
}

#[derive(Serialize)]
struct ChainReport {
    chain: usize,
    seed: u64,
    retained: usize,
    parameters: Vec<ParameterSummary>,
    acceptance: Vec<BlockRate>,
}

fn cmd_fit(inv: &Invocation) -> CliResult<Outputs> {
    let cfg = &inv.config;
    let tree = cfg.dependence_tree()?;
    let ds = require_data(inv)?;
    let mut out = Outputs::default();
    let data = standardize(inv, &ds, &mut out)?.aligned_to(&tree)?;
    let grid = cfg.knot_grid(&ds.sites)?;
    spacing_warnings(&tree, &grid, &mut out)?;
    let prior = Prior::new(data.max_distance())?;
    let n_chains = inv.chains.unwrap_or_else(|| cfg.mcmc.as_ref().map_or(1, |m| m.starts.len().max(1)));
    if n_chains == 0 {
        return Err(CliError::validation("--chains must be at least 1"));
    }
    let configs = (0..n_chains)
        .map(|c| cfg.mcmc_config(c, derive_seed(inv.seed, Domain::Chain, c as u64)))
        .collect::<CliResult<Vec<_>>>()?;
    let seeds: Vec<u64> = configs.iter().map(|c| c.seed).collect();
    let chains = run_chains(&data, &tree, &grid, prior, configs)?;
    let max_lag = cfg.mcmc.as_ref().map_or(50, |m| m.max_lag);
    let mut acf_rows = Vec::new();
    let mut reports = Vec::new();
    for (c, chain) in chains.iter().enumerate() {
        out.add(format!("chain_{c}.csv"), data::chain_csv(chain)?);
        for name in chain.parameter_names.iter().map(String::as_str).chain([nestmax::inference::LOG_LIKELIHOOD]) {
            let (_, acf) = diagnostics::export_trace(chain, name, max_lag)?;
            for (lag, v) in acf {
                acf_rows.push(vec![c.to_string(), name.to_string(), lag.to_string(), v.to_string()]);
            }
        }
        reports.push(ChainReport {
            chain: c,
            seed: seeds[c],
            retained: chain.len(),
            parameters: summarize(chain)?,
            acceptance: chain.acceptance.clone(),
        });
    }
    let mut pooled_summary = summarize(&pooled(&chains))?;
    for (j, s) in pooled_summary.iter_mut().enumerate() {
        let per: Vec<Option<f64>> = reports.iter().map(|r| r.parameters[j].ess).collect();
        s.ess = per.iter().copied().sum::<Option<f64>>();
    }
    let missing: Vec<_> = ds
        .missing_report()
        .into_iter()
        .map(|(leaf, site, n)| json!({"leaf": leaf, "site_id": site, "missing": n}))
        .collect();
    let summary = json!({
        "chains": reports,
        "pooled": pooled_summary,
        "h_max": prior.h_max,
        "missing_cells": missing,
        "warnings": out.warnings,
    });
    out.add("summary.json", to_json(&summary)?);
    out.add("acf.csv", data::table_csv(&["chain", "parameter", "lag", "acf"], &acf_rows)?);
    Ok(out)
}

/// Tree carrying posterior medians when chains are given, otherwise the configured values.
fn parameter_tree(inv: &Invocation) -> CliResult<DependenceTree> {
    let tree = inv.config.dependence_tree()?;
    if inv.chain_files.is_empty() {
        return Ok(tree);
    }
    let chains = read_chains(inv, &tree)?;
    Ok(pooled(&chains).median_tree(&tree)?)
}

fn expand_pairs(inv: &Invocation, n_sites: usize, out: &mut Outputs) -> CliResult<Vec<PairSpec>> {
    let Some(sec) = &inv.config.extremal else {
        return Ok(Vec::new());
    };
    let mut pairs = sec.pairs.clone();
    for [a, b] in &sec.leaf_pairs {
        for i in 0..n_sites {
            for j in i..n_sites {
                pairs.push(PairSpec { leaf_a: a.clone(), leaf_b: b.clone(), site_i: i, site_j: j });
            }
        }
    }
    let mut seen = std::collections::HashSet::new();
    let mut unique = Vec::with_capacity(pairs.len());
    let mut dups = 0;
    for p in pairs {
        if p.site_i >= n_sites || p.site_j >= n_sites {
            return Err(CliError::validation(format!(
                "pair ({}, {}) refers to a site beyond the {n_sites} available",
                p.site_i, p.site_j
            )));
        }
        if seen.insert(p.clone()) {
            unique.push(p);
        } else {
            dups += 1;
        }
    }
    if dups > 0 {
        out.warnings.push(format!("{dups} duplicate pair(s) removed"));
    }
    Ok(unique)
}

fn cmd_extremal(inv: &Invocation) -> CliResult<Outputs> {
    let cfg = &inv.config;
    let ds = inv.data.as_ref().map(|_| require_data(inv)).transpose()?;
    let mut out = Outputs::default();
    let (_, sites) = resolve_sites(inv, ds.as_ref())?;
    let pairs = expand_pairs(inv, sites.len(), &mut out)?;
    let tree = parameter_tree(inv)?;
    let grid = cfg.knot_grid(&sites)?;
    let empirical = match &ds {
        Some(ds) => {
            let data = standardize(inv, ds, &mut out)?;
            let data = data.aligned_to(&tree)?;
            Some(data)
        }
        None => None,
    };
    let section = cfg.extremal.clone();
    let mut rows: Vec<(String, String, f64, usize, Vec<String>)> = Vec::new();
    for (idx, p) in pairs.iter().enumerate() {
        let (si, sj) = (sites[p.site_i], sites[p.site_j]);
        let dist = si.dist(&sj);
        let model = dependence::extremal_coefficient(&tree, &grid, &p.leaf_a, si, &p.leaf_b, sj)?;
        let key = |kind: &str, theta: String, lo: String, hi: String| {
            vec![
                kind.to_string(),
                p.leaf_a.clone(),
                p.leaf_b.clone(),
                p.site_i.to_string(),
                p.site_j.to_string(),
                dist.to_string(),
                theta,
                lo,
                hi,
            ]
        };
        rows.push((p.leaf_a.clone(), p.leaf_b.clone(), dist, 2 * idx, key("model", model.value.to_string(), String::new(), String::new())));
        if let (Some(data), Some(sec)) = (&empirical, &section) {
            let (a, b) = (tree.leaf_index(&p.leaf_a)?, tree.leaf_index(&p.leaf_b)?);
            let n = data.n_rep;
            let x = &data.values[(a * sites.len() + p.site_i) * n..(a * sites.len() + p.site_i + 1) * n];
            let y = &data.values[(b * sites.len() + p.site_j) * n..(b * sites.len() + p.site_j + 1) * n];
            let ci = sec.ci_method(derive_seed(inv.seed, Domain::Bootstrap, idx as u64));
            let label = format!("{}@{}~{}@{}", p.leaf_a, p.site_i, p.leaf_b, p.site_j);
            match empirical_extremal_coefficient(x, y, sec.estimator, ci, label.clone()) {
                Ok(t) => {
                    out.warnings.extend(t.warnings.iter().map(|w| format!("{label}: {w}")));
                    rows.push((
                        p.leaf_a.clone(),
                        p.leaf_b.clone(),
                        dist,
                        2 * idx + 1,
                        key("empirical", t.estimate.to_string(), t.ci_low.to_string(), t.ci_high.to_string()),
                    ));
                }
                Err(e) => out.warnings.push(format!("{label}: no empirical estimate ({e})")),
            }
        }
    }
    rows.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)).then(a.2.total_cmp(&b.2)).then(a.3.cmp(&b.3)));
    let table: Vec<Vec<String>> = rows.into_iter().map(|r| r.4).collect();
    out.add(
        "extremal.csv",
        data::table_csv(
            &["kind", "leaf_a", "leaf_b", "site_i", "site_j", "distance", "theta", "ci_low", "ci_high"],
            &table,
        )?,
    );
    Ok(out)
}

fn cmd_diagnose(inv: &Invocation) -> CliResult<Outputs> {
    let tree = inv.config.dependence_tree()?;
    let chains = read_chains(inv, &tree)?;
    let max_lag = inv.config.mcmc.as_ref().map_or(50, |m| m.max_lag);
    let mut out = Outputs::default();
    let (mut trace, mut acf, mut report) = (Vec::new(), Vec::new(), Vec::new());
    for (c, chain) in chains.iter().enumerate() {
        for name in chain.parameter_names.iter().map(String::as_str).chain([nestmax::inference::LOG_LIKELIHOOD]) {
            let (rows, lags) = diagnostics::export_trace(chain, name, max_lag)?;
            trace.extend(rows.iter().map(|(i, v)| vec![c.to_string(), name.to_string(), i.to_string(), v.to_string()]));
            acf.extend(lags.iter().map(|(l, v)| vec![c.to_string(), name.to_string(), l.to_string(), v.to_string()]));
            let ess = if rows.len() >= diagnostics::MIN_ESS_LENGTH {
                let d = chain_diagnostics(chain, name, max_lag)?;
                json!({"value": d.ess.value, "degenerate": d.ess.degenerate})
            } else {
                out.warnings.push(format!("chain {c}: {name} too short for ESS"));
                serde_json::Value::Null
            };
            report.push(json!({"chain": c, "parameter": name, "n": rows.len(), "ess": ess}));
        }
    }
    out.add("trace.csv", data::table_csv(&["chain", "parameter", "iteration", "value"], &trace)?);
    out.add("acf.csv", data::table_csv(&["chain", "parameter", "lag", "acf"], &acf)?);
    out.add("diagnostics.json", to_json(&json!({"parameters": report}))?);
    Ok(out)
}

fn cmd_predict(inv: &Invocation) -> CliResult<Outputs> {
    let cfg = &inv.config;
    let section = cfg.predict.as_ref().ok_or_else(|| CliError::validation("configuration has no predict section"))?;
    let tree = cfg.dependence_tree()?;
    let ds = inv.data.as_ref().map(|_| require_data(inv)).transpose()?;
    let (site_ids, sites) = resolve_sites(inv, ds.as_ref())?;
    let chosen: Vec<usize> = if section.sites.is_empty() { (0..sites.len()).collect() } else { section.sites.clone() };
    if let Some(bad) = chosen.iter().find(|&&d| d >= sites.len()) {
        return Err(CliError::validation(format!("site index {bad} beyond the {} available", sites.len())));
    }
    let margins = match section.scale {
        PredictScale::UnitFrechet => None,
        PredictScale::Gev => {
            let path = inv
                .margins
                .as_ref()
                .ok_or_else(|| CliError::validation("GEV-scale prediction needs --margins"))?;
            let ids: Vec<String> = chosen.iter().map(|&d| site_ids[d].clone()).collect();
            Some(data::read_margins(path, &tree.leaf_names(), &ids)?)
        }
    };
    let chains = read_chains(inv, &tree)?;
    let chain = pooled(&chains);
    let grid = cfg.knot_grid(&sites)?;
    let leaves = if section.leaves.is_empty() { tree.leaf_names() } else { section.leaves.clone() };
    let sub_sites: Vec<Site> = chosen.iter().map(|&d| sites[d]).collect();
    let req = PredictiveRequest {
        leaves: &leaves,
        sites: &sub_sites,
        p_grid: &section.p_grid,
        n_sim: section.n_sim,
        margins: margins.as_deref(),
        seed: inv.seed,
    };
    let rows = posterior_predictive_max_quantile(&chain, &tree, &grid, &req)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.p.to_string(), r.gumbel.to_string(), r.z_p.to_string(), r.label.clone().unwrap_or_default()])
        .collect();
    let mut out = Outputs::default();
    out.add("quantiles.csv", data::table_csv(&["p", "gumbel", "z_p", "label"], &table)?);
    Ok(out)
}
