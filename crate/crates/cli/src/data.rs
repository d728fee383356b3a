//! CSV input and output.

use std::collections::HashMap;
use std::path::Path;

use nestmax::inference::{MarginFit, McmcConfig, PosteriorChain, LOG_LIKELIHOOD};
use nestmax::{DependenceTree, GevParams, Site};
use serde::{Deserialize, Serialize};

use crate::config::Coordinates;
use crate::error::{CliError, CliResult};

/// One record of the long-format maxima table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximaRecord {
    pub site_id: String,
    pub x: f64,
    pub y: f64,
    pub leaf: String,
    pub replicate: usize,
    /// Empty or `NA` for a missing cell.
    pub value: Option<String>,
}

/// Block maxima laid out leaf-major, then site, then replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub site_ids: Vec<String>,
    /// Coordinates as given in the file.
    pub raw_coords: Vec<(f64, f64)>,
    pub sites: Vec<Site>,
    pub leaves: Vec<String>,
    pub n_rep: usize,
    pub values: Vec<f64>,
}

impl Dataset {
    pub fn index(&self, leaf: usize, site: usize, rep: usize) -> usize {
        (leaf * self.sites.len() + site) * self.n_rep + rep
    }

    /// Missing-cell counts per `(leaf, site_id)`, only for cells with any.
    pub fn missing_report(&self) -> Vec<(String, String, usize)> {
        let mut out = Vec::new();
        for (k, leaf) in self.leaves.iter().enumerate() {
            for (d, id) in self.site_ids.iter().enumerate() {
                let start = self.index(k, d, 0);
                let n = self.values[start..start + self.n_rep].iter().filter(|v| v.is_nan()).count();
                if n > 0 {
                    out.push((leaf.clone(), id.clone(), n));
                }
            }
        }
        out
    }
}

fn parse_value(v: &Option<String>) -> CliResult<f64> {
    match v.as_deref().map(str::trim) {
        None | Some("") | Some("NA") | Some("NaN") | Some("nan") => Ok(f64::NAN),
        Some(s) => s
            .parse::<f64>()
            .map_err(|_| CliError::validation(format!("value `{s}` is not a number")))
            .and_then(|v| {
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(CliError::validation(format!("value `{s}` is not finite")))
                }
            }),
    }
}

/// Reads a long-format table. Sites and leaves keep their order of first appearance.
pub fn read_maxima(path: &Path, coords: &Coordinates) -> CliResult<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut site_ids: Vec<String> = Vec::new();
    let mut raw_coords = Vec::new();
    let mut site_pos: HashMap<String, usize> = HashMap::new();
    let mut leaves: Vec<String> = Vec::new();
    let mut leaf_pos: HashMap<String, usize> = HashMap::new();
    let mut cells: HashMap<(usize, usize, usize), f64> = HashMap::new();
    let mut n_rep = 0;
    for (line, rec) in reader.deserialize::<MaximaRecord>().enumerate() {
        let rec = rec.map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        let row = line + 2;
        let s = match site_pos.get(&rec.site_id) {
            Some(&s) => {
                if raw_coords[s] != (rec.x, rec.y) {
                    return Err(CliError::validation(format!(
                        "{}:{row}: site `{}` has inconsistent coordinates",
                        path.display(),
                        rec.site_id
                    )));
                }
                s
            }
            None => {
                site_pos.insert(rec.site_id.clone(), site_ids.len());
                site_ids.push(rec.site_id.clone());
                raw_coords.push((rec.x, rec.y));
                site_ids.len() - 1
            }
        };
        let k = *leaf_pos.entry(rec.leaf.clone()).or_insert_with(|| {
            leaves.push(rec.leaf.clone());
            leaves.len() - 1
        });
        let v = parse_value(&rec.value)
            .map_err(|e| CliError::validation(format!("{}:{row}: {e}", path.display())))?;
        if cells.insert((k, s, rec.replicate), v).is_some() {
            return Err(CliError::validation(format!(
                "{}:{row}: duplicate record for leaf `{}`, site `{}`, replicate {}",
                path.display(),
                rec.leaf,
                rec.site_id,
                rec.replicate
            )));
        }
        n_rep = n_rep.max(rec.replicate + 1);
    }
    if cells.is_empty() {
        return Err(CliError::validation(format!("{}: no records", path.display())));
    }
    let sites = raw_coords.iter().map(|(a, b)| coords.site(*a, *b)).collect::<CliResult<Vec<_>>>()?;
    let mut values = vec![f64::NAN; leaves.len() * sites.len() * n_rep];
    for ((k, s, r), v) in cells {
        values[(k * sites.len() + s) * n_rep + r] = v;
    }
    Ok(Dataset { site_ids, raw_coords, sites, leaves, n_rep, values })
}

fn csv_bytes<F>(header: &[&str], fill: F) -> CliResult<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> csv::Result<()>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header).and_then(|_| fill(&mut w)).and_then(|_| w.flush().map_err(Into::into)).map_err(
            |e| CliError::Numerical(format!("CSV encoding failed: {e}")),
        )?;
    }
    Ok(buf)
}

/// Writes the long-format table for `values` laid out like [`Dataset`].
pub fn maxima_csv(ds: &Dataset) -> CliResult<Vec<u8>> {
    csv_bytes(&["site_id", "x", "y", "leaf", "replicate", "value"], |w| {
        for (k, leaf) in ds.leaves.iter().enumerate() {
            for (d, id) in ds.site_ids.iter().enumerate() {
                let (x, y) = ds.raw_coords[d];
                for r in 0..ds.n_rep {
                    let v = ds.values[ds.index(k, d, r)];
                    let v = if v.is_nan() { "NA".to_string() } else { v.to_string() };
                    w.write_record([id.clone(), x.to_string(), y.to_string(), leaf.clone(), r.to_string(), v])?;
                }
            }
        }
        Ok(())
    })
}

/// `(iteration, parameter, value)` rows, including the log-likelihood trace.
pub fn chain_csv(chain: &PosteriorChain) -> CliResult<Vec<u8>> {
    csv_bytes(&["iteration", "parameter", "value"], |w| {
        for (i, row) in chain.samples.iter().enumerate() {
            let it = chain.iterations[i].to_string();
            for (name, v) in chain.parameter_names.iter().zip(row) {
                w.write_record([it.as_str(), name, &v.to_string()])?;
            }
            w.write_record([it.as_str(), LOG_LIKELIHOOD, &chain.log_likelihood[i].to_string()])?;
        }
        Ok(())
    })
}

#[derive(Debug, Deserialize)]
struct ChainRecord {
    iteration: usize,
    parameter: String,
    value: f64,
}

/// Reads a chain file written by [`chain_csv`]; parameter names must match the tree.
pub fn read_chain(path: &Path, tree: &DependenceTree) -> CliResult<PosteriorChain> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let names: Vec<String> = tree
        .nodes()
        .iter()
        .map(|n| n.label.clone())
        .chain(tree.leaves().iter().map(|l| format!("tau_{}", l.name)))
        .collect();
    let col: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut iterations: Vec<usize> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut ll: Vec<f64> = Vec::new();
    for rec in reader.deserialize::<ChainRecord>() {
        let rec = rec.map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        if iterations.last() != Some(&rec.iteration) {
            iterations.push(rec.iteration);
            rows.push(vec![f64::NAN; names.len()]);
            ll.push(f64::NAN);
        }
        let row = rows.last_mut().expect("pushed above");
        if rec.parameter == LOG_LIKELIHOOD {
            *ll.last_mut().expect("pushed above") = rec.value;
        } else {
            let j = col.get(rec.parameter.as_str()).ok_or_else(|| {
                CliError::validation(format!("{}: parameter `{}` is not in the tree", path.display(), rec.parameter))
            })?;
            row[*j] = rec.value;
        }
    }
    if let Some(i) = rows.iter().position(|r| r.iter().any(|v| v.is_nan())) {
        return Err(CliError::validation(format!(
            "{}: iteration {} lacks some parameters",
            path.display(),
            iterations[i]
        )));
    }
    if rows.is_empty() {
        return Err(CliError::validation(format!("{}: empty chain", path.display())));
    }
    let n = rows.len();
    Ok(PosteriorChain {
        parameter_names: names,
        iterations,
        samples: rows,
        log_likelihood: ll,
        acceptance: Vec::new(),
        config: McmcConfig { burn_in: 0, ..McmcConfig::new(n, 0) },
        n_alphas: tree.n_nodes(),
    })
}

pub fn margins_csv(fits: &[MarginFit], site_ids: &[String]) -> CliResult<Vec<u8>> {
    csv_bytes(&["leaf", "site_id", "mu", "sigma", "xi", "n_obs", "converged"], |w| {
        for f in fits {
            let p = f.fit.params;
            w.write_record([
                f.leaf.clone(),
                site_ids[f.site].clone(),
                p.mu.to_string(),
                p.sigma.to_string(),
                p.xi.to_string(),
                f.n_obs.to_string(),
                f.fit.converged.to_string(),
            ])?;
        }
        Ok(())
    })
}

#[derive(Debug, Deserialize)]
struct MarginRecord {
    leaf: String,
    site_id: String,
    mu: f64,
    sigma: f64,
    xi: f64,
}

/// Reads GEV margins for every `(leaf, site)` cell, ordered like the tree's
/// leaves and the given site ids.
pub fn read_margins(path: &Path, leaves: &[String], site_ids: &[String]) -> CliResult<Vec<GevParams>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut map = HashMap::new();
    for rec in reader.deserialize::<MarginRecord>() {
        let r = rec.map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        let g = GevParams::new(r.mu, r.sigma, r.xi)?;
        map.insert((r.leaf, r.site_id), g);
    }
    let mut out = Vec::with_capacity(leaves.len() * site_ids.len());
    for l in leaves {
        for s in site_ids {
            out.push(*map.get(&(l.clone(), s.clone())).ok_or_else(|| {
                CliError::validation(format!("{}: no margins for leaf `{l}` at site `{s}`", path.display()))
            })?);
        }
    }
    Ok(out)
}

/// Generic CSV table from string rows.
pub fn table_csv(header: &[&str], rows: &[Vec<String>]) -> CliResult<Vec<u8>> {
    csv_bytes(header, |w| {
        for r in rows {
            w.write_record(r)?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn round_trip_with_missing_cells() {
        let ds = Dataset {
            site_ids: vec!["a".into(), "b".into()],
            raw_coords: vec![(0.0, 0.0), (1.5, 2.0)],
            sites: vec![Site::new(0.0, 0.0).unwrap(), Site::new(1.5, 2.0).unwrap()],
            leaves: vec!["X".into()],
            n_rep: 2,
            values: vec![1.0, f64::NAN, 0.25, 3.0],
        };
        let bytes = maxima_csv(&ds).unwrap();
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(&bytes).unwrap();
        let back = read_maxima(f.path(), &Coordinates::Planar).unwrap();
        assert_eq!(back.site_ids, ds.site_ids);
        assert_eq!(back.missing_report(), vec![("X".to_string(), "a".to_string(), 1)]);
        assert_eq!(back.values[2..], ds.values[2..]);
    }

    #[test]
    fn duplicates_and_bad_values_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "site_id,x,y,leaf,replicate,value\ns,0,0,A,0,1.0\ns,0,0,A,0,2.0").unwrap();
        assert!(matches!(read_maxima(f.path(), &Coordinates::Planar), Err(CliError::Validation(_))));
        let mut g = tempfile::NamedTempFile::new().unwrap();
        writeln!(g, "site_id,x,y,leaf,replicate,value\ns,0,0,A,0,abc").unwrap();
        assert!(matches!(read_maxima(g.path(), &Coordinates::Planar), Err(CliError::Validation(_))));
        assert!(matches!(
            read_maxima(Path::new("/nonexistent/file.csv"), &Coordinates::Planar),
            Err(CliError::Io { .. })
        ));
    }
}
