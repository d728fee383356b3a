//! JSON run configuration.

use std::path::{Path, PathBuf};

use nestmax::diagnostics::{CiMethod, ThetaEstimator};
use nestmax::kernel::make_regular_grid;
use nestmax::{DependenceTree, KnotGrid, Rect, Site, TreeSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

const EARTH_RADIUS_KM: f64 = 6371.0088;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub tree: TreeSpec,
    pub knots: PointSetSpec,
    #[serde(default)]
    pub sites: Option<PointSetSpec>,
    #[serde(default)]
    pub coordinates: Coordinates,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub margins: Option<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub simulate: Option<SimulateSection>,
    #[serde(default)]
    pub mcmc: Option<McmcSection>,
    #[serde(default)]
    pub extremal: Option<ExtremalSection>,
    #[serde(default)]
    pub predict: Option<PredictSection>,
}

/// A set of planar points: a regular lattice of cell centres or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PointSetSpec {
    Regular {
        nx: usize,
        ny: usize,
        /// `[x_min, x_max, y_min, y_max]`; defaults to the sites' bounding box.
        #[serde(default)]
        bounds: Option<[f64; 4]>,
    },
    Points(Vec<[f64; 2]>),
}

/// How input coordinates map to the model plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Coordinates {
    #[default]
    Planar,
    /// `(lon, lat)` in degrees, projected equirectangularly to km about `lat0`.
    Lonlat { lat0: f64 },
}

impl Coordinates {
    pub fn project(&self, a: f64, b: f64) -> (f64, f64) {
        match *self {
            Coordinates::Planar => (a, b),
            Coordinates::Lonlat { lat0 } => {
                let k = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
                (k * a * lat0.to_radians().cos(), k * b)
            }
        }
    }

    pub fn site(&self, a: f64, b: f64) -> CliResult<Site> {
        if let Coordinates::Lonlat { .. } = self {
            if !(-180.0..=360.0).contains(&a) || !(-90.0..=90.0).contains(&b) {
                return Err(CliError::validation(format!("({a}, {b}) is not a lon/lat pair")));
            }
        }
        let (x, y) = self.project(a, b);
        Ok(Site::new(x, y)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub n_rep: usize,
}

/// A starting point for one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainStart {
    #[serde(default)]
    pub alphas: Option<Vec<f64>>,
    #[serde(default)]
    pub taus: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcSection {
    pub iterations: usize,
    #[serde(default)]
    pub burn_in: Option<usize>,
    #[serde(default = "one")]
    pub thinning: usize,
    #[serde(default)]
    pub adapt_batch: Option<usize>,
    #[serde(default)]
    pub target_acceptance: Option<f64>,
    #[serde(default)]
    pub fix_taus: bool,
    /// Chain `c` starts from `starts[c % len]`.
    #[serde(default)]
    pub starts: Vec<ChainStart>,
    #[serde(default = "default_max_lag")]
    pub max_lag: usize,
}

fn one() -> usize {
    1
}

fn default_max_lag() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub leaf_a: String,
    pub leaf_b: String,
    pub site_i: usize,
    pub site_j: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CiSpec {
    #[default]
    Delta,
    Bootstrap {
        #[serde(default = "default_resamples")]
        resamples: usize,
    },
}

fn default_resamples() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtremalSection {
    #[serde(default)]
    pub pairs: Vec<PairSpec>,
    /// Every site pair `i <= j` for each listed leaf pair.
    #[serde(default)]
    pub leaf_pairs: Vec<[String; 2]>,
    #[serde(default = "default_estimator")]
    pub estimator: ThetaEstimator,
    #[serde(default)]
    pub ci: CiSpec,
}

fn default_estimator() -> ThetaEstimator {
    ThetaEstimator::Madogram
}

impl ExtremalSection {
    pub fn ci_method(&self, seed: u64) -> CiMethod {
        match self.ci {
            CiSpec::Delta => CiMethod::Delta,
            CiSpec::Bootstrap { resamples } => CiMethod::Bootstrap { resamples, seed },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictScale {
    #[default]
    UnitFrechet,
    Gev,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictSection {
    /// Defaults to every leaf.
    #[serde(default)]
    pub leaves: Vec<String>,
    /// Site indices; defaults to every site.
    #[serde(default)]
    pub sites: Vec<usize>,
    pub p_grid: Vec<f64>,
    pub n_sim: usize,
    #[serde(default)]
    pub scale: PredictScale,
}

impl RunConfig {
    /// Parses and fully validates a configuration file.
    pub fn load(path: &Path) -> CliResult<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let cfg: RunConfig = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok((cfg, bytes))
    }

    pub fn validate(&self) -> CliResult<()> {
        let tree = self.dependence_tree()?;
        if let Some(m) = &self.mcmc {
            for (c, s) in m.starts.iter().enumerate() {
                if s.alphas.as_ref().is_some_and(|a| a.len() != tree.n_nodes()) {
                    return Err(CliError::validation(format!(
                        "start {c}: need {} alphas",
                        tree.n_nodes()
                    )));
                }
                if s.taus.as_ref().is_some_and(|t| t.len() != tree.n_leaves()) {
                    return Err(CliError::validation(format!("start {c}: need {} taus", tree.n_leaves())));
                }
            }
            self.mcmc_config(0, 0)?.validate()?;
        }
        if let Some(s) = &self.simulate {
            if s.n_rep == 0 {
                return Err(CliError::validation("simulate.n_rep must be positive"));
            }
        }
        if let Some(p) = &self.predict {
            if p.n_sim == 0 || p.p_grid.is_empty() {
                return Err(CliError::validation("predict needs n_sim > 0 and a non-empty p_grid"));
            }
            if let Some(bad) = p.p_grid.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
                return Err(CliError::validation(format!("probability {bad} outside (0, 1)")));
            }
            for l in &p.leaves {
                tree.leaf_index(l)?;
            }
        }
        if let Some(e) = &self.extremal {
            for p in &e.pairs {
                tree.leaf_index(&p.leaf_a)?;
                tree.leaf_index(&p.leaf_b)?;
            }
            for [a, b] in &e.leaf_pairs {
                tree.leaf_index(a)?;
                tree.leaf_index(b)?;
            }
        }
        for spec in std::iter::once(&self.knots).chain(self.sites.as_ref()) {
            match spec {
                PointSetSpec::Regular { nx, ny, .. } if *nx == 0 || *ny == 0 => {
                    return Err(CliError::validation("regular grids need nx, ny >= 1"))
                }
                PointSetSpec::Points(p) if p.is_empty() => return Err(CliError::validation("empty point list")),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn dependence_tree(&self) -> CliResult<DependenceTree> {
        Ok(DependenceTree::new(&self.tree)?)
    }

    fn points(&self, spec: &PointSetSpec, fallback: Option<&[Site]>) -> CliResult<Vec<Site>> {
        match spec {
            PointSetSpec::Points(p) => p.iter().map(|[a, b]| self.coordinates.site(*a, *b)).collect(),
            PointSetSpec::Regular { nx, ny, bounds } => {
                let rect = match (bounds, fallback) {
                    (Some([x0, x1, y0, y1]), _) => {
                        let (a0, b0) = self.coordinates.project(*x0, *y0);
                        let (a1, b1) = self.coordinates.project(*x1, *y1);
                        Rect::new(a0, a1, b0, b1)?
                    }
                    (None, Some(sites)) => Rect::bounding(sites)?,
                    (None, None) => {
                        return Err(CliError::validation("regular grid without bounds needs sites to bound it"))
                    }
                };
                Ok(make_regular_grid(rect, *nx, *ny)?.knots().to_vec())
            }
        }
    }

    /// Sites from the configuration, if declared.
    pub fn config_sites(&self) -> CliResult<Option<Vec<Site>>> {
        self.sites.as_ref().map(|s| self.points(s, None)).transpose()
    }

    /// Knot grid, bounded by `sites` when the configuration gives no bounds.
    pub fn knot_grid(&self, sites: &[Site]) -> CliResult<KnotGrid> {
        Ok(KnotGrid::from_knots(self.points(&self.knots, Some(sites))?)?)
    }

    pub fn mcmc_config(&self, chain: usize, seed: u64) -> CliResult<nestmax::inference::McmcConfig> {
        let m = self.mcmc.as_ref().ok_or_else(|| CliError::validation("configuration has no mcmc section"))?;
        let mut cfg = nestmax::inference::McmcConfig::new(m.iterations, seed);
        if let Some(b) = m.burn_in {
            cfg.burn_in = b;
        }
        cfg.thinning = m.thinning;
        if let Some(b) = m.adapt_batch {
            cfg.adapt_batch = b;
        }
        if let Some(t) = m.target_acceptance {
            cfg.target_acceptance = t;
        }
        cfg.fix_taus = m.fix_taus;
        if !m.starts.is_empty() {
            let s = &m.starts[chain % m.starts.len()];
            cfg.initial_alphas = s.alphas.clone();
            cfg.initial_taus = s.taus.clone();
        }
        Ok(cfg)
    }
}
