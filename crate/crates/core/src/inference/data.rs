use crate::error::{Error, Result};
use crate::kernel::Site;
use crate::simulate::{MaxStableSample, Scale};
use crate::tree::DependenceTree;

/// Block maxima on the unit-Fréchet scale, leaf-major then site then
/// replicate. Missing cells hold `NaN` and are left out of the likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct MaximaData {
    pub leaves: Vec<String>,
    pub sites: Vec<Site>,
    pub n_rep: usize,
    pub values: Vec<f64>,
}

impl MaximaData {
    pub fn new(leaves: Vec<String>, sites: Vec<Site>, n_rep: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != leaves.len() * sites.len() * n_rep {
            return Err(Error::Structure(format!(
                "{} values for {} leaves x {} sites x {} replicates",
                values.len(),
                leaves.len(),
                sites.len(),
                n_rep
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_nan() && !(**v > 0.0 && v.is_finite())) {
            return Err(Error::domain(format!("unit-Fréchet value {v} must be positive and finite")));
        }
        Ok(MaximaData { leaves, sites, n_rep, values })
    }

    /// A dataset with no observed cells; the posterior equals the prior.
    pub fn empty(leaves: Vec<String>, sites: Vec<Site>, n_rep: usize) -> Self {
        let n = leaves.len() * sites.len() * n_rep;
        MaximaData { leaves, sites, n_rep, values: vec![f64::NAN; n] }
    }

    #[inline]
    pub fn get(&self, leaf: usize, site: usize, rep: usize) -> f64 {
        self.values[(leaf * self.sites.len() + site) * self.n_rep + rep]
    }

    pub fn n_missing(&self) -> usize {
        self.values.iter().filter(|v| v.is_nan()).count()
    }

    /// Largest distance between two sites (`h_max`).
    pub fn max_distance(&self) -> f64 {
        let mut best: f64 = 0.0;
        for (i, a) in self.sites.iter().enumerate() {
            for b in &self.sites[i + 1..] {
                best = best.max(a.dist(b));
            }
        }
        best
    }

    /// Reorders leaves to match the tree; the leaf sets must coincide.
    pub fn aligned_to(&self, tree: &DependenceTree) -> Result<MaximaData> {
        let names = tree.leaf_names();
        let missing: Vec<&String> = names.iter().filter(|n| !self.leaves.contains(n)).collect();
        let extra: Vec<&String> = self.leaves.iter().filter(|n| !names.contains(n)).collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(Error::Structure(format!(
                "data and tree leaves differ: missing from data {missing:?}, not in tree {extra:?}"
            )));
        }
        let block = self.sites.len() * self.n_rep;
        let mut values = Vec::with_capacity(self.values.len());
        for name in &names {
            let k = self.leaves.iter().position(|l| l == name).expect("checked above");
            values.extend_from_slice(&self.values[k * block..(k + 1) * block]);
        }
        Ok(MaximaData { leaves: names, sites: self.sites.clone(), n_rep: self.n_rep, values })
    }
}

impl TryFrom<&MaxStableSample> for MaximaData {
    type Error = Error;
    fn try_from(s: &MaxStableSample) -> Result<Self> {
        if s.scale != Scale::UnitFrechet {
            return Err(Error::domain("inference data must be on the unit-Fréchet scale"));
        }
        MaximaData::new(s.leaves.clone(), s.sites.clone(), s.n_rep, s.values.clone())
    }
}
