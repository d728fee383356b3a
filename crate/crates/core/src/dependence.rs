//! Closed-form dependence summaries.
//!
//! For levels `z_{k;d}` on the unit-Fréchet scale the exponent function is
//! built recursively at every knot `l`: a leaf `k` with path product `p_k`
//! contributes `Σ_d {ω_{k;l}(s_d) / z_{k;d}}^{1/p_k}`, each internal node
//! raises the sum of its children's contributions to its own alpha, and the
//! root values are summed over knots. Depth two gives the two-layer nested
//! logistic mixture, depth three the clustered one. Everything is evaluated
//! in log space because `1/p_k` can be large.

use crate::error::{Error, Result};
use crate::kernel::{KernelBasis, KnotGrid, Site};
use crate::math::{log_add_exp, log_sum_exp};
use crate::tree::DependenceTree;

/// A coordinate of an evaluation point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Level {
    Finite(f64),
    /// `z = ∞`: the coordinate is integrated out.
    Marginalized,
}

impl Level {
    fn log_value(self) -> Result<Option<f64>> {
        match self {
            Level::Finite(z) if z > 0.0 && !z.is_nan() => {
                Ok(if z.is_infinite() { None } else { Some(z.ln()) })
            }
            Level::Finite(z) => Err(Error::domain(format!("level {z} must be positive"))),
            Level::Marginalized => Ok(None),
        }
    }
}

/// Per-leaf, per-site levels; `levels[leaf * D + d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationPoint {
    pub sites: Vec<Site>,
    pub levels: Vec<Level>,
}

impl EvaluationPoint {
    pub fn new(sites: Vec<Site>, levels: Vec<Level>) -> Self {
        EvaluationPoint { sites, levels }
    }

    /// Every coordinate at the same finite level.
    pub fn constant(sites: Vec<Site>, n_leaves: usize, z: f64) -> Self {
        let n = sites.len() * n_leaves;
        EvaluationPoint { sites, levels: vec![Level::Finite(z); n] }
    }

    /// Multiplies every finite level by `t`.
    pub fn scaled(&self, t: f64) -> Self {
        let levels = self
            .levels
            .iter()
            .map(|l| match l {
                Level::Finite(z) => Level::Finite(z * t),
                Level::Marginalized => Level::Marginalized,
            })
            .collect();
        EvaluationPoint { sites: self.sites.clone(), levels }
    }
}

/// `log ω` tables for every leaf at a set of sites: `[leaf][d * L + l]`.
pub(crate) fn leaf_log_weights(tree: &DependenceTree, grid: &KnotGrid, sites: &[Site]) -> Result<Vec<Vec<f64>>> {
    tree.leaves()
        .iter()
        .map(|leaf| Ok(KernelBasis::new(grid, leaf.tau)?.log_weight_table(sites)))
        .collect()
}

/// Exponent function `V` at `point`.
pub fn exponent(tree: &DependenceTree, grid: &KnotGrid, point: &EvaluationPoint) -> Result<f64> {
    let d_count = point.sites.len();
    let k_count = tree.n_leaves();
    if point.levels.len() != d_count * k_count {
        return Err(Error::Structure(format!(
            "evaluation point has {} levels, expected {} leaves x {} sites",
            point.levels.len(),
            k_count,
            d_count
        )));
    }
    let log_z: Vec<Option<f64>> =
        point.levels.iter().map(|l| l.log_value()).collect::<Result<_>>()?;
    let log_w = leaf_log_weights(tree, grid, &point.sites)?;
    let l_count = grid.len();
    let inv_p: Vec<f64> = (0..k_count).map(|k| 1.0 / tree.path_product_of(k)).collect();

    let mut total = 0.0;
    let mut leaf_terms = vec![f64::NEG_INFINITY; k_count];
    for l in 0..l_count {
        for k in 0..k_count {
            leaf_terms[k] = log_sum_exp((0..d_count).filter_map(|d| {
                let lz = log_z[k * d_count + d]?;
                let lw = log_w[k][d * l_count + l];
                (lw > f64::NEG_INFINITY).then(|| (lw - lz) * inv_p[k])
            }));
        }
        let root = log_node_value(tree, 0, &leaf_terms);
        if root > f64::NEG_INFINITY {
            total += root.exp();
        }
    }
    Ok(total)
}

/// `log` of a node's contribution given the leaves' log contributions.
fn log_node_value(tree: &DependenceTree, node: usize, leaf_terms: &[f64]) -> f64 {
    let n = &tree.nodes()[node];
    let mut acc = f64::NEG_INFINITY;
    for &leaf in &n.child_leaves {
        acc = log_add_exp(acc, leaf_terms[leaf]);
    }
    for &child in &n.child_nodes {
        acc = log_add_exp(acc, log_node_value(tree, child, leaf_terms));
    }
    if acc == f64::NEG_INFINITY {
        acc
    } else {
        n.alpha * acc
    }
}

/// Joint distribution function `exp(-V)`.
pub fn joint_cdf(tree: &DependenceTree, grid: &KnotGrid, point: &EvaluationPoint) -> Result<f64> {
    Ok((-exponent(tree, grid, point)?).exp())
}

/// Pairwise extremal coefficient with its descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtremalCoefficient {
    pub value: f64,
    pub leaf_a: String,
    pub site_i: Site,
    pub leaf_b: String,
    pub site_j: Site,
}

fn theta_from_log_weights(log_wa: &[f64], log_wb: &[f64], m: f64) -> f64 {
    let theta: f64 = log_wa
        .iter()
        .zip(log_wb)
        .map(|(a, b)| {
            let s = log_add_exp(a / m, b / m);
            if s == f64::NEG_INFINITY {
                0.0
            } else {
                (m * s).exp()
            }
        })
        .sum();
    theta.clamp(1.0, 2.0)
}

/// `θ = Σ_l {ω_a,l(s_i)^{1/m} + ω_b,l(s_j)^{1/m}}^m` with `m` the product of
/// alphas down to the pair's most recent common ancestor.
pub fn extremal_coefficient(
    tree: &DependenceTree,
    grid: &KnotGrid,
    leaf_a: &str,
    site_i: Site,
    leaf_b: &str,
    site_j: Site,
) -> Result<ExtremalCoefficient> {
    let a = tree.leaf_index(leaf_a)?;
    let b = tree.leaf_index(leaf_b)?;
    let value = extremal_coefficient_of(tree, grid, a, &site_i, b, &site_j)?;
    Ok(ExtremalCoefficient {
        value,
        leaf_a: leaf_a.to_string(),
        site_i,
        leaf_b: leaf_b.to_string(),
        site_j,
    })
}

pub(crate) fn extremal_coefficient_of(
    tree: &DependenceTree,
    grid: &KnotGrid,
    a: usize,
    site_i: &Site,
    b: usize,
    site_j: &Site,
) -> Result<f64> {
    let m = tree.mrca_product_of(a, b);
    let wa = KernelBasis::new(grid, tree.leaves()[a].tau)?.log_weights(site_i);
    let wb = KernelBasis::new(grid, tree.leaves()[b].tau)?.log_weights(site_j);
    Ok(theta_from_log_weights(&wa, &wb, m))
}

/// One row of an extremal-coefficient curve.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtremalRow {
    pub leaf_a: String,
    pub leaf_b: String,
    pub site_i: usize,
    pub site_j: usize,
    pub distance: f64,
    pub theta: f64,
}

/// Model extremal coefficients for a list of site-index pairs, sorted by
/// distance (ties keep input order).
pub fn extremal_curve(
    tree: &DependenceTree,
    grid: &KnotGrid,
    leaf_a: &str,
    leaf_b: &str,
    sites: &[Site],
    pairs: &[(usize, usize)],
) -> Result<Vec<ExtremalRow>> {
    let a = tree.leaf_index(leaf_a)?;
    let b = tree.leaf_index(leaf_b)?;
    let m = tree.mrca_product_of(a, b);
    let wa = KernelBasis::new(grid, tree.leaves()[a].tau)?.log_weight_table(sites);
    let wb = KernelBasis::new(grid, tree.leaves()[b].tau)?.log_weight_table(sites);
    let l = grid.len();
    let mut rows = pairs
        .iter()
        .map(|&(i, j)| {
            if i >= sites.len() || j >= sites.len() {
                return Err(Error::Structure(format!(
                    "site pair ({i}, {j}) out of range for {} sites",
                    sites.len()
                )));
            }
            Ok(ExtremalRow {
                leaf_a: leaf_a.to_string(),
                leaf_b: leaf_b.to_string(),
                site_i: i,
                site_j: j,
                distance: sites[i].dist(&sites[j]),
                theta: theta_from_log_weights(&wa[i * l..(i + 1) * l], &wb[j * l..(j + 1) * l], m),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|x, y| x.distance.total_cmp(&y.distance));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{make_regular_grid, Rect};
    use crate::tree::TreeSpec;

    fn figure_tree() -> DependenceTree {
        let cluster = |t: usize| {
            TreeSpec::node(
                0.7,
                (1..=2)
                    .map(|k| TreeSpec::node(0.4, vec![TreeSpec::leaf(format!("Z{t}{k}"), 0.1)]))
                    .collect(),
            )
        };
        DependenceTree::new(&TreeSpec::node(0.9, vec![cluster(1), cluster(2)])).unwrap()
    }

    fn grid() -> KnotGrid {
        make_regular_grid(Rect::new(0.0, 1.0, 0.0, 1.0).unwrap(), 10, 10).unwrap()
    }

    fn sites() -> Vec<Site> {
        vec![Site { x: 0.2, y: 0.3 }, Site { x: 0.5, y: 0.5 }, Site { x: 0.9, y: 0.1 }]
    }

    #[test]
    fn independence_gives_sum_of_reciprocals() {
        let spec = TreeSpec::node(
            1.0,
            vec![
                TreeSpec::node(1.0, vec![TreeSpec::leaf("A", 0.3)]),
                TreeSpec::leaf("B", 0.2),
            ],
        );
        let tree = DependenceTree::new(&spec).unwrap();
        let levels = [0.5, 2.0, 3.0, 0.7, 1.1, 9.0];
        let point = EvaluationPoint::new(sites(), levels.iter().map(|z| Level::Finite(*z)).collect());
        let v = exponent(&tree, &grid(), &point).unwrap();
        let expected: f64 = levels.iter().map(|z| 1.0 / z).sum();
        assert!((v - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn single_free_coordinate_is_unit_frechet() {
        let tree = figure_tree();
        let mut levels = vec![Level::Marginalized; 4 * 3];
        levels[7] = Level::Finite(2.5);
        let point = EvaluationPoint::new(sites(), levels);
        let v = exponent(&tree, &grid(), &point).unwrap();
        assert!((v - 0.4).abs() < 1e-14, "{v}");
        // infinite float levels behave like the explicit marker
        let mut levels = vec![Level::Finite(f64::INFINITY); 12];
        levels[7] = Level::Finite(2.5);
        let v2 = exponent(&tree, &grid(), &EvaluationPoint::new(sites(), levels)).unwrap();
        assert_eq!(v, v2);
    }

    #[test]
    fn non_positive_level_is_rejected() {
        let tree = figure_tree();
        let mut point = EvaluationPoint::constant(sites(), 4, 1.0);
        point.levels[3] = Level::Finite(0.0);
        assert!(matches!(exponent(&tree, &grid(), &point), Err(Error::Domain(_))));
        let short = EvaluationPoint::constant(sites(), 3, 1.0);
        assert!(matches!(exponent(&tree, &grid(), &short), Err(Error::Structure(_))));
    }

    #[test]
    fn cdf_edge_cases() {
        let tree = DependenceTree::new(&TreeSpec::node(0.5, vec![TreeSpec::leaf("A", 1.0)])).unwrap();
        let one = EvaluationPoint::constant(vec![Site { x: 0.1, y: 0.1 }], 1, 1.0);
        assert!((joint_cdf(&tree, &grid(), &one).unwrap() - (-1f64).exp()).abs() < 1e-15);
        let inf = EvaluationPoint::new(vec![Site { x: 0.1, y: 0.1 }], vec![Level::Marginalized]);
        assert_eq!(joint_cdf(&tree, &grid(), &inf).unwrap(), 1.0);
    }

    #[test]
    fn coincident_site_limits() {
        let tree = figure_tree();
        let g = grid();
        let s = Site { x: 0.43, y: 0.61 };
        let same = extremal_coefficient(&tree, &g, "Z11", s, "Z11", s).unwrap().value;
        let intra = extremal_coefficient(&tree, &g, "Z11", s, "Z12", s).unwrap().value;
        let inter = extremal_coefficient(&tree, &g, "Z11", s, "Z21", s).unwrap().value;
        assert!((same - 2f64.powf(0.252)).abs() < 1e-10);
        assert!((intra - 2f64.powf(0.63)).abs() < 1e-10);
        assert!((inter - 2f64.powf(0.9)).abs() < 1e-10);
        assert!((same - 1.1908).abs() < 1e-4 && (inter - 1.8661).abs() < 1e-4);
    }

    #[test]
    fn single_knot_theta_is_site_free() {
        let tree = figure_tree();
        let g = make_regular_grid(Rect::new(0.0, 1.0, 0.0, 1.0).unwrap(), 1, 1).unwrap();
        let t = extremal_coefficient(&tree, &g, "Z12", sites()[0], "Z21", sites()[2]).unwrap();
        assert!((t.value - 2f64.powf(0.9)).abs() < 1e-12);
    }

    #[test]
    fn closed_form_matches_padded_exponent() {
        let tree = figure_tree();
        let g = grid();
        let s = sites();
        for (a, b, i, j) in [(0, 0, 0, 1), (0, 1, 0, 2), (1, 3, 2, 1), (2, 2, 1, 1)] {
            let theta = extremal_coefficient_of(&tree, &g, a, &s[i], b, &s[j]).unwrap();
            let pair_sites = vec![s[i], s[j]];
            let mut levels = vec![Level::Marginalized; 4 * 2];
            if a == b && i == j {
                continue;
            }
            levels[a * 2] = Level::Finite(1.0);
            levels[b * 2 + 1] = Level::Finite(1.0);
            let v = exponent(&tree, &g, &EvaluationPoint::new(pair_sites, levels)).unwrap();
            assert!((theta - v).abs() < 1e-12, "{theta} vs {v}");
        }
    }

    #[test]
    fn curve_rows_are_sorted_and_deterministic() {
        let tree = figure_tree();
        let s = sites();
        let rows = extremal_curve(&tree, &grid(), "Z11", "Z11", &s, &[(0, 2), (1, 1), (0, 1), (0, 2)])
            .unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.windows(2).all(|w| w[0].distance <= w[1].distance));
        assert_eq!(rows[0].distance, 0.0);
        assert!((rows[0].theta - 2f64.powf(0.252)).abs() < 1e-10);
        assert_eq!(rows[2], rows[3]);
        assert!(rows.iter().all(|r| r.theta <= 2.0 && r.theta >= 2f64.powf(0.252) - 1e-12));
        assert!(extremal_curve(&tree, &grid(), "Z11", "Z11", &s, &[(0, 9)]).is_err());
    }
}
