//! Dependence trees.
//!
//! Internal nodes carry a dependence parameter `α ∈ (0, 1]` and own one
//! latent stable amplitude per knot; leaves are the spatial variables and
//! carry a kernel bandwidth. A leaf's *path product* is the product of the
//! alphas from the root down to its parent. The two-layer model is a root
//! whose children are single-leaf nodes (`α_k`); the three-layer model adds
//! a cluster level (`α_t`) in between. Deeper trees follow the same rule.
//!
//! On disk a tree is nested JSON: `{"alpha": a, "children": [...]}` for
//! internal nodes and `{"leaf": "NAME", "tau": t}` for leaves.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serialized tree node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum TreeSpec {
    Leaf { leaf: String, tau: f64 },
    Internal { alpha: f64, children: Vec<TreeSpec> },
}

impl TreeSpec {
    pub fn leaf(name: impl Into<String>, tau: f64) -> Self {
        TreeSpec::Leaf { leaf: name.into(), tau }
    }

    pub fn node(alpha: f64, children: Vec<TreeSpec>) -> Self {
        TreeSpec::Internal { alpha, children }
    }

    /// Two-layer tree: a root `α_0` over one `α_k` node per leaf.
    pub fn two_layer(alpha_0: f64, leaves: &[(&str, f64, f64)]) -> Self {
        TreeSpec::node(
            alpha_0,
            leaves
                .iter()
                .map(|(name, alpha, tau)| TreeSpec::node(*alpha, vec![TreeSpec::leaf(*name, *tau)]))
                .collect(),
        )
    }
}

/// Every invariant violated by `spec`, in depth-first order.
pub fn validate(spec: &TreeSpec) -> std::result::Result<(), Vec<String>> {
    let mut errors = Vec::new();
    let mut names = BTreeSet::new();
    match spec {
        TreeSpec::Leaf { .. } => {
            errors.push("root must be an internal node with an alpha".to_string())
        }
        TreeSpec::Internal { .. } => validate_node(spec, "root", &mut names, &mut errors),
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

fn validate_node(
    spec: &TreeSpec,
    path: &str,
    names: &mut BTreeSet<String>,
    errors: &mut Vec<String>,
) {
    match spec {
        TreeSpec::Leaf { leaf, tau } => {
            if leaf.is_empty() {
                errors.push(format!("{path}: leaf name is empty"));
            } else if !names.insert(leaf.clone()) {
                errors.push(format!("{path}: duplicate leaf `{leaf}`"));
            }
            if !(*tau > 0.0 && tau.is_finite()) {
                errors.push(format!("{path}: leaf `{leaf}` has bandwidth {tau}, must be > 0"));
            }
        }
        TreeSpec::Internal { alpha, children } => {
            if !(*alpha > 0.0 && *alpha <= 1.0) {
                errors.push(format!("{path}: alpha {alpha} out of (0,1]"));
            }
            if children.is_empty() {
                errors.push(format!("{path}: internal node has no children"));
            }
            for (i, child) in children.iter().enumerate() {
                validate_node(child, &format!("{path}/{}", i + 1), names, errors);
            }
        }
    }
}

/// Internal node of a compiled tree.
#[derive(Debug, Clone, PartialEq)]
pub struct InternalNode {
    pub alpha: f64,
    pub parent: Option<usize>,
    pub depth: usize,
    /// `alpha_0` for the root, `alpha_t`, `alpha_t.k`, ... below it.
    pub label: String,
    pub child_nodes: Vec<usize>,
    pub child_leaves: Vec<usize>,
}

/// Leaf variable of a compiled tree.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafNode {
    pub name: String,
    pub tau: f64,
    /// Internal nodes from the root down to the parent.
    pub path: Vec<usize>,
}

/// Product of alphas along a root-to-leaf path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathProduct {
    pub leaf: String,
    pub product: f64,
}

/// A validated tree, stored flat. Internal nodes are numbered in depth-first
/// preorder (root = 0); leaves in depth-first order.
#[derive(Debug, Clone, PartialEq)]
pub struct DependenceTree {
    nodes: Vec<InternalNode>,
    leaves: Vec<LeafNode>,
    index: HashMap<String, usize>,
}

impl DependenceTree {
    pub fn new(spec: &TreeSpec) -> Result<Self> {
        validate(spec).map_err(Error::InvalidTree)?;
        let mut tree = DependenceTree { nodes: Vec::new(), leaves: Vec::new(), index: HashMap::new() };
        tree.compile(spec, None, &mut Vec::new(), "alpha_0".to_string());
        tree.index = tree.leaves.iter().enumerate().map(|(i, l)| (l.name.clone(), i)).collect();
        Ok(tree)
    }

    fn compile(&mut self, spec: &TreeSpec, parent: Option<usize>, path: &mut Vec<usize>, label: String) {
        match spec {
            TreeSpec::Leaf { leaf, tau } => {
                let id = self.leaves.len();
                self.leaves.push(LeafNode { name: leaf.clone(), tau: *tau, path: path.clone() });
                if let Some(p) = parent {
                    self.nodes[p].child_leaves.push(id);
                }
            }
            TreeSpec::Internal { alpha, children } => {
                let id = self.nodes.len();
                self.nodes.push(InternalNode {
                    alpha: *alpha,
                    parent,
                    depth: path.len(),
                    label: label.clone(),
                    child_nodes: Vec::new(),
                    child_leaves: Vec::new(),
                });
                if let Some(p) = parent {
                    self.nodes[p].child_nodes.push(id);
                }
                path.push(id);
                for (i, child) in children.iter().enumerate() {
                    let child_label = if id == 0 {
                        format!("alpha_{}", i + 1)
                    } else {
                        format!("{label}.{}", i + 1)
                    };
                    self.compile(child, Some(id), path, child_label);
                }
                path.pop();
            }
        }
    }

    /// Rebuilds the nested form, preserving child order.
    pub fn to_spec(&self) -> TreeSpec {
        self.spec_of(0)
    }

    fn spec_of(&self, node: usize) -> TreeSpec {
        // children were pushed in order, but nodes and leaves live in separate lists;
        // recover the interleaving from depth-first numbering
        let n = &self.nodes[node];
        let mut children: Vec<(usize, TreeSpec)> = Vec::new();
        for &c in &n.child_nodes {
            children.push((self.first_leaf_under(c), self.spec_of(c)));
        }
        for &l in &n.child_leaves {
            let leaf = &self.leaves[l];
            children.push((l, TreeSpec::leaf(leaf.name.clone(), leaf.tau)));
        }
        children.sort_by_key(|(k, _)| *k);
        TreeSpec::node(n.alpha, children.into_iter().map(|(_, s)| s).collect())
    }

    fn first_leaf_under(&self, node: usize) -> usize {
        self.leaves
            .iter()
            .position(|l| l.path.contains(&node))
            .unwrap_or(usize::MAX)
    }

    pub fn nodes(&self) -> &[InternalNode] {
        &self.nodes
    }

    pub fn leaves(&self) -> &[LeafNode] {
        &self.leaves
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn leaf_names(&self) -> Vec<String> {
        self.leaves.iter().map(|l| l.name.clone()).collect()
    }

    pub fn leaf_index(&self, name: &str) -> Result<usize> {
        self.index.get(name).copied().ok_or_else(|| Error::UnknownLeaf(name.to_string()))
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.alpha).collect()
    }

    pub fn taus(&self) -> Vec<f64> {
        self.leaves.iter().map(|l| l.tau).collect()
    }

    /// Copy of the tree with new parameter values (same topology).
    pub fn with_parameters(&self, alphas: &[f64], taus: &[f64]) -> Result<Self> {
        if alphas.len() != self.nodes.len() || taus.len() != self.leaves.len() {
            return Err(Error::Structure(format!(
                "expected {} alphas and {} taus, got {} and {}",
                self.nodes.len(),
                self.leaves.len(),
                alphas.len(),
                taus.len()
            )));
        }
        let mut out = self.clone();
        for (n, a) in out.nodes.iter_mut().zip(alphas) {
            n.alpha = *a;
        }
        for (l, t) in out.leaves.iter_mut().zip(taus) {
            l.tau = *t;
        }
        let spec = out.to_spec();
        validate(&spec).map_err(Error::InvalidTree)?;
        Ok(out)
    }

    /// Leaves whose path passes through `node`.
    pub fn leaves_under(&self, node: usize) -> Vec<usize> {
        (0..self.leaves.len()).filter(|&l| self.leaves[l].path.contains(&node)).collect()
    }

    pub fn path_product_of(&self, leaf: usize) -> f64 {
        self.leaves[leaf].path.iter().map(|&n| self.nodes[n].alpha).product()
    }

    pub fn path_product(&self, leaf: &str) -> Result<PathProduct> {
        let id = self.leaf_index(leaf)?;
        Ok(PathProduct { leaf: leaf.to_string(), product: self.path_product_of(id) })
    }

    /// Product of alphas from the root down to, and including, the most
    /// recent common ancestor of the two leaves.
    pub fn mrca_product_of(&self, a: usize, b: usize) -> f64 {
        let (pa, pb) = (&self.leaves[a].path, &self.leaves[b].path);
        pa.iter()
            .zip(pb)
            .take_while(|(x, y)| x == y)
            .map(|(n, _)| self.nodes[*n].alpha)
            .product()
    }

    pub fn mrca_product(&self, leaf_a: &str, leaf_b: &str) -> Result<f64> {
        Ok(self.mrca_product_of(self.leaf_index(leaf_a)?, self.leaf_index(leaf_b)?))
    }

    /// Exponent applied to each path node's amplitude when composing the
    /// leaf's effective amplitude: `1 / Π(alphas strictly below the node)`.
    /// Aligned with `leaves()[leaf].path`.
    pub fn amplitude_exponents(&self, leaf: usize) -> Vec<f64> {
        let path = &self.leaves[leaf].path;
        let mut out = vec![1.0; path.len()];
        let mut below = 1.0;
        for (i, &n) in path.iter().enumerate().rev() {
            out[i] = 1.0 / below;
            below *= self.nodes[n].alpha;
        }
        out
    }

    /// Internal nodes ordered deepest first, root last; ties keep preorder.
    pub fn bottom_up_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.nodes.len()).collect();
        order.sort_by(|a, b| self.nodes[*b].depth.cmp(&self.nodes[*a].depth).then(a.cmp(b)));
        order
    }

    /// Largest number of internal nodes on any root-to-leaf path.
    pub fn depth(&self) -> usize {
        self.leaves.iter().map(|l| l.path.len()).max().unwrap_or(0)
    }
}
