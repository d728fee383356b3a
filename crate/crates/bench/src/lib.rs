//! Shared fixtures for the benchmarks.

use nestmax::inference::{MaximaData, Prior};
use nestmax::kernel::make_regular_grid;
use nestmax::simulate::simulate;
use nestmax::{DependenceTree, KnotGrid, Rect, TreeSpec};

/// The two-leaf recovery study: 5x5 knots and sites over `[0, 6]^2`, 20 replicates.
pub struct Study {
    pub tree: DependenceTree,
    pub grid: KnotGrid,
    pub data: MaximaData,
    pub prior: Prior,
}

pub fn t1_study(seed: u64) -> Study {
    let tree = DependenceTree::new(&TreeSpec::two_layer(0.6, &[("Z1", 0.5, 3.0), ("Z2", 0.8, 3.0)])).unwrap();
    let grid = make_regular_grid(Rect::new(0.0, 6.0, 0.0, 6.0).unwrap(), 5, 5).unwrap();
    let sites = grid.knots().to_vec();
    let sample = simulate(&tree, &grid, &sites, 20, seed).unwrap();
    let data = MaximaData::try_from(&sample).unwrap();
    let prior = Prior::new(data.max_distance()).unwrap();
    Study { tree, grid, data, prior }
}

/// Root 0.9 over two clusters at 0.7 with two single-leaf nodes at 0.4 each.
pub fn three_layer(tau: f64) -> DependenceTree {
    let cluster = |c: &str| {
        TreeSpec::node(
            0.7,
            vec![
                TreeSpec::node(0.4, vec![TreeSpec::leaf(format!("{c}1"), tau)]),
                TreeSpec::node(0.4, vec![TreeSpec::leaf(format!("{c}2"), tau)]),
            ],
        )
    };
    DependenceTree::new(&TreeSpec::node(0.9, vec![cluster("a"), cluster("b")])).unwrap()
}
