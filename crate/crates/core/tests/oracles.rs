use nestmax::dependence::{exponent, EvaluationPoint, Level};
use nestmax::diagnostics::ks_test;
use nestmax::inference::{run_chain, MaximaData, McmcConfig, Prior};
use nestmax::kernel::make_regular_grid;
use nestmax::rng::{substream, Domain};
use nestmax::simulate::{draw_latent, simulate, smooth_process};
use nestmax::stable::log_density_augmented_raw;
use nestmax::{DependenceTree, KnotGrid, Rect, Site, TreeSpec};

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

fn levy_density(a: f64) -> f64 {
    (-1.0 / (4.0 * a)).exp() / (2.0 * std::f64::consts::PI.sqrt() * a.powf(1.5))
}

#[test]
fn half_stable_marginal_is_levy() {
    for a in [0.5, 1.0, 2.0, 5.0] {
        let f = |u: f64| log_density_augmented_raw(a, u, 0.5).exp();
        let got = simpson(f, 1e-9, 1.0 - 1e-9, 20_000);
        assert!((got - levy_density(a)).abs() < 1e-6, "a={a}: {got} vs {}", levy_density(a));
    }
}

/// `exp(-V)` as the latent-field average of the conditional CDF product.
fn conditional_cdf_mc(tree: &DependenceTree, grid: &KnotGrid, point: &EvaluationPoint, n: usize, seed: u64) -> (f64, f64) {
    let mut rng = substream(seed, Domain::Latent, 0);
    let names = tree.leaf_names();
    let d_count = point.sites.len();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n {
        let latent = draw_latent(tree, grid.len(), &mut rng);
        let mut log_cdf = 0.0;
        for (k, name) in names.iter().enumerate() {
            let p = tree.path_product_of(k);
            for (d, s) in point.sites.iter().enumerate() {
                if let Level::Finite(z) = point.levels[k * d_count + d] {
                    let theta = smooth_process(tree, grid, &latent, name, *s).unwrap();
                    log_cdf -= (theta / z).powf(1.0 / p);
                }
            }
        }
        let v = log_cdf.exp();
        sum += v;
        sum_sq += v * v;
    }
    let nf = n as f64;
    let mean = sum / nf;
    (mean, ((sum_sq / nf - mean * mean) / (nf - 1.0)).sqrt())
}

#[test]
fn exponent_matches_latent_monte_carlo() {
    let grid = make_regular_grid(Rect::new(0.0, 1.0, 0.0, 1.0).unwrap(), 2, 2).unwrap();
    let spec = TreeSpec::node(
        0.7,
        vec![
            TreeSpec::node(0.6, vec![TreeSpec::node(0.5, vec![TreeSpec::leaf("a", 0.4)]), TreeSpec::node(0.9, vec![TreeSpec::leaf("b", 0.3)])]),
            TreeSpec::node(0.8, vec![TreeSpec::leaf("c", 0.5)]),
        ],
    );
    let tree = DependenceTree::new(&spec).unwrap();
    let sites = vec![Site::new(0.2, 0.3).unwrap(), Site::new(0.7, 0.6).unwrap()];
    let levels = [2.0, 4.0, 3.0, 5.0, 6.0, 2.5].map(Level::Finite).to_vec();
    let point = EvaluationPoint::new(sites, levels);
    let exact = (-exponent(&tree, &grid, &point).unwrap()).exp();
    let (mc, se) = conditional_cdf_mc(&tree, &grid, &point, 20_000, 7);
    assert!((exact - mc).abs() <= 3.0 * se, "{exact} vs {mc} ± {se}");
}

#[test]
fn simulated_margins_are_unit_frechet() {
    let tree = DependenceTree::new(&TreeSpec::two_layer(0.5, &[("a", 0.7, 0.3), ("b", 0.4, 0.3)])).unwrap();
    let grid = make_regular_grid(Rect::new(0.0, 1.0, 0.0, 1.0).unwrap(), 4, 4).unwrap();
    let sites = vec![Site::new(0.5, 0.5).unwrap()];
    let sample = simulate(&tree, &grid, &sites, 10_000, 3).unwrap();
    for k in 0..2 {
        let cell = sample.cell(k, 0);
        let below = cell.iter().filter(|v| **v <= 1.0).count() as f64 / cell.len() as f64;
        let e = (-1.0f64).exp();
        let se = (e * (1.0 - e) / cell.len() as f64).sqrt();
        assert!((below - e).abs() < 3.0 * se, "leaf {k}: {below}");
        assert!(ks_test(cell, |z| (-1.0 / z).exp()).unwrap().p_value > 0.01);
    }
}

#[test]
fn chain_without_data_samples_the_prior() {
    let tree = DependenceTree::new(&TreeSpec::two_layer(0.5, &[("a", 0.5, 0.5)])).unwrap();
    let grid = make_regular_grid(Rect::new(0.0, 1.0, 0.0, 1.0).unwrap(), 2, 2).unwrap();
    let sites = vec![Site::new(0.0, 0.0).unwrap(), Site::new(1.0, 0.0).unwrap()];
    let data = MaximaData::empty(vec!["a".into()], sites, 2);
    let prior = Prior::new(1.0).unwrap();
    let config = McmcConfig { thinning: 25, ..McmcConfig::new(50_000, 5) };
    let chain = run_chain(&data, &tree, &grid, prior, config).unwrap();
    for name in ["alpha_0", "alpha_1"] {
        let x = chain.column(name).unwrap();
        assert!(ks_test(&x, |a| a.clamp(0.0, 1.0)).unwrap().p_value > 0.01, "{name}");
    }
    let beta25 = |t: f64| {
        let x = (t / prior.tau_upper()).clamp(0.0, 1.0);
        1.0 - (1.0 - x).powi(6) - 6.0 * x * (1.0 - x).powi(5)
    };
    assert!(ks_test(&chain.column("tau_a").unwrap(), beta25).unwrap().p_value > 0.01);
}

#[test]
fn singleton_predictive_quantile_is_frechet() {
    use nestmax::diagnostics::{posterior_predictive_max_quantile, PredictiveRequest};
    use nestmax::inference::PosteriorChain;
    let tree = DependenceTree::new(&TreeSpec::two_layer(0.5, &[("a", 0.6, 0.5)])).unwrap();
    let grid = make_regular_grid(Rect::new(0.0, 1.0, 0.0, 1.0).unwrap(), 3, 3).unwrap();
    let chain = PosteriorChain {
        parameter_names: vec!["alpha_0".into(), "alpha_1".into(), "tau_a".into()],
        iterations: vec![1, 2],
        samples: vec![vec![0.5, 0.6, 0.5], vec![0.3, 0.9, 0.2]],
        log_likelihood: vec![0.0; 2],
        acceptance: Vec::new(),
        config: McmcConfig::new(2, 0),
        n_alphas: 2,
    };
    let sites = [Site::new(0.4, 0.4).unwrap()];
    let p_grid = [0.5, 0.9, 0.917];
    let req = PredictiveRequest { leaves: &["a".to_string()], sites: &sites, p_grid: &p_grid, n_sim: 20_000, margins: None, seed: 4 };
    for row in posterior_predictive_max_quantile(&chain, &tree, &grid, &req).unwrap() {
        let exact = -1.0 / row.p.ln();
        assert!((row.z_p - exact).abs() < 0.05 * exact, "p={}: {} vs {exact}", row.p, row.z_p);
    }
}
