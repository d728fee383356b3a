//! Gaussian random-walk proposals on unconstrained scales.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::math::{inv_logit, logit};

/// Proposed value and `log |d new / d old|` of the back-transform, which
/// enters the Metropolis–Hastings ratio.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Proposal {
    pub value: f64,
    pub log_jacobian: f64,
}

/// Random walk on `log x`, for `x > 0`.
pub(crate) fn log_walk<R: Rng + ?Sized>(x: f64, scale: f64, rng: &mut R) -> Proposal {
    let eps: f64 = StandardNormal.sample(rng);
    let value = x * (scale * eps).exp();
    Proposal { value, log_jacobian: value.ln() - x.ln() }
}

/// Random walk on `logit x`, for `0 < x < 1`.
pub(crate) fn logit_walk<R: Rng + ?Sized>(x: f64, scale: f64, rng: &mut R) -> Proposal {
    let eps: f64 = StandardNormal.sample(rng);
    let value = inv_logit(logit(x) + scale * eps);
    let log_jacobian = (value.ln() + (1.0 - value).ln()) - (x.ln() + (1.0 - x).ln());
    Proposal { value, log_jacobian }
}

/// Metropolis–Hastings acceptance for a log ratio; consumes one uniform.
pub(crate) fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    log_ratio.is_finite() && u.ln() < log_ratio || log_ratio == f64::INFINITY
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// Runs a two-parameter chain with the same proposal helpers the sampler
    /// uses, targeting `Beta(3, 2) x Gamma(2, 1)`.
    fn toy_chain(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let log_target = |a: f64, t: f64| {
            if !(a > 0.0 && a < 1.0 && t > 0.0) {
                return f64::NEG_INFINITY;
            }
            2.0 * a.ln() + (1.0 - a).ln() + t.ln() - t
        };
        let mut r = rng::master(seed);
        let (mut a, mut t) = (0.5, 1.0);
        let (mut xs, mut ys) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let p = logit_walk(a, 1.2, &mut r);
            if accept(log_target(p.value, t) - log_target(a, t) + p.log_jacobian, &mut r) {
                a = p.value;
            }
            let p = log_walk(t, 1.0, &mut r);
            if accept(log_target(a, p.value) - log_target(a, t) + p.log_jacobian, &mut r) {
                t = p.value;
            }
            xs.push(a);
            ys.push(t);
        }
        (xs, ys)
    }

    fn mean_and_se(x: &[f64]) -> (f64, f64) {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let ess = crate::diagnostics::ess(x).unwrap().value;
        let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (var / ess).sqrt())
    }

    /// Midpoint-rule expectation of `f` under the unnormalized density `g` on `(lo, hi)`.
    fn quad_expectation(g: impl Fn(f64) -> f64, f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
        let n = 400_000;
        let h = (hi - lo) / n as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            let x = lo + (i as f64 + 0.5) * h;
            num += f(x) * g(x);
            den += g(x);
        }
        num / den
    }

    #[test]
    fn random_walks_preserve_the_target() {
        let (a, t) = toy_chain(200_000, 17);
        let beta = |x: f64| x * x * (1.0 - x);
        let gamma = |x: f64| x * (-x).exp();
        let checks = [
            (mean_and_se(&a), quad_expectation(beta, |x| x, 0.0, 1.0)),
            (mean_and_se(&a.iter().map(|x| x * x).collect::<Vec<_>>()), quad_expectation(beta, |x| x * x, 0.0, 1.0)),
            (mean_and_se(&t), quad_expectation(gamma, |x| x, 0.0, 60.0)),
            (mean_and_se(&t.iter().map(|x| (-x).exp()).collect::<Vec<_>>()), quad_expectation(gamma, |x| (-x).exp(), 0.0, 60.0)),
        ];
        for ((m, se), exact) in checks {
            assert!((m - exact).abs() < 3.0 * se, "chain {m} +/- {se} vs {exact}");
        }
    }

    #[test]
    fn accept_edge_cases() {
        let mut r = rng::master(1);
        assert!(!accept(f64::NEG_INFINITY, &mut r));
        assert!(!accept(f64::NAN, &mut r));
        assert!(accept(0.0, &mut r));
        assert!(accept(f64::INFINITY, &mut r));
    }
}
