//! The positive α-stable law PS(α), defined through its Laplace transform
//! `E exp(-tA) = exp(-t^α)` for `t >= 0` and `0 < α <= 1`.
//!
//! Draws use Kanter's representation: with `U ~ Unif(0, π)` and `E ~ Exp(1)`,
//! `A = {ψ(U) / E}^{(1-α)/α}` where
//!
//! ```text
//! ψ(u) = sin((1-α)u) · sin(αu)^{α/(1-α)} / sin(u)^{1/(1-α)}.
//! ```
//!
//! Conditioning on `U` gives a closed-form joint density for `(A, U)`, which
//! is what the sampler in [`crate::inference`] targets instead of the
//! (non-elementary) marginal density. The auxiliary variable is stored on the
//! unit interval, `aux = U / π`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Open01};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Endpoint clamp for the auxiliary uniform; `ψ` diverges at both ends.
pub const AUX_EPS: f64 = 1e-12;

/// Stability index of a positive stable law, `0 < α <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct StableParam(f64);

impl StableParam {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha <= 1.0 {
            Ok(StableParam(alpha))
        } else {
            Err(Error::domain(format!("stable index {alpha} outside (0, 1]")))
        }
    }

    #[inline]
    pub fn alpha(self) -> f64 {
        self.0
    }

    /// `α = 1` is the point mass at one.
    #[inline]
    pub fn is_degenerate(self) -> bool {
        self.0 == 1.0
    }
}

impl TryFrom<f64> for StableParam {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        StableParam::new(value)
    }
}

impl From<StableParam> for f64 {
    fn from(value: StableParam) -> f64 {
        value.0
    }
}

/// A latent amplitude together with its auxiliary uniform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableAuxPair {
    pub amplitude: f64,
    pub aux: f64,
}

impl StableAuxPair {
    pub fn new(amplitude: f64, aux: f64) -> Result<Self> {
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(Error::domain(format!("amplitude {amplitude} must be positive")));
        }
        if !(aux > 0.0 && aux < 1.0) {
            return Err(Error::domain(format!("auxiliary {aux} outside (0, 1)")));
        }
        Ok(StableAuxPair { amplitude, aux })
    }
}

/// `log ψ(u)` for `u` in `(0, π)` and `0 < α < 1`.
#[inline]
pub fn log_zolotarev(alpha: f64, u: f64) -> f64 {
    let one_minus = 1.0 - alpha;
    ((one_minus * u).sin()).ln() + (alpha / one_minus) * ((alpha * u).sin()).ln()
        - ((u.sin()).ln()) / one_minus
}

/// One draw from PS(α) together with the auxiliary uniform that generated it.
pub fn sample_with_aux<R: Rng + ?Sized>(alpha: StableParam, rng: &mut R) -> StableAuxPair {
    let a = alpha.alpha();
    let aux: f64 = Open01.sample(rng);
    let e: f64 = Exp1.sample(rng);
    if alpha.is_degenerate() {
        return StableAuxPair { amplitude: 1.0, aux };
    }
    let log_amp = ((1.0 - a) / a) * (log_zolotarev(a, PI * aux) - e.ln());
    // Overflow is astronomically rare but possible for tiny α.
    let amplitude = log_amp.exp().clamp(f64::MIN_POSITIVE, f64::MAX);
    StableAuxPair { amplitude, aux }
}

/// One draw from PS(α).
#[inline]
pub fn sample_one<R: Rng + ?Sized>(alpha: StableParam, rng: &mut R) -> f64 {
    if alpha.is_degenerate() {
        return 1.0;
    }
    sample_with_aux(alpha, rng).amplitude
}

/// `n` i.i.d. draws from PS(α). The sequence is a pure function of the stream.
pub fn sample_positive_stable<R: Rng + ?Sized>(
    alpha: StableParam,
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::domain("sample size must be at least 1"));
    }
    Ok((0..n).map(|_| sample_one(alpha, rng)).collect())
}

/// Log of the joint density of `(A, aux)` on `(0, ∞) × (0, 1)`:
///
/// ```text
/// α/(1-α) · a^{-1/(1-α)} · ψ(π·aux) · exp{-ψ(π·aux) · a^{-α/(1-α)}}
/// ```
///
/// whose integral over `aux` is the PS(α) density at `a`.
pub fn log_density_augmented(pair: StableAuxPair, alpha: StableParam) -> Result<f64> {
    if alpha.is_degenerate() {
        return Err(Error::DegenerateStable);
    }
    Ok(log_density_augmented_raw(pair.amplitude, pair.aux, alpha.alpha()))
}

/// Unchecked form of [`log_density_augmented`] for hot loops; `0 < alpha < 1`.
#[inline]
pub fn log_density_augmented_raw(amplitude: f64, aux: f64, alpha: f64) -> f64 {
    let aux = aux.clamp(AUX_EPS, 1.0 - AUX_EPS);
    let one_minus = 1.0 - alpha;
    let log_a = amplitude.ln();
    let log_psi = log_zolotarev(alpha, PI * aux);
    (alpha / one_minus).ln() - log_a / one_minus + log_psi
        - (log_psi - (alpha / one_minus) * log_a).exp()
}

/// Monte-Carlo estimate of `E exp(-tA)` at one `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceEstimate {
    pub t: f64,
    pub estimate: f64,
    pub std_error: f64,
    /// `exp(-t^α)`.
    pub exact: f64,
}

impl LaplaceEstimate {
    /// Absolute error in units of the standard error; `0` when both vanish.
    pub fn z_score(&self) -> f64 {
        let diff = (self.estimate - self.exact).abs();
        if diff == 0.0 {
            0.0
        } else {
            diff / self.std_error
        }
    }
}

/// Checks the Laplace transform by simulation. All `t` share one set of `n` draws.
pub fn laplace_check<R: Rng + ?Sized>(
    alpha: StableParam,
    t_grid: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<Vec<LaplaceEstimate>> {
    if n < 10_000 {
        return Err(Error::domain(format!("laplace_check needs n >= 10^4, got {n}")));
    }
    if let Some(t) = t_grid.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(Error::domain(format!("Laplace argument {t} must be finite and >= 0")));
    }
    let draws = sample_positive_stable(alpha, n, rng)?;
    let nf = n as f64;
    Ok(t_grid
        .iter()
        .map(|&t| {
            let exact = (-t.powf(alpha.alpha())).exp();
            if t == 0.0 {
                return LaplaceEstimate { t, estimate: 1.0, std_error: 0.0, exact };
            }
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for &a in &draws {
                let v = (-t * a).exp();
                sum += v;
                sum_sq += v * v;
            }
            let mean = sum / nf;
            let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
            LaplaceEstimate { t, estimate: mean, std_error: (var / nf).sqrt(), exact }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn alpha_outside_unit_interval_is_rejected() {
        assert!(StableParam::new(0.0).is_err());
        assert!(StableParam::new(1.2).is_err());
        assert!(StableParam::new(f64::NAN).is_err());
        assert!(StableParam::new(1.0).is_ok());
    }

    #[test]
    fn degenerate_law_is_point_mass_at_one() {
        let mut r = rng::master(1);
        let draws = sample_positive_stable(StableParam::new(1.0).unwrap(), 5, &mut r).unwrap();
        assert_eq!(draws, vec![1.0; 5]);
    }

    #[test]
    fn zero_draws_is_an_error() {
        let mut r = rng::master(1);
        assert!(sample_positive_stable(StableParam::new(0.5).unwrap(), 0, &mut r).is_err());
    }

    #[test]
    fn laplace_at_zero_is_exact() {
        let mut r = rng::master(2);
        let est = laplace_check(StableParam::new(0.8).unwrap(), &[0.0], 10_000, &mut r).unwrap();
        assert_eq!(est[0].estimate, 1.0);
        assert_eq!(est[0].std_error, 0.0);
    }

    #[test]
    fn laplace_degenerate_is_exact() {
        let mut r = rng::master(3);
        let est =
            laplace_check(StableParam::new(1.0).unwrap(), &[0.3, 2.0], 10_000, &mut r).unwrap();
        for e in est {
            assert!((e.estimate - (-e.t).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn laplace_small_alpha() {
        let mut r = rng::master(4);
        let est = laplace_check(StableParam::new(0.2).unwrap(), &[2.0], 200_000, &mut r).unwrap();
        assert!((est[0].exact - (-(2f64.powf(0.2))).exp()).abs() < 1e-15);
        assert!(est[0].z_score() < 4.0, "{:?}", est[0]);
    }

    #[test]
    fn laplace_check_needs_enough_draws() {
        let mut r = rng::master(4);
        assert!(laplace_check(StableParam::new(0.5).unwrap(), &[1.0], 100, &mut r).is_err());
    }

    #[test]
    fn augmented_density_rejects_degenerate() {
        let pair = StableAuxPair::new(1.0, 0.5).unwrap();
        assert!(matches!(
            log_density_augmented(pair, StableParam::new(1.0).unwrap()),
            Err(Error::DegenerateStable)
        ));
    }

    #[test]
    fn augmented_density_is_finite_near_boundaries() {
        let alpha = StableParam::new(0.5).unwrap();
        for (a, u) in [(1e-8, 0.5), (1.0, 1e-15), (1.0, 1.0 - 1e-15), (1e12, 0.3), (1e-8, 1e-14)] {
            let v = log_density_augmented_raw(a, u, alpha.alpha());
            assert!(v.is_finite() || v == f64::NEG_INFINITY, "a={a} u={u} -> {v}");
            assert!(!v.is_nan());
        }
        let tiny = StableAuxPair::new(1e-8, 0.5).unwrap();
        assert!(log_density_augmented(tiny, alpha).unwrap().is_finite());
    }

    #[test]
    fn sampler_is_deterministic_given_seed() {
        let alpha = StableParam::new(0.37).unwrap();
        let a = sample_positive_stable(alpha, 100, &mut rng::master(9)).unwrap();
        let b = sample_positive_stable(alpha, 100, &mut rng::master(9)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| *v > 0.0));
    }
}
