//! Bayesian inference of the dependence parameters.
//!
//! Conditionally on the latent stable amplitudes, observations on the
//! unit-Fréchet scale are independent with `P(Z ≤ z) = exp(-S z^{-1/p})`,
//! where `S = ϑ^{1/p}` is the leaf's smooth process raised to the inverse
//! path product. The sampler augments every latent amplitude with the
//! auxiliary uniform of [`crate::stable::log_density_augmented`] so all full
//! conditionals are available in closed form.

mod data;
mod likelihood;
mod margins;
mod mcmc;
mod prior;
pub(crate) mod proposal;

pub use data::MaximaData;
pub use likelihood::{cell_log_density, log_conditional_likelihood};
pub use margins::{fit_gev, fit_margins_gev, GevFit, MarginFit, MarginReport, MIN_REPLICATES};
pub use mcmc::{
    mh_step, run_chain, run_chains, BlockRate, McmcConfig, McmcState, PosteriorChain, Sampler,
    LOG_LIKELIHOOD,
};
pub use prior::Prior;
