//! Nested multivariate max-stable processes.
//!
//! The model couples several spatial Reich–Shaby processes through a tree of
//! latent positive α-stable amplitudes. Each internal node of the
//! [`DependenceTree`] carries a dependence parameter α; each leaf is one
//! spatial variable with its own Gaussian kernel bandwidth. This crate
//! provides:
//!
//! * exact sampling and augmented densities for the positive stable law ([`stable`]),
//! * normalized Gaussian kernel bases on knot grids ([`kernel`]),
//! * the tree model and path products ([`tree`]),
//! * closed-form exponent functions and extremal coefficients ([`dependence`]),
//! * exact simulation and GEV margin transforms ([`simulate`], [`gev`]),
//! * Metropolis–Hastings inference of the dependence parameters ([`inference`]),
//! * chain and extremal-dependence diagnostics ([`diagnostics`]).

pub mod dependence;
pub mod diagnostics;
pub mod error;
pub mod gev;
pub mod inference;
pub mod kernel;
pub mod rng;
pub mod simulate;
pub mod stable;
pub mod tree;

mod math;

pub use dependence::{EvaluationPoint, ExtremalCoefficient, ExtremalRow, Level};
pub use error::{Error, Result};
pub use gev::GevParams;
pub use kernel::{KernelBasis, KnotGrid, Rect, Site};
pub use simulate::{LatentStableField, MaxStableSample, Scale};
pub use stable::{StableAuxPair, StableParam};
pub use tree::{DependenceTree, TreeSpec};
