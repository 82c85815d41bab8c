//! Bayesian full-waveform inversion with Gibbs posteriors.
//!
//! The crate pairs a 2D acoustic solver ([`grid_wave`]) with four data
//! misfits ([`potentials`]): least squares, the Ḣ⁻¹ seminorm, a multiplicative
//! misfit and the trace-wise quadratic Wasserstein distance between
//! normalized traces ([`signal`]). Function-space priors ([`priors`]) and
//! posterior approximation by MAP, low-rank Laplace and pCN MCMC
//! ([`inference`]) complete the pipeline; [`posterior_metrics`] compares the
//! resulting approximations under data perturbations.

pub mod error;
pub mod exec;
pub mod fft;
pub mod grid_wave;
pub mod io;
pub mod inference;
pub mod posterior_metrics;
pub mod potentials;
pub mod priors;
pub mod signal;

pub use error::{FwiError, Result};
pub use exec::Exec;

/// Version of this crate, recorded in output manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
