//! Posterior approximation in whitened coordinates.
//!
//! Every posterior is written as `exp(−Φ_eff(θ))·N(0, I)(dθ)` where `θ` are
//! the whitened prior coordinates and `Φ_eff = (β/Z)·Φ` is the scaled
//! misfit. [`Target`] exposes `Φ_eff`, its gradient and Gauss–Newton
//! products; [`map_estimate`], [`laplace`] and [`run_chain`] only ever see
//! that interface.

mod laplace;
mod lbfgs;
mod pcn;
mod surrogate;

pub use laplace::{laplace, GaussianApprox, LaplaceOptions};
pub use lbfgs::{map_estimate, MapOptions, MapResult, ROUNDOFF};
pub use pcn::{pcn_step, run_chain, run_chains, ChainConfig, ChainState, ChainSummary, StepOutcome};
pub use surrogate::PointObservations;

use crate::error::{FwiError, Result};
use crate::potentials::{ForwardMap, Potential};
use crate::priors::PriorModel;

/// Scaled misfit over whitened coordinates.
pub trait Target: Sync {
    fn dim(&self) -> usize;

    fn misfit(&self, theta: &[f64]) -> Result<f64>;

    fn misfit_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Gauss–Newton Hessian of the misfit at `theta` applied to each of `dirs`.
    fn gauss_newton(&self, theta: &[f64], dirs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>>;
}

/// Wave-equation posterior: prior parameterization, forward map and a
/// calibrated potential.
#[derive(Debug, Clone, Copy)]
pub struct FwiTarget<'a> {
    pub fwd: &'a ForwardMap,
    pub potential: &'a Potential,
    pub prior: &'a PriorModel,
}

impl<'a> FwiTarget<'a> {
    pub fn new(fwd: &'a ForwardMap, potential: &'a Potential, prior: &'a PriorModel) -> Result<Self> {
        if fwd.n_params() != prior.grid().len() {
            return Err(FwiError::Shape(format!(
                "forward map has {} cells, prior grid has {}",
                fwd.n_params(),
                prior.grid().len()
            )));
        }
        Ok(Self { fwd, potential, prior })
    }

    fn scale(&self) -> f64 {
        self.potential.spec.scale()
    }
}

impl Target for FwiTarget<'_> {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn misfit(&self, theta: &[f64]) -> Result<f64> {
        let u = self.prior.latent(theta)?;
        Ok(self.scale() * self.potential.eval(self.fwd, &u, false)?.value)
    }

    fn misfit_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let u = self.prior.latent(theta)?;
        let e = self.potential.eval(self.fwd, &u, true)?;
        let s = self.scale();
        let gu: Vec<f64> = e.gradient.expect("requested").iter().map(|g| s * g).collect();
        Ok((s * e.value, self.prior.vjp(theta, &gu)?))
    }

    fn gauss_newton(&self, theta: &[f64], dirs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let u = self.prior.latent(theta)?;
        let at = self.fwd.linearize(&u)?;
        let s = self.scale();
        dirs.iter()
            .map(|d| {
                let du = self.prior.jvp(theta, d)?;
                let h = self.potential.gauss_newton(self.fwd, &at, &du)?;
                let h: Vec<f64> = h.iter().map(|x| s * x).collect();
                self.prior.vjp(theta, &h)
            })
            .collect()
    }
}

/// Regularized objective `Φ_eff(θ) + ½‖θ‖²`.
pub fn objective<T: Target + ?Sized>(target: &T, theta: &[f64]) -> Result<f64> {
    Ok(target.misfit(theta)? + 0.5 * dot(theta, theta))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
