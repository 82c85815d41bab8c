//! 2D constant-density acoustic modelling: `m(x) ∂²v/∂t² − Δv = s` on a
//! regular grid, with receivers sampling the wavefield.
//!
//! The discrete scheme is leapfrog in time and fourth order in space, with
//! sponge layers appended outside the model grid. [`WaveSolver`] provides the
//! forward map, its exact discrete adjoint (for misfit gradients with respect
//! to squared slowness) and the linearized (Born) map used by Gauss–Newton
//! Hessian products.

mod seismogram;
mod solver;

pub use seismogram::{remove_zero_frequency, Seismogram};
pub use solver::{stable_dt, ForwardHistory, SolverConfig, WaveSolver};

use serde::{Deserialize, Serialize};

use crate::error::{FwiError, Result};

/// Regular 2D grid. Fields are stored row-major with `x` fastest:
/// `index = iz * nx + ix`, depth `z` increasing downward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid2D {
    pub nx: usize,
    pub nz: usize,
    /// Spacing in km.
    pub dx: f64,
    pub dz: f64,
    /// Position of node (0, 0) in km.
    #[serde(default)]
    pub origin: (f64, f64),
    /// Depth below `origin.1` of the fixed water layer, km.
    #[serde(default)]
    pub water_depth: f64,
}

impl Grid2D {
    pub fn new(nx: usize, nz: usize, dx: f64, dz: f64) -> Result<Self> {
        let g = Self { nx, nz, dx, dz, origin: (0.0, 0.0), water_depth: 0.0 };
        g.validate()?;
        Ok(g)
    }

    pub fn with_water_depth(mut self, depth: f64) -> Self {
        self.water_depth = depth;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 8 || self.nz < 8 {
            return Err(FwiError::Config(format!("grid must be at least 8x8, got {}x{}", self.nx, self.nz)));
        }
        if !(self.dx > 0.0 && self.dz > 0.0) {
            return Err(FwiError::Config("grid spacing must be positive".into()));
        }
        if !(self.water_depth >= 0.0) {
            return Err(FwiError::Config("water depth must be non-negative".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, ix: usize, iz: usize) -> usize {
        iz * self.nx + ix
    }

    pub fn coords(&self, ix: usize, iz: usize) -> (f64, f64) {
        (self.origin.0 + ix as f64 * self.dx, self.origin.1 + iz as f64 * self.dz)
    }

    pub fn extent(&self) -> (f64, f64) {
        ((self.nx - 1) as f64 * self.dx, (self.nz - 1) as f64 * self.dz)
    }

    /// Nearest grid node to a physical position, or `None` outside the grid.
    pub fn nearest_node(&self, x: f64, z: f64) -> Option<(usize, usize)> {
        let fx = (x - self.origin.0) / self.dx;
        let fz = (z - self.origin.1) / self.dz;
        let tol = 1e-9;
        if fx < -tol || fz < -tol || fx > (self.nx - 1) as f64 + tol || fz > (self.nz - 1) as f64 + tol {
            return None;
        }
        let ix = (fx.round().max(0.0) as usize).min(self.nx - 1);
        let iz = (fz.round().max(0.0) as usize).min(self.nz - 1);
        Some((ix, iz))
    }

    /// `true` for cells below the water layer, i.e. cells that are inverted for.
    pub fn active_mask(&self) -> Vec<bool> {
        let mut mask = vec![true; self.len()];
        for iz in 0..self.nz {
            let depth = iz as f64 * self.dz;
            if depth < self.water_depth - 1e-12 {
                for ix in 0..self.nx {
                    mask[self.index(ix, iz)] = false;
                }
            }
        }
        mask
    }

    /// Indices of the active (below-water) cells, in storage order.
    pub fn active_indices(&self) -> Vec<usize> {
        self.active_mask().iter().enumerate().filter(|(_, &a)| a).map(|(i, _)| i).collect()
    }
}

/// The latent-to-slowness transformation `m = F(u) = α₋ tanh(u) + α₊` with
/// `α± = (v_min⁻² ± v_max⁻²)/2`, so that `1/√m ∈ (v_min, v_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocityBounds {
    pub v_min: f64,
    pub v_max: f64,
}

impl VelocityBounds {
    pub fn new(v_min: f64, v_max: f64) -> Result<Self> {
        let b = Self { v_min, v_max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_min > 0.0 && self.v_min < self.v_max && self.v_max.is_finite()) {
            return Err(FwiError::Config(format!(
                "velocity bounds must satisfy 0 < v_min < v_max, got ({}, {})",
                self.v_min, self.v_max
            )));
        }
        Ok(())
    }

    fn alphas(&self) -> (f64, f64) {
        let a = self.v_min.powi(-2);
        let b = self.v_max.powi(-2);
        (0.5 * (a + b), 0.5 * (a - b))
    }

    #[inline]
    pub fn slowness_sq(&self, u: f64) -> f64 {
        let (ap, am) = self.alphas();
        // roundoff at |tanh u| = 1 can step an ulp past the endpoints
        (am * u.tanh() + ap).clamp(self.v_max.powi(-2), self.v_min.powi(-2))
    }

    /// `dm/du`.
    #[inline]
    pub fn slowness_sq_derivative(&self, u: f64) -> f64 {
        let (_, am) = self.alphas();
        let t = u.tanh();
        am * (1.0 - t * t)
    }

    /// Inverse map from velocity to latent value. Velocities are clipped to
    /// stay a relative `1e-9` inside the open interval.
    pub fn latent_from_velocity(&self, v: f64) -> f64 {
        let (ap, am) = self.alphas();
        let m = v.clamp(self.v_min, self.v_max).powi(-2);
        let t = ((m - ap) / am).clamp(-1.0 + 1e-9, 1.0 - 1e-9);
        t.atanh()
    }

    pub fn velocity(&self, u: f64) -> f64 {
        1.0 / self.slowness_sq(u).sqrt()
    }
}

/// Latent field `u` on a grid together with the map to squared slowness.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityModel {
    pub grid: Grid2D,
    pub latent: Vec<f64>,
    pub bounds: VelocityBounds,
}

impl VelocityModel {
    pub fn new(grid: Grid2D, latent: Vec<f64>, bounds: VelocityBounds) -> Result<Self> {
        grid.validate()?;
        bounds.validate()?;
        if latent.len() != grid.len() {
            return Err(FwiError::Shape(format!("latent field has {} values, grid has {}", latent.len(), grid.len())));
        }
        if latent.iter().any(|v| !v.is_finite()) {
            return Err(FwiError::Input("latent field contains non-finite values".into()));
        }
        Ok(Self { grid, latent, bounds })
    }

    pub fn from_velocity(grid: Grid2D, velocity: &[f64], bounds: VelocityBounds) -> Result<Self> {
        let latent = velocity.iter().map(|&v| bounds.latent_from_velocity(v)).collect();
        Self::new(grid, latent, bounds)
    }

    pub fn homogeneous(grid: Grid2D, velocity: f64, bounds: VelocityBounds) -> Result<Self> {
        let n = grid.len();
        Self::from_velocity(grid, &vec![velocity; n], bounds)
    }

    pub fn slowness_sq(&self) -> Vec<f64> {
        self.latent.iter().map(|&u| self.bounds.slowness_sq(u)).collect()
    }

    pub fn velocity(&self) -> Vec<f64> {
        self.latent.iter().map(|&u| self.bounds.velocity(u)).collect()
    }

    /// Chain rule `∂J/∂u = ∂J/∂m · F′(u)`, zeroed on the water layer.
    pub fn pullback_gradient(&self, grad_m: &[f64]) -> Vec<f64> {
        let mask = self.grid.active_mask();
        grad_m
            .iter()
            .zip(&self.latent)
            .zip(&mask)
            .map(|((g, &u), &active)| if active { g * self.bounds.slowness_sq_derivative(u) } else { 0.0 })
            .collect()
    }
}

/// Source time function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Wavelet {
    /// `amp·(1 − 2π²f²τ²)·exp(−π²f²τ²)`, `τ = t − delay`.
    Ricker { peak_freq: f64, delay: f64, amplitude: f64 },
    /// Explicit samples at `t = n·dt`, `n = 0..nt`; missing samples are zero.
    Sampled(Vec<f64>),
}

impl Wavelet {
    pub fn ricker(peak_freq: f64) -> Self {
        Wavelet::Ricker { peak_freq, delay: 1.5 / peak_freq, amplitude: 1.0 }
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            Wavelet::Ricker { peak_freq, delay, amplitude } => {
                let a = (std::f64::consts::PI * peak_freq * (t - delay)).powi(2);
                amplitude * (1.0 - 2.0 * a) * (-a).exp()
            }
            Wavelet::Sampled(_) => panic!("sampled wavelet has no continuous value"),
        }
    }

    /// Values at the injection times `n·dt`, `n = 0..nt`.
    pub fn samples(&self, dt: f64, nt: usize) -> Vec<f64> {
        match self {
            Wavelet::Sampled(s) => (0..nt).map(|n| s.get(n).copied().unwrap_or(0.0)).collect(),
            _ => (0..nt).map(|n| self.value(n as f64 * dt)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Source {
    pub position: (f64, f64),
    /// Index into [`AcquisitionGeometry::wavelets`].
    pub wavelet: usize,
}

/// Sources, receivers and the time axis. Trace sample `n` holds the field at
/// time `(n + 1)·dt`, so the record spans `T = (0, nt·dt]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionGeometry {
    pub sources: Vec<Source>,
    pub receivers: Vec<(f64, f64)>,
    pub wavelets: Vec<Wavelet>,
    pub dt: f64,
    pub nt: usize,
}

impl AcquisitionGeometry {
    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn n_receivers(&self) -> usize {
        self.receivers.len()
    }

    pub fn t_max(&self) -> f64 {
        self.nt as f64 * self.dt
    }

    pub fn validate(&self, grid: &Grid2D) -> Result<()> {
        if self.sources.is_empty() {
            return Err(FwiError::Geometry("at least one source is required".into()));
        }
        if self.receivers.is_empty() {
            return Err(FwiError::Geometry("at least one receiver is required".into()));
        }
        if !(self.dt > 0.0) || self.nt == 0 {
            return Err(FwiError::Config("time axis needs dt > 0 and nt > 0".into()));
        }
        for (i, s) in self.sources.iter().enumerate() {
            if grid.nearest_node(s.position.0, s.position.1).is_none() {
                return Err(FwiError::Geometry(format!("source {i} at {:?} lies outside the grid", s.position)));
            }
            if s.wavelet >= self.wavelets.len() {
                return Err(FwiError::Geometry(format!("source {i} references missing wavelet {}", s.wavelet)));
            }
        }
        for (i, r) in self.receivers.iter().enumerate() {
            if grid.nearest_node(r.0, r.1).is_none() {
                return Err(FwiError::Geometry(format!("receiver {i} at {r:?} lies outside the grid")));
            }
        }
        Ok(())
    }

    /// Evenly spaced sources and receivers along horizontal lines, all sharing
    /// one Ricker wavelet.
    pub fn surface_line(
        grid: &Grid2D,
        n_sources: usize,
        source_depth: f64,
        receiver_depth: f64,
        receiver_stride: usize,
        peak_freq: f64,
        dt: f64,
        nt: usize,
    ) -> Self {
        let (lx, _) = grid.extent();
        let x0 = grid.origin.0;
        let sources = (0..n_sources)
            .map(|i| {
                let frac = (i as f64 + 0.5) / n_sources as f64;
                let x = x0 + (frac * lx / grid.dx).round() * grid.dx;
                Source { position: (x, grid.origin.1 + source_depth), wavelet: 0 }
            })
            .collect();
        let receivers = (0..grid.nx)
            .step_by(receiver_stride.max(1))
            .map(|ix| (x0 + ix as f64 * grid.dx, grid.origin.1 + receiver_depth))
            .collect();
        Self { sources, receivers, wavelets: vec![Wavelet::ricker(peak_freq)], dt, nt }
    }
}


/// Forward-models `model` for every source of `geom`.
pub fn solve_forward(model: &VelocityModel, geom: &AcquisitionGeometry, cfg: &SolverConfig) -> Result<Seismogram> {
    WaveSolver::new(model.grid.clone(), geom.clone(), cfg.clone(), model.bounds.v_max)?.forward(&model.slowness_sq())
}

/// Gradient with respect to squared slowness of the data functional whose
/// sample-wise derivative is `residual`; the chain rule through `F` is left to
/// the caller ([`VelocityModel::pullback_gradient`]).
pub fn solve_adjoint(
    model: &VelocityModel,
    geom: &AcquisitionGeometry,
    cfg: &SolverConfig,
    residual: &Seismogram,
    history: &[ForwardHistory],
) -> Result<Vec<f64>> {
    WaveSolver::new(model.grid.clone(), geom.clone(), cfg.clone(), model.bounds.v_max)?.adjoint(
        &model.slowness_sq(),
        residual,
        history,
    )
}
