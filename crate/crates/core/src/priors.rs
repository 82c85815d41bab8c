//! Function-space priors on the model grid.
//!
//! [`MaternPrior`] draws Matérn fields by applying the fractional operator
//! `(I − ℓ²Δ)^{−ν/2−d/4}` spectrally on a padded periodic domain. Its
//! whitened coordinates are the white-noise values on that padded domain, so
//! whitening is exact and diagonal in Fourier space. Level-set priors push
//! one or two such fields through a (smoothed) indicator; [`PriorModel`]
//! bundles a prior with the map from whitened coordinates to the latent
//! field consumed by the forward map.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FwiError, Result};
use crate::fft::Fft2;
use crate::grid_wave::{Grid2D, VelocityBounds};

/// Prior mean: a constant or a full field on the model grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeanSpec {
    Constant(f64),
    Field(Vec<f64>),
}

impl Default for MeanSpec {
    fn default() -> Self {
        MeanSpec::Constant(0.0)
    }
}

impl MeanSpec {
    pub fn to_field(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            MeanSpec::Constant(c) => Ok(vec![*c; n]),
            MeanSpec::Field(f) if f.len() == n => Ok(f.clone()),
            MeanSpec::Field(f) => Err(FwiError::Shape(format!("prior mean has {} values, grid has {n}", f.len()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaternSpec {
    pub sigma: f64,
    pub nu: f64,
    /// Length-scale in km.
    pub ell: f64,
    #[serde(default)]
    pub mean: MeanSpec,
}

impl MaternSpec {
    pub fn new(sigma: f64, nu: f64, ell: f64, mean: MeanSpec) -> Result<Self> {
        let s = Self { sigma, nu, ell, mean };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if !(ok(self.sigma) && ok(self.nu) && ok(self.ell)) {
            return Err(FwiError::Config(format!(
                "Matérn parameters must be positive and finite: sigma={}, nu={}, ell={}",
                self.sigma, self.nu, self.ell
            )));
        }
        if let MeanSpec::Field(f) = &self.mean {
            if f.iter().any(|v| !v.is_finite()) {
                return Err(FwiError::Config("prior mean field has non-finite values".into()));
            }
        }
        Ok(())
    }
}

/// Gaussian hyperprior on the interior (salt) velocity of a level-set prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperPrior {
    pub mean: f64,
    pub sd: f64,
}

impl HyperPrior {
    pub fn validate(&self) -> Result<()> {
        if !(self.sd > 0.0 && self.sd.is_finite() && self.mean.is_finite()) {
            return Err(FwiError::Config(format!("hyperprior needs finite mean and sd > 0, got {:?}", self)));
        }
        Ok(())
    }

    pub fn whiten(&self, value: f64) -> f64 {
        (value - self.mean) / self.sd
    }

    pub fn unwhiten(&self, coord: f64) -> f64 {
        self.mean + self.sd * coord
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SaltValue {
    Fixed(f64),
    Hyper(HyperPrior),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum LevelSetMode {
    Plain {
        u_minus: f64,
    },
    Mixed {
        background: MaternSpec,
        /// Hold `w` at the background mean instead of sampling it.
        #[serde(default)]
        fix_background: bool,
    },
}

/// Level-set prior. Phase values are velocities in km/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSetSpec {
    pub underlying: MaternSpec,
    pub mode: LevelSetMode,
    pub u_plus: SaltValue,
    #[serde(default)]
    pub smoothing_width: f64,
}

impl LevelSetSpec {
    pub fn validate(&self) -> Result<()> {
        self.underlying.validate()?;
        if !(self.smoothing_width >= 0.0 && self.smoothing_width.is_finite()) {
            return Err(FwiError::Config(format!("smoothing_width must be >= 0, got {}", self.smoothing_width)));
        }
        if let LevelSetMode::Mixed { background, .. } = &self.mode {
            background.validate()?;
        }
        match self.u_plus {
            SaltValue::Fixed(v) if !v.is_finite() => Err(FwiError::Config("u_plus must be finite".into())),
            SaltValue::Hyper(h) => h.validate(),
            _ => Ok(()),
        }
    }

    pub fn is_mixed(&self) -> bool {
        matches!(self.mode, LevelSetMode::Mixed { .. })
    }
}

/// Indicator of `{v > 0}`, smoothed to `½(1 + tanh(v/w))` when `w > 0`.
pub fn heaviside(v: f64, width: f64) -> f64 {
    if width > 0.0 {
        0.5 * (1.0 + (v / width).tanh())
    } else if v > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `d/dv` of [`heaviside`]; zero for the sharp indicator.
pub fn heaviside_derivative(v: f64, width: f64) -> f64 {
    if width > 0.0 {
        let t = (v / width).tanh();
        0.5 * (1.0 - t * t) / width
    } else {
        0.0
    }
}

fn levelset_other<'a>(spec: &LevelSetSpec, v: &[f64], w: Option<&'a [f64]>) -> Result<Option<&'a [f64]>> {
    match (&spec.mode, w) {
        (LevelSetMode::Plain { .. }, _) => Ok(None),
        (LevelSetMode::Mixed { .. }, None) => {
            Err(FwiError::Input("mixed level set needs a background field w".into()))
        }
        (LevelSetMode::Mixed { .. }, Some(w)) if w.len() != v.len() => {
            Err(FwiError::Shape(format!("level set fields differ in length: v {}, w {}", v.len(), w.len())))
        }
        (LevelSetMode::Mixed { .. }, Some(w)) => Ok(Some(w)),
    }
}

/// `salt·H(v) + other·(1 − H(v))` where `other` is `u_minus` (plain) or
/// `w` (mixed).
pub fn apply_levelset(spec: &LevelSetSpec, v: &[f64], w: Option<&[f64]>, salt_value: f64) -> Result<Vec<f64>> {
    let w = levelset_other(spec, v, w)?;
    let ws = spec.smoothing_width;
    Ok(v
        .iter()
        .enumerate()
        .map(|(i, &vi)| {
            let other = match (&spec.mode, w) {
                (LevelSetMode::Plain { u_minus }, _) => *u_minus,
                (_, Some(w)) => w[i],
                _ => unreachable!(),
            };
            let h = heaviside(vi, ws);
            if h == 1.0 {
                salt_value
            } else if h == 0.0 {
                other
            } else {
                salt_value * h + other * (1.0 - h)
            }
        })
        .collect())
}

/// Pullback of a gradient `g` with respect to the level-set output onto
/// `(v, w, salt_value)`. The `w` part is `None` in plain mode.
pub fn levelset_vjp(
    spec: &LevelSetSpec,
    v: &[f64],
    w: Option<&[f64]>,
    salt_value: f64,
    g: &[f64],
) -> Result<(Vec<f64>, Option<Vec<f64>>, f64)> {
    let w = levelset_other(spec, v, w)?;
    let ws = spec.smoothing_width;
    let mut gv = vec![0.0; v.len()];
    let mut gw = w.map(|_| vec![0.0; v.len()]);
    let mut gs = 0.0;
    for i in 0..v.len() {
        let other = match (&spec.mode, w) {
            (LevelSetMode::Plain { u_minus }, _) => *u_minus,
            (_, Some(w)) => w[i],
            _ => unreachable!(),
        };
        let h = heaviside(v[i], ws);
        gv[i] = g[i] * (salt_value - other) * heaviside_derivative(v[i], ws);
        if let Some(gw) = gw.as_mut() {
            gw[i] = g[i] * (1.0 - h);
        }
        gs += g[i] * h;
    }
    Ok((gv, gw, gs))
}

fn next_smooth(n: usize) -> usize {
    let mut m = n.max(2);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 && m % 2 == 0 {
            return m;
        }
        m += 1;
    }
}

/// Matérn Gaussian measure on a grid, sampled on a padded periodic domain.
#[derive(Debug)]
pub struct MaternPrior {
    spec: MaternSpec,
    grid: Grid2D,
    px: usize,
    pz: usize,
    fft: Fft2,
    symbol: Vec<f64>,
    mean: Vec<f64>,
}

impl MaternPrior {
    pub fn new(spec: &MaternSpec, grid: &Grid2D) -> Result<Self> {
        spec.validate()?;
        grid.validate()?;
        let mean = spec.mean.to_field(grid.len())?;
        let pad = |n: usize, h: f64| next_smooth((2 * n).max(n + (8.0 * spec.ell / h).ceil() as usize));
        let (px, pz) = (pad(grid.nx, grid.dx), pad(grid.nz, grid.dz));
        let kx = Fft2::wavenumbers(px, grid.dx);
        let kz = Fft2::wavenumbers(pz, grid.dz);
        let expo = -(0.5 * spec.nu + 0.5);
        let l2 = spec.ell * spec.ell;
        let mut symbol = Vec::with_capacity(px * pz);
        for z in &kz {
            for x in &kx {
                symbol.push((1.0 + l2 * (x * x + z * z)).powf(expo));
            }
        }
        // discrete pointwise variance (1/N)Σ s_k² set to σ² exactly
        let n = (px * pz) as f64;
        let var: f64 = symbol.iter().map(|s| s * s).sum::<f64>() / n;
        let c = spec.sigma / var.sqrt();
        symbol.iter_mut().for_each(|s| *s *= c);
        Ok(Self { spec: spec.clone(), grid: grid.clone(), px, pz, fft: Fft2::new(px, pz), symbol, mean })
    }

    pub fn spec(&self) -> &MaternSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn padded_dims(&self) -> (usize, usize) {
        (self.px, self.pz)
    }

    /// Number of whitened coordinates.
    pub fn dim(&self) -> usize {
        self.px * self.pz
    }

    fn check(&self, x: &[f64], what: &str) -> Result<()> {
        if x.len() != self.dim() {
            return Err(FwiError::Shape(format!("{what} has {} values, expected {}", x.len(), self.dim())));
        }
        Ok(())
    }

    /// Zero-mean field `Sξ` on the padded domain.
    pub fn apply_sqrt(&self, xi: &[f64]) -> Vec<f64> {
        let mut out = xi.to_vec();
        self.fft.apply_multiplier(&mut out, &self.symbol);
        out
    }

    fn apply_inv_sqrt(&self, x: &[f64]) -> Vec<f64> {
        let inv: Vec<f64> = self.symbol.iter().map(|s| 1.0 / s).collect();
        let mut out = x.to_vec();
        self.fft.apply_multiplier(&mut out, &inv);
        out
    }

    /// Padded perturbation to grid field (top-left block).
    pub fn restrict(&self, padded: &[f64]) -> Vec<f64> {
        let (nx, nz) = (self.grid.nx, self.grid.nz);
        let mut out = Vec::with_capacity(nx * nz);
        for z in 0..nz {
            out.extend_from_slice(&padded[z * self.px..z * self.px + nx]);
        }
        out
    }

    /// Adjoint of [`MaternPrior::restrict`]: zero extension.
    pub fn extend(&self, field: &[f64]) -> Vec<f64> {
        let (nx, nz) = (self.grid.nx, self.grid.nz);
        let mut out = vec![0.0; self.dim()];
        for z in 0..nz {
            out[z * self.px..z * self.px + nx].copy_from_slice(&field[z * nx..(z + 1) * nx]);
        }
        out
    }

    /// Padded-domain mean: the grid mean with edge values replicated.
    fn padded_mean(&self) -> Vec<f64> {
        let (nx, nz) = (self.grid.nx, self.grid.nz);
        let mut out = Vec::with_capacity(self.dim());
        for z in 0..self.pz {
            for x in 0..self.px {
                out.push(self.mean[z.min(nz - 1) * nx + x.min(nx - 1)]);
            }
        }
        out
    }

    /// Whitened coordinates to the full padded field `m̃ + Sξ`.
    pub fn unwhiten(&self, xi: &[f64]) -> Result<Vec<f64>> {
        self.check(xi, "whitened vector")?;
        let mut f = self.apply_sqrt(xi);
        for (v, m) in f.iter_mut().zip(self.padded_mean()) {
            *v += m;
        }
        Ok(f)
    }

    /// Padded field to whitened coordinates, the exact inverse of
    /// [`MaternPrior::unwhiten`].
    pub fn whiten(&self, padded: &[f64]) -> Result<Vec<f64>> {
        self.check(padded, "padded field")?;
        let d: Vec<f64> = padded.iter().zip(self.padded_mean()).map(|(a, m)| a - m).collect();
        Ok(self.apply_inv_sqrt(&d))
    }

    /// Grid field `mean + R S ξ`.
    pub fn field(&self, xi: &[f64]) -> Result<Vec<f64>> {
        self.check(xi, "whitened vector")?;
        let mut f = self.restrict(&self.apply_sqrt(xi));
        for (v, m) in f.iter_mut().zip(&self.mean) {
            *v += m;
        }
        Ok(f)
    }

    /// `d/dξ` of a functional of [`MaternPrior::field`] given its grid gradient.
    pub fn field_vjp(&self, g: &[f64]) -> Vec<f64> {
        self.apply_sqrt(&self.extend(g))
    }

    /// Linear part `R S dξ` of [`MaternPrior::field`].
    pub fn field_jvp(&self, dxi: &[f64]) -> Vec<f64> {
        self.restrict(&self.apply_sqrt(dxi))
    }

    pub fn sample_whitened<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let xi = self.sample_whitened(rng);
        self.field(&xi).expect("sized by construction")
    }

    /// Pointwise prior variance; `σ²` at every node.
    pub fn pointwise_variance(&self) -> f64 {
        self.spec.sigma * self.spec.sigma
    }
}

/// One draw of the Matérn field on `grid`.
pub fn sample_matern<R: Rng + ?Sized>(spec: &MaternSpec, grid: &Grid2D, rng: &mut R) -> Result<Vec<f64>> {
    Ok(MaternPrior::new(spec, grid)?.sample(rng))
}

/// Prior settings as they appear in a configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    /// Matérn field on the latent `u`.
    Gaussian { matern: MaternSpec },
    /// Level set in velocity space, mapped to `u` through the bounds.
    LevelSet { levelset: LevelSetSpec },
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            PriorSpec::Gaussian { matern } => matern.validate(),
            PriorSpec::LevelSet { levelset } => levelset.validate(),
        }
    }
}

#[derive(Debug)]
enum Kind {
    Gaussian(MaternPrior),
    LevelSet {
        spec: LevelSetSpec,
        v: MaternPrior,
        w: Option<MaternPrior>,
        fixed_w: Option<Vec<f64>>,
    },
}

/// A prior together with its parameterization: whitened coordinates `θ`
/// (white noise for every field, plus one coordinate for a hierarchical
/// salt value) map to the latent field `u` seen by the forward map. Water
/// cells stay at their prior mean.
#[derive(Debug)]
pub struct PriorModel {
    kind: Kind,
    bounds: VelocityBounds,
    active: Vec<bool>,
}

impl PriorModel {
    pub fn new(spec: &PriorSpec, grid: &Grid2D, bounds: VelocityBounds) -> Result<Self> {
        spec.validate()?;
        let kind = match spec {
            PriorSpec::Gaussian { matern } => Kind::Gaussian(MaternPrior::new(matern, grid)?),
            PriorSpec::LevelSet { levelset: spec } => {
                let v = MaternPrior::new(&spec.underlying, grid)?;
                let (w, fixed_w) = match &spec.mode {
                    LevelSetMode::Plain { .. } => (None, None),
                    LevelSetMode::Mixed { background, fix_background: true } => {
                        (None, Some(background.mean.to_field(grid.len())?))
                    }
                    LevelSetMode::Mixed { background, .. } => (Some(MaternPrior::new(background, grid)?), None),
                };
                Kind::LevelSet { spec: spec.clone(), v, w, fixed_w }
            }
        };
        Ok(Self { kind, bounds, active: grid.active_mask() })
    }

    pub fn gaussian(prior: MaternPrior, bounds: VelocityBounds) -> Self {
        let active = prior.grid().active_mask();
        Self { kind: Kind::Gaussian(prior), bounds, active }
    }

    pub fn bounds(&self) -> VelocityBounds {
        self.bounds
    }

    pub fn grid(&self) -> &Grid2D {
        match &self.kind {
            Kind::Gaussian(p) => p.grid(),
            Kind::LevelSet { v, .. } => v.grid(),
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.kind, Kind::Gaussian(_))
    }

    /// The Matérn prior when this is a plain Gaussian model.
    pub fn matern(&self) -> Option<&MaternPrior> {
        match &self.kind {
            Kind::Gaussian(p) => Some(p),
            _ => None,
        }
    }

    pub fn levelset_spec(&self) -> Option<&LevelSetSpec> {
        match &self.kind {
            Kind::LevelSet { spec, .. } => Some(spec),
            _ => None,
        }
    }

    fn hyper(&self) -> Option<HyperPrior> {
        match &self.kind {
            Kind::LevelSet { spec, .. } => match spec.u_plus {
                SaltValue::Hyper(h) => Some(h),
                SaltValue::Fixed(_) => None,
            },
            _ => None,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            Kind::Gaussian(p) => p.dim(),
            Kind::LevelSet { v, w, .. } => {
                v.dim() + w.as_ref().map_or(0, |w| w.dim()) + usize::from(self.hyper().is_some())
            }
        }
    }

    /// Index of the hierarchical salt coordinate, if any.
    pub fn hyper_index(&self) -> Option<usize> {
        self.hyper().map(|_| self.dim() - 1)
    }

    fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(FwiError::Shape(format!("parameter vector has {} values, expected {}", theta.len(), self.dim())));
        }
        Ok(())
    }

    /// Salt velocity encoded by `θ` (clamped to the velocity bounds).
    pub fn salt_value(&self, theta: &[f64]) -> Option<f64> {
        match &self.kind {
            Kind::Gaussian(_) => None,
            Kind::LevelSet { spec, .. } => Some(match spec.u_plus {
                SaltValue::Fixed(v) => v,
                SaltValue::Hyper(h) => h.unwhiten(theta[self.dim() - 1]),
            }),
        }
    }

    fn split<'a>(&self, theta: &'a [f64]) -> (&'a [f64], Option<&'a [f64]>) {
        match &self.kind {
            Kind::Gaussian(_) => (theta, None),
            Kind::LevelSet { v, w, .. } => {
                let nv = v.dim();
                (&theta[..nv], w.as_ref().map(|w| &theta[nv..nv + w.dim()]))
            }
        }
    }

    /// Level-set function `v` on the grid (level-set models only).
    pub fn levelset_function(&self, theta: &[f64]) -> Result<Option<Vec<f64>>> {
        self.check(theta)?;
        match &self.kind {
            Kind::Gaussian(_) => Ok(None),
            Kind::LevelSet { v, .. } => Ok(Some(v.field(self.split(theta).0)?)),
        }
    }

    /// Velocity field (km/s) before the latent map; level-set models only.
    fn levelset_velocity(&self, theta: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Option<Vec<f64>>, f64)> {
        let Kind::LevelSet { spec, v, w, fixed_w } = &self.kind else { unreachable!() };
        let (tv, tw) = self.split(theta);
        let vf = v.field(tv)?;
        let wf = match (w, tw) {
            (Some(w), Some(tw)) => Some(w.field(tw)?),
            _ => fixed_w.clone(),
        };
        let salt = self.salt_value(theta).expect("level set");
        let vel = apply_levelset(spec, &vf, wf.as_deref(), salt)?;
        Ok((vel, vf, wf, salt))
    }

    /// Velocity field implied by `θ`, km/s.
    pub fn velocity(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let u = self.latent(theta)?;
        Ok(u.iter().map(|&x| self.bounds.velocity(x)).collect())
    }

    /// Latent field `u(θ)` for the forward map.
    pub fn latent(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check(theta)?;
        let mut u = match &self.kind {
            Kind::Gaussian(p) => p.field(theta)?,
            Kind::LevelSet { .. } => {
                let (vel, ..) = self.levelset_velocity(theta)?;
                vel.iter().map(|&c| self.bounds.latent_from_velocity(c)).collect()
            }
        };
        let base = self.latent_mean()?;
        for ((ui, bi), &a) in u.iter_mut().zip(base).zip(&self.active) {
            if !a {
                *ui = bi;
            }
        }
        Ok(u)
    }

    /// `u` at `θ = 0`.
    pub fn latent_mean(&self) -> Result<Vec<f64>> {
        match &self.kind {
            Kind::Gaussian(p) => Ok(p.mean().to_vec()),
            Kind::LevelSet { .. } => {
                let (vel, ..) = self.levelset_velocity(&vec![0.0; self.dim()])?;
                Ok(vel.iter().map(|&c| self.bounds.latent_from_velocity(c)).collect())
            }
        }
    }

    /// `du/dc` of the velocity-to-latent map, zero where the clamp is active.
    fn latent_velocity_derivative(&self, c: f64) -> f64 {
        let b = self.bounds;
        if c <= b.v_min || c >= b.v_max {
            return 0.0;
        }
        let u = b.latent_from_velocity(c);
        let dm_du = b.slowness_sq_derivative(u);
        if dm_du <= 0.0 {
            return 0.0;
        }
        -2.0 * c.powi(-3) / dm_du
    }

    /// Pullback of a latent-space gradient to `θ`.
    pub fn vjp(&self, theta: &[f64], g_u: &[f64]) -> Result<Vec<f64>> {
        self.check(theta)?;
        let g: Vec<f64> = g_u.iter().zip(&self.active).map(|(g, &a)| if a { *g } else { 0.0 }).collect();
        match &self.kind {
            Kind::Gaussian(p) => Ok(p.field_vjp(&g)),
            Kind::LevelSet { spec, v, w, .. } => {
                let (vel, vf, wf, salt) = self.levelset_velocity(theta)?;
                let gc: Vec<f64> =
                    g.iter().zip(&vel).map(|(gi, &c)| gi * self.latent_velocity_derivative(c)).collect();
                let (gv, gw, gs) = levelset_vjp(spec, &vf, wf.as_deref(), salt, &gc)?;
                let mut out = v.field_vjp(&gv);
                if let (Some(w), Some(gw)) = (w, gw) {
                    out.extend(w.field_vjp(&gw));
                }
                if let Some(h) = self.hyper() {
                    out.push(gs * h.sd);
                }
                Ok(out)
            }
        }
    }

    /// Directional derivative `du = (∂u/∂θ) dθ`.
    pub fn jvp(&self, theta: &[f64], dtheta: &[f64]) -> Result<Vec<f64>> {
        self.check(theta)?;
        self.check(dtheta)?;
        let mut du = match &self.kind {
            Kind::Gaussian(p) => p.field_jvp(dtheta),
            Kind::LevelSet { spec, v, w, .. } => {
                let (vel, vf, wf, salt) = self.levelset_velocity(theta)?;
                let (dv, dw) = self.split(dtheta);
                let dvf = v.field_jvp(dv);
                let dwf = match (w, dw) {
                    (Some(w), Some(dw)) => Some(w.field_jvp(dw)),
                    _ => None,
                };
                let ds = self.hyper().map_or(0.0, |h| h.sd * dtheta[self.dim() - 1]);
                let ws = spec.smoothing_width;
                (0..vel.len())
                    .map(|i| {
                        let other = match (&spec.mode, &wf) {
                            (LevelSetMode::Plain { u_minus }, _) => *u_minus,
                            (_, Some(w)) => w[i],
                            _ => unreachable!(),
                        };
                        let h = heaviside(vf[i], ws);
                        let mut dc = (salt - other) * heaviside_derivative(vf[i], ws) * dvf[i] + h * ds;
                        if let Some(dw) = &dwf {
                            dc += (1.0 - h) * dw[i];
                        }
                        dc * self.latent_velocity_derivative(vel[i])
                    })
                    .collect()
            }
        };
        for (d, &a) in du.iter_mut().zip(&self.active) {
            if !a {
                *d = 0.0;
            }
        }
        Ok(du)
    }

    pub fn sample_whitened<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect()
    }
}
