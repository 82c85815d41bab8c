//! Trace-wise signal mathematics: the normalization `P_σ`, 1D quadratic
//! Wasserstein distances, and unweighted / density-weighted Ḣ⁻¹ seminorms.
//!
//! A trace of `nt` samples with spacing `dt` is identified with the
//! piecewise-constant function on `T = [0, nt·dt]` taking value `samples[i]`
//! on the cell `[i·dt, (i+1)·dt)`. Time integrals are therefore `Σ·dt`.

mod sobolev;
mod transport;

use serde::{Deserialize, Serialize};

use crate::error::{FwiError, Result};

pub use sobolev::{
    hminus1_grad, hminus1_norm, hminus1_norm_sq, hminus1_continuum_norm, poincare_constant, weighted_hminus1_norm,
    weighted_hminus1_norm_sq,
};
pub use transport::{w2_1d, w2_gauss_newton_apply, w2_sq, w2_sq_grad, w2_sq_measures, Measure1D};

/// Cells of a normalized density are never allowed below this value.
pub const DENSITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub samples: Vec<f64>,
    pub dt: f64,
}

impl Trace {
    pub fn new(samples: Vec<f64>, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(FwiError::Input(format!("trace spacing must be positive, got {dt}")));
        }
        if samples.is_empty() {
            return Err(FwiError::Input("trace is empty".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(FwiError::Input(format!("trace sample {i} is not finite")));
        }
        Ok(Self { samples, dt })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn t_span(&self) -> f64 {
        self.samples.len() as f64 * self.dt
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.samples)
    }

    pub fn l2_norm(&self) -> f64 {
        (self.samples.iter().map(|v| v * v).sum::<f64>() * self.dt).sqrt()
    }
}

/// Strictly positive piecewise-constant probability density on `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityTrace {
    pub samples: Vec<f64>,
    pub dt: f64,
    /// Smallest and largest density value.
    pub lower: f64,
    pub upper: f64,
    /// Set when some cells had to be lifted to [`DENSITY_FLOOR`].
    pub floored: bool,
}

impl DensityTrace {
    /// Validates positivity and unit mass (within `1e-10`).
    pub fn new(samples: Vec<f64>, dt: f64) -> Result<Self> {
        let tr = Trace::new(samples, dt)?;
        let lower = tr.samples.iter().cloned().fold(f64::INFINITY, f64::min);
        let upper = tr.samples.iter().cloned().fold(0.0, f64::max);
        if lower <= 0.0 {
            return Err(FwiError::Bounds(format!("density has non-positive value {lower}")));
        }
        let mass = tr.samples.iter().sum::<f64>() * dt;
        if (mass - 1.0).abs() > 1e-10 {
            return Err(FwiError::Input(format!("density mass is {mass}, expected 1")));
        }
        Ok(Self { samples: tr.samples, dt, lower, upper, floored: false })
    }

    /// Normalizes arbitrary positive values to unit mass, flooring tiny cells.
    pub fn from_unnormalized(values: &[f64], dt: f64) -> Result<Self> {
        let z: f64 = values.iter().sum::<f64>() * dt;
        if !(z > 0.0 && z.is_finite()) {
            return Err(FwiError::Bounds(format!("normalization constant is {z}")));
        }
        let mut samples: Vec<f64> = values.iter().map(|v| v / z).collect();
        let floored = floor_and_renormalize(&mut samples, dt);
        let lower = samples.iter().cloned().fold(f64::INFINITY, f64::min);
        let upper = samples.iter().cloned().fold(0.0, f64::max);
        Ok(Self { samples, dt, lower, upper, floored })
    }

    pub fn uniform(nt: usize, dt: f64) -> Self {
        let v = 1.0 / (nt as f64 * dt);
        Self { samples: vec![v; nt], dt, lower: v, upper: v, floored: false }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn t_span(&self) -> f64 {
        self.samples.len() as f64 * self.dt
    }

    /// Largest `ε` with `ε ≤ f ≤ 1/ε`.
    pub fn epsilon(&self) -> f64 {
        self.lower.min(1.0 / self.upper)
    }

    pub(crate) fn check_compatible(&self, other: &DensityTrace) -> Result<()> {
        if self.samples.len() != other.samples.len() || (self.dt - other.dt).abs() > 1e-12 * self.dt {
            return Err(FwiError::Shape(format!(
                "densities differ in sampling: {}×{} vs {}×{}",
                self.samples.len(),
                self.dt,
                other.samples.len(),
                other.dt
            )));
        }
        Ok(())
    }
}

fn floor_and_renormalize(samples: &mut [f64], dt: f64) -> bool {
    if samples.iter().all(|&v| v >= DENSITY_FLOOR) {
        return false;
    }
    samples.iter_mut().for_each(|v| *v = v.max(DENSITY_FLOOR));
    let mass: f64 = samples.iter().sum::<f64>() * dt;
    samples.iter_mut().for_each(|v| *v /= mass);
    true
}

pub(crate) fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Strictly positive map `σ` turning signed traces into densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NormalizerSpec {
    /// `σ(z) = z² + δ`.
    SquarePlusDelta { delta: f64 },
    /// `σ(z) = exp(z / b)`.
    Exponential { scale: f64 },
    /// `σ(z) = b·ln(1 + exp(z / b))`.
    Softplus { scale: f64 },
}

impl NormalizerSpec {
    /// `z² + δ` with `δ = 0.1·max|y|²` of a reference (clean) dataset.
    pub fn square_for_amplitude(max_abs: f64) -> Self {
        let delta = 0.1 * max_abs * max_abs;
        NormalizerSpec::SquarePlusDelta { delta: if delta > 0.0 { delta } else { 1e-3 } }
    }

    pub fn validate(&self) -> Result<()> {
        let p = match *self {
            NormalizerSpec::SquarePlusDelta { delta } => delta,
            NormalizerSpec::Exponential { scale } | NormalizerSpec::Softplus { scale } => scale,
        };
        if !(p > 0.0 && p.is_finite()) {
            return Err(FwiError::Config(format!("normalizer parameter must be positive, got {p}")));
        }
        Ok(())
    }

    pub fn value(&self, z: f64) -> f64 {
        match *self {
            NormalizerSpec::SquarePlusDelta { delta } => z * z + delta,
            NormalizerSpec::Exponential { scale } => (z / scale).exp(),
            NormalizerSpec::Softplus { scale } => {
                let x = z / scale;
                // stable log(1 + e^x)
                scale * (x.max(0.0) + (-x.abs()).exp().ln_1p())
            }
        }
    }

    pub fn derivative(&self, z: f64) -> f64 {
        match *self {
            NormalizerSpec::SquarePlusDelta { .. } => 2.0 * z,
            NormalizerSpec::Exponential { scale } => (z / scale).exp() / scale,
            NormalizerSpec::Softplus { scale } => 1.0 / (1.0 + (-z / scale).exp()),
        }
    }

    /// `(min σ, max σ, max |σ'|)` over `[lo, hi]`.
    pub fn range_constants(&self, lo: f64, hi: f64) -> (f64, f64, f64) {
        match *self {
            NormalizerSpec::SquarePlusDelta { delta } => {
                let m = lo.abs().max(hi.abs());
                let k = if lo <= 0.0 && hi >= 0.0 { delta } else { delta + lo.abs().min(hi.abs()).powi(2) };
                (k, m * m + delta, 2.0 * m)
            }
            // both monotone increasing with increasing derivative
            _ => (self.value(lo), self.value(hi), self.derivative(hi)),
        }
    }

    /// Lipschitz constant of `P_σ` on `L²(T)` for traces with values in
    /// `[lo, hi]`: `L/(|T|k)·(1 + K/k)` with `k, K, L` from
    /// [`range_constants`](Self::range_constants).
    pub fn p_sigma_lipschitz(&self, lo: f64, hi: f64, t_span: f64) -> f64 {
        let (k, big_k, lip) = self.range_constants(lo, hi);
        lip / (t_span * k) * (1.0 + big_k / k)
    }
}

/// `P_σ y = σ(y) / ∫σ(y)`.
pub fn p_sigma(trace: &Trace, spec: &NormalizerSpec) -> Result<DensityTrace> {
    if let Some(i) = trace.samples.iter().position(|v| !v.is_finite()) {
        return Err(FwiError::Input(format!("trace sample {i} is not finite")));
    }
    p_sigma_slice(&trace.samples, trace.dt, spec)
}

pub(crate) fn p_sigma_slice(y: &[f64], dt: f64, spec: &NormalizerSpec) -> Result<DensityTrace> {
    let s: Vec<f64> = y.iter().map(|&v| spec.value(v)).collect();
    DensityTrace::from_unnormalized(&s, dt)
}

/// Pulls a gradient with respect to the density `P_σ y` back to `y`:
/// `∂/∂yᵢ = σ'(yᵢ)/Z·(gᵢ − Σₖ gₖ fₖ dt)`.
pub fn p_sigma_vjp(y: &[f64], density: &DensityTrace, spec: &NormalizerSpec, grad: &[f64]) -> Vec<f64> {
    let dt = density.dt;
    let z: f64 = y.iter().map(|&v| spec.value(v)).sum::<f64>() * dt;
    let mean: f64 = grad.iter().zip(&density.samples).map(|(g, f)| g * f).sum::<f64>() * dt;
    y.iter().zip(grad).map(|(&v, g)| spec.derivative(v) / z * (g - mean)).collect()
}

/// Directional derivative of `P_σ` at `y` along `dy`.
pub fn p_sigma_jvp(y: &[f64], density: &DensityTrace, spec: &NormalizerSpec, dy: &[f64]) -> Vec<f64> {
    let dt = density.dt;
    let z: f64 = y.iter().map(|&v| spec.value(v)).sum::<f64>() * dt;
    let ds: Vec<f64> = y.iter().zip(dy).map(|(&v, d)| spec.derivative(v) * d / z).collect();
    let total: f64 = ds.iter().sum::<f64>() * dt;
    ds.iter().zip(&density.samples).map(|(d, f)| d - f * total).collect()
}

/// Ratios `W₂(f, (1+εh)f)²/ε²` for each `ε`, with the limit value
/// `‖h‖²_{Ḣ⁻¹(f)}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearizationTable {
    pub eps: Vec<f64>,
    pub ratios: Vec<f64>,
    pub target: f64,
}

impl LinearizationTable {
    pub fn relative_gaps(&self) -> Vec<f64> {
        self.ratios.iter().map(|r| if self.target > 0.0 { (r / self.target - 1.0).abs() } else { r.abs() }).collect()
    }
}

pub fn check_linearization(f: &DensityTrace, h: &Trace, eps_list: &[f64]) -> Result<LinearizationTable> {
    if h.len() != f.len() {
        return Err(FwiError::Shape(format!("perturbation has {} samples, density {}", h.len(), f.len())));
    }
    let target = weighted_hminus1_norm_sq(h, f)?;
    let mut ratios = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let g: Vec<f64> = f.samples.iter().zip(&h.samples).map(|(fv, hv)| (1.0 + eps * hv) * fv).collect();
        if let Some(i) = g.iter().position(|&v| v <= 0.0) {
            return Err(FwiError::Domain(format!("(1+εh)f is not positive at sample {i} for ε = {eps}")));
        }
        let mass: f64 = g.iter().sum::<f64>() * f.dt;
        let g: Vec<f64> = g.iter().map(|v| v / mass).collect();
        let gd = DensityTrace::new(g, f.dt)?;
        ratios.push(w2_sq(f, &gd)? / (eps * eps));
    }
    Ok(LinearizationTable { eps: eps_list.to_vec(), ratios, target })
}

/// `(b^{-1/2}‖f−g‖_{Ḣ⁻¹}, W₂(f,g), a^{-1/2}‖f−g‖_{Ḣ⁻¹})` with `a ≤ f, g ≤ b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquivalenceBounds {
    pub lower: f64,
    pub w2: f64,
    pub upper: f64,
    pub a: f64,
    pub b: f64,
}

impl EquivalenceBounds {
    /// Smallest margin of the two inequalities (negative when violated).
    pub fn slack(&self) -> f64 {
        (self.w2 - self.lower).min(self.upper - self.w2)
    }
}

pub fn check_equivalence_bounds(f: &DensityTrace, g: &DensityTrace) -> Result<EquivalenceBounds> {
    f.check_compatible(g)?;
    let a = f.lower.min(g.lower);
    let b = f.upper.max(g.upper);
    let diff: Vec<f64> = f.samples.iter().zip(&g.samples).map(|(x, y)| x - y).collect();
    let h = hminus1_continuum_norm(&diff, f.dt);
    Ok(EquivalenceBounds { lower: h / b.sqrt(), w2: w2_1d(f, g)?, upper: h / a.sqrt(), a, b })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_trace_gives_uniform_density() {
        for spec in [
            NormalizerSpec::SquarePlusDelta { delta: 0.3 },
            NormalizerSpec::Exponential { scale: 0.7 },
            NormalizerSpec::Softplus { scale: 2.0 },
        ] {
            let d = p_sigma(&Trace::new(vec![1.7; 40], 0.05).unwrap(), &spec).unwrap();
            assert!(d.samples.iter().all(|v| (v - 0.5).abs() < 1e-14));
        }
    }

    #[test]
    fn softplus_is_stable_for_large_arguments() {
        let s = NormalizerSpec::Softplus { scale: 1.0 };
        assert!((s.value(800.0) - 800.0).abs() < 1e-9);
        assert!(s.value(-800.0) >= 0.0 && s.value(-30.0) > 0.0);
    }

    #[test]
    fn floor_flags_degenerate_cells() {
        let d = DensityTrace::from_unnormalized(&[1.0, 1e-20, 1.0, 1.0], 0.25).unwrap();
        assert!(d.floored);
        assert!(d.lower >= DENSITY_FLOOR * 0.5);
        assert!((d.samples.iter().sum::<f64>() * 0.25 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn jvp_and_vjp_are_transposes() {
        let spec = NormalizerSpec::SquarePlusDelta { delta: 0.2 };
        let y: Vec<f64> = (0..30).map(|i| (i as f64 * 0.4).sin()).collect();
        let d = p_sigma_slice(&y, 0.1, &spec).unwrap();
        let dy: Vec<f64> = (0..30).map(|i| (i as f64 * 1.3).cos()).collect();
        let g: Vec<f64> = (0..30).map(|i| (i as f64 * 0.7).sin() + 0.3).collect();
        let a: f64 = p_sigma_jvp(&y, &d, &spec, &dy).iter().zip(&g).map(|(x, z)| x * z).sum();
        let b: f64 = p_sigma_vjp(&y, &d, &spec, &g).iter().zip(&dy).map(|(x, z)| x * z).sum();
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(Trace::new(vec![1.0, f64::NAN], 0.1), Err(FwiError::Input(_))));
        assert!(matches!(DensityTrace::new(vec![0.5, 0.5], 0.5), Err(FwiError::Input(_))));
        assert!(matches!(DensityTrace::new(vec![2.0, 0.0], 0.5), Err(FwiError::Bounds(_))));
        assert!(NormalizerSpec::SquarePlusDelta { delta: 0.0 }.validate().is_err());
    }
}
