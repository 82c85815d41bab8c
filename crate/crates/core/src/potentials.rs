//! Data misfits `Φ(u; y)` over whole seismograms and their adjoint-state
//! gradients in the latent field.
//!
//! All four potentials act on the zero-frequency-free prediction
//! `𝒢(u) = remove_zero_frequency(S(F(u)))`. Values are raw; the posterior
//! uses `β·Φ/norm_constant`.

use serde::{Deserialize, Serialize};

use crate::error::{FwiError, Result};
use crate::exec::Exec;
use crate::grid_wave::{
    remove_zero_frequency, AcquisitionGeometry, ForwardHistory, Grid2D, Seismogram, SolverConfig, VelocityBounds,
    WaveSolver,
};
use crate::signal::{
    self, hminus1_grad, hminus1_norm_sq, p_sigma_jvp, p_sigma_slice, p_sigma_vjp, poincare_constant,
    w2_gauss_newton_apply, w2_sq, w2_sq_grad, NormalizerSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    L2,
    Hm1,
    M,
    W2,
}

impl PotentialKind {
    pub fn label(self) -> &'static str {
        match self {
            PotentialKind::L2 => "L2",
            PotentialKind::Hm1 => "Hm1",
            PotentialKind::M => "M",
            PotentialKind::W2 => "W2",
        }
    }

    pub fn needs_normalizer(self) -> bool {
        matches!(self, PotentialKind::M | PotentialKind::W2)
    }
}

impl std::fmt::Display for PotentialKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Denominator of the multiplicative misfit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MDenominator {
    #[default]
    Observed,
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub beta: f64,
    #[serde(default)]
    pub normalizer: Option<NormalizerSpec>,
    #[serde(default = "one")]
    pub norm_constant: f64,
    #[serde(default)]
    pub m_denominator: MDenominator,
}

fn one() -> f64 {
    1.0
}

impl PotentialSpec {
    pub fn new(kind: PotentialKind, beta: f64, normalizer: Option<NormalizerSpec>) -> Result<Self> {
        let spec = Self { kind, beta, normalizer, norm_constant: 1.0, m_denominator: MDenominator::Observed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(FwiError::Config(format!("inverse temperature must be positive, got {}", self.beta)));
        }
        if !(self.norm_constant > 0.0 && self.norm_constant.is_finite()) {
            return Err(FwiError::Config(format!("norm_constant must be positive, got {}", self.norm_constant)));
        }
        match (self.kind.needs_normalizer(), &self.normalizer) {
            (true, None) => Err(FwiError::Config(format!("potential {} needs a normalizer", self.kind))),
            (false, Some(_)) => Err(FwiError::Config(format!("potential {} takes no normalizer", self.kind))),
            (true, Some(n)) => n.validate(),
            (false, None) => Ok(()),
        }
    }

    /// Factor turning a raw value into the posterior potential.
    pub fn scale(&self) -> f64 {
        self.beta / self.norm_constant
    }

    fn normalizer(&self) -> Result<&NormalizerSpec> {
        self.normalizer.as_ref().ok_or_else(|| FwiError::Config(format!("potential {} needs a normalizer", self.kind)))
    }

    /// Upper bound on the raw value when every predicted sample satisfies
    /// `|𝒢(u)| ≤ c` and every observed sample `|y| ≤ r`.
    pub fn value_bound(&self, n_traces: usize, nt: usize, dt: f64, c: f64, r: f64) -> Result<f64> {
        let t = nt as f64 * dt;
        let n = n_traces as f64;
        Ok(match self.kind {
            PotentialKind::L2 => 0.5 * n * t * (c + r).powi(2),
            PotentialKind::Hm1 => 0.5 * poincare_constant(nt, dt) * n * t * (c + r).powi(2),
            PotentialKind::M => {
                let sigma = self.normalizer()?;
                let (kc, bc, _) = sigma.range_constants(-c, c);
                let (kr, br, _) = sigma.range_constants(-r, r);
                let f_max = bc / (t * kc);
                let g_min = kr / (t * br);
                let ratio = match self.m_denominator {
                    MDenominator::Observed => f_max / g_min + 1.0,
                    MDenominator::Predicted => (br / (t * kr)) / (kc / (t * bc)) + 1.0,
                };
                0.5 * n * t * ratio * ratio
            }
            PotentialKind::W2 => 0.5 * n * t * t,
        })
    }
}

/// Result of evaluating a potential at a latent field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossEval {
    /// `½ Σ per_trace` (receiver weights are 1).
    pub value: f64,
    pub per_trace: Vec<f64>,
    /// `∂value/∂u`, zero on fixed cells.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradient: Option<Vec<f64>>,
    /// Some density had to be floored.
    pub floored: bool,
}

/// Misfit between two seismograms with its derivative in the prediction.
#[derive(Debug, Clone)]
pub struct DataMisfit {
    pub value: f64,
    pub per_trace: Vec<f64>,
    pub data_gradient: Option<Seismogram>,
    pub floored: bool,
}

struct TraceTerm {
    value: f64,
    grad: Vec<f64>,
    floored: bool,
}

fn check_zero_mean(r: &[f64]) -> Result<()> {
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    let scale = signal::max_abs(r);
    if mean.abs() > 1e-8 * scale {
        return Err(FwiError::Precondition(
            "Ḣ⁻¹ misfit needs zero-mean traces; apply remove_zero_frequency to both prediction and data".into(),
        ));
    }
    Ok(())
}

fn trace_term(spec: &PotentialSpec, p: &[f64], y: &[f64], dt: f64, with_grad: bool) -> Result<TraceTerm> {
    let mut floored = false;
    let (value, grad) = match spec.kind {
        PotentialKind::L2 => {
            let r: Vec<f64> = p.iter().zip(y).map(|(a, b)| a - b).collect();
            let v = r.iter().map(|x| x * x).sum::<f64>() * dt;
            (v, if with_grad { r.iter().map(|x| x * dt).collect() } else { Vec::new() })
        }
        PotentialKind::Hm1 => {
            let r: Vec<f64> = p.iter().zip(y).map(|(a, b)| a - b).collect();
            check_zero_mean(&r)?;
            let v = hminus1_norm_sq(&r, dt);
            let g = if with_grad { hminus1_grad(&r, dt).iter().map(|x| 0.5 * x).collect() } else { Vec::new() };
            (v, g)
        }
        PotentialKind::M => {
            let sigma = spec.normalizer()?;
            let f = p_sigma_slice(p, dt, sigma)?;
            let g = p_sigma_slice(y, dt, sigma)?;
            floored = f.floored || g.floored;
            let (v, df): (f64, Vec<f64>) = match spec.m_denominator {
                MDenominator::Observed => {
                    let v = f.samples.iter().zip(&g.samples).map(|(a, b)| ((a - b) / b).powi(2)).sum::<f64>() * dt;
                    let df = f.samples.iter().zip(&g.samples).map(|(a, b)| (a - b) / (b * b) * dt).collect();
                    (v, df)
                }
                MDenominator::Predicted => {
                    let v = f.samples.iter().zip(&g.samples).map(|(a, b)| ((a - b) / a).powi(2)).sum::<f64>() * dt;
                    let df = f.samples.iter().zip(&g.samples).map(|(a, b)| (a - b) / a * b / (a * a) * dt).collect();
                    (v, df)
                }
            };
            (v, if with_grad { p_sigma_vjp(p, &f, sigma, &df) } else { Vec::new() })
        }
        PotentialKind::W2 => {
            let sigma = spec.normalizer()?;
            let f = p_sigma_slice(p, dt, sigma)?;
            let g = p_sigma_slice(y, dt, sigma)?;
            floored = f.floored || g.floored;
            if with_grad {
                let (v, df) = w2_sq_grad(&f, &g)?;
                let half: Vec<f64> = df.iter().map(|x| 0.5 * x).collect();
                (v, p_sigma_vjp(p, &f, sigma, &half))
            } else {
                (w2_sq(&f, &g)?, Vec::new())
            }
        }
    };
    Ok(TraceTerm { value, grad, floored })
}

/// `Φ` between a prediction and observed data, with `∂Φ/∂pred` on request.
pub fn data_misfit(
    spec: &PotentialSpec,
    pred: &Seismogram,
    obs: &Seismogram,
    with_grad: bool,
    exec: Exec,
) -> Result<DataMisfit> {
    pred.check_same_shape(obs)?;
    let nt = pred.nt;
    let terms = exec.map_range(pred.n_traces(), |k| {
        let s = k * nt..(k + 1) * nt;
        trace_term(spec, &pred.data[s.clone()], &obs.data[s], pred.dt, with_grad)
    });
    let mut per_trace = Vec::with_capacity(terms.len());
    let mut grad = if with_grad { Vec::with_capacity(pred.data.len()) } else { Vec::new() };
    let mut floored = false;
    for t in terms {
        let t = t?;
        per_trace.push(t.value);
        grad.extend_from_slice(&t.grad);
        floored |= t.floored;
    }
    let value = 0.5 * per_trace.iter().sum::<f64>();
    let data_gradient = if with_grad { Some(pred.with_data(grad)?) } else { None };
    Ok(DataMisfit { value, per_trace, data_gradient, floored })
}

/// Gauss–Newton Hessian of the data misfit at `pred`, applied to `dpred`:
/// the second variation with the residual's own curvature dropped. Exact for
/// the quadratic `L²` and `Ḣ⁻¹` misfits; for `W₂` it is the weighted
/// `Ḣ⁻¹(f)` form that linearizes the transport distance.
pub fn data_gauss_newton(
    spec: &PotentialSpec,
    pred: &Seismogram,
    obs: &Seismogram,
    dpred: &Seismogram,
    exec: Exec,
) -> Result<Seismogram> {
    pred.check_same_shape(obs)?;
    pred.check_same_shape(dpred)?;
    let nt = pred.nt;
    let dt = pred.dt;
    let parts = exec.map_range(pred.n_traces(), |k| -> Result<Vec<f64>> {
        let s = k * nt..(k + 1) * nt;
        let (p, y, dp) = (&pred.data[s.clone()], &obs.data[s.clone()], &dpred.data[s]);
        Ok(match spec.kind {
            PotentialKind::L2 => dp.iter().map(|x| x * dt).collect(),
            PotentialKind::Hm1 => hminus1_grad(dp, dt).iter().map(|x| 0.5 * x).collect(),
            PotentialKind::M => {
                let sigma = spec.normalizer()?;
                let f = p_sigma_slice(p, dt, sigma)?;
                let g = p_sigma_slice(y, dt, sigma)?;
                let df = p_sigma_jvp(p, &f, sigma, dp);
                let w: Vec<f64> = match spec.m_denominator {
                    MDenominator::Observed => df.iter().zip(&g.samples).map(|(d, b)| d * dt / (b * b)).collect(),
                    MDenominator::Predicted => f
                        .samples
                        .iter()
                        .zip(&g.samples)
                        .zip(&df)
                        .map(|((a, b), d)| d * dt * b * b / a.powi(4))
                        .collect(),
                };
                p_sigma_vjp(p, &f, sigma, &w)
            }
            PotentialKind::W2 => {
                let sigma = spec.normalizer()?;
                let f = p_sigma_slice(p, dt, sigma)?;
                let df = p_sigma_jvp(p, &f, sigma, dp);
                let hd = w2_gauss_newton_apply(&f, &df);
                p_sigma_vjp(p, &f, sigma, &hd)
            }
        })
    });
    let mut out = Vec::with_capacity(pred.data.len());
    for p in parts {
        out.extend(p?);
    }
    pred.with_data(out)
}

/// The parameter-to-observation map `u ↦ remove_zero_frequency(S(F(u)))`
/// with its linearization and adjoint. Cells above the water bottom are
/// held fixed: derivatives in those cells are zero.
#[derive(Debug, Clone)]
pub struct ForwardMap {
    solver: WaveSolver,
    bounds: VelocityBounds,
    active: Vec<bool>,
}

/// Prediction at `u` together with the stored wavefields needed for
/// linearized solves.
#[derive(Debug, Clone)]
pub struct LinearizationPoint {
    pub u: Vec<f64>,
    pub m: Vec<f64>,
    pub pred: Seismogram,
    history: Vec<ForwardHistory>,
}

impl ForwardMap {
    pub fn new(grid: Grid2D, geom: AcquisitionGeometry, cfg: SolverConfig, bounds: VelocityBounds) -> Result<Self> {
        bounds.validate()?;
        let active = grid.active_mask();
        let solver = WaveSolver::new(grid, geom, cfg, bounds.v_max)?;
        Ok(Self { solver, bounds, active })
    }

    pub fn grid(&self) -> &Grid2D {
        self.solver.grid()
    }

    pub fn geometry(&self) -> &AcquisitionGeometry {
        self.solver.geometry()
    }

    pub fn bounds(&self) -> &VelocityBounds {
        &self.bounds
    }

    pub fn exec(&self) -> Exec {
        self.solver.config().exec
    }

    pub fn active_mask(&self) -> &[bool] {
        &self.active
    }

    pub fn n_params(&self) -> usize {
        self.active.len()
    }

    fn check_len(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.n_params() {
            return Err(FwiError::Shape(format!("latent field has {} cells, grid has {}", u.len(), self.n_params())));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(FwiError::Domain("latent field is not finite".into()));
        }
        Ok(())
    }

    pub fn slowness_sq(&self, u: &[f64]) -> Vec<f64> {
        u.iter().map(|&z| self.bounds.slowness_sq(z)).collect()
    }

    pub fn predict(&self, u: &[f64]) -> Result<Seismogram> {
        self.check_len(u)?;
        Ok(remove_zero_frequency(&self.solver.forward(&self.slowness_sq(u))?))
    }

    pub fn linearize(&self, u: &[f64]) -> Result<LinearizationPoint> {
        self.check_len(u)?;
        let m = self.slowness_sq(u);
        let (raw, history) = self.solver.forward_with_history(&m)?;
        Ok(LinearizationPoint { u: u.to_vec(), m, pred: remove_zero_frequency(&raw), history })
    }

    /// `J(u)ᵀ·r` for a data-space covector `r`.
    pub fn adjoint(&self, at: &LinearizationPoint, r: &Seismogram) -> Result<Vec<f64>> {
        // the zero-frequency projection is symmetric
        let proj = remove_zero_frequency(r);
        let gm = self.solver.adjoint(&at.m, &proj, &at.history)?;
        Ok(at
            .u
            .iter()
            .zip(&gm)
            .zip(&self.active)
            .map(|((&z, g), &a)| if a { g * self.bounds.slowness_sq_derivative(z) } else { 0.0 })
            .collect())
    }

    /// `J(u)·du`.
    pub fn jvp(&self, at: &LinearizationPoint, du: &[f64]) -> Result<Seismogram> {
        self.check_len(du)?;
        let dm: Vec<f64> = at
            .u
            .iter()
            .zip(du)
            .zip(&self.active)
            .map(|((&z, d), &a)| if a { d * self.bounds.slowness_sq_derivative(z) } else { 0.0 })
            .collect();
        Ok(remove_zero_frequency(&self.solver.born(&at.m, &at.history, &dm)?))
    }
}

/// A potential bound to one observed dataset.
#[derive(Debug, Clone)]
pub struct Potential {
    pub spec: PotentialSpec,
    pub data: Seismogram,
}

impl Potential {
    pub fn new(spec: PotentialSpec, data: Seismogram) -> Result<Self> {
        spec.validate()?;
        if !data.is_finite() {
            return Err(FwiError::Input("observed data contain non-finite samples".into()));
        }
        Ok(Self { spec, data })
    }

    pub fn eval(&self, fwd: &ForwardMap, u: &[f64], with_gradient: bool) -> Result<LossEval> {
        if with_gradient {
            let at = fwd.linearize(u)?;
            self.eval_at(fwd, &at, true)
        } else {
            let pred = fwd.predict(u)?;
            let d = data_misfit(&self.spec, &pred, &self.data, false, fwd.exec())?;
            Ok(LossEval { value: d.value, per_trace: d.per_trace, gradient: None, floored: d.floored })
        }
    }

    pub fn eval_at(&self, fwd: &ForwardMap, at: &LinearizationPoint, with_gradient: bool) -> Result<LossEval> {
        let d = data_misfit(&self.spec, &at.pred, &self.data, with_gradient, fwd.exec())?;
        let gradient = match &d.data_gradient {
            Some(g) => Some(fwd.adjoint(at, g)?),
            None => None,
        };
        Ok(LossEval { value: d.value, per_trace: d.per_trace, gradient, floored: d.floored })
    }

    /// Gauss–Newton Hessian of the raw potential at `at`, applied to `du`.
    pub fn gauss_newton(&self, fwd: &ForwardMap, at: &LinearizationPoint, du: &[f64]) -> Result<Vec<f64>> {
        let jd = fwd.jvp(at, du)?;
        let hj = data_gauss_newton(&self.spec, &at.pred, &self.data, &jd, fwd.exec())?;
        fwd.adjoint(at, &hj)
    }
}

fn eval_kind(
    kind: PotentialKind,
    normalizer: Option<NormalizerSpec>,
    fwd: &ForwardMap,
    u: &[f64],
    y: &Seismogram,
) -> Result<LossEval> {
    let spec = PotentialSpec::new(kind, 1.0, normalizer)?;
    Potential::new(spec, y.clone())?.eval(fwd, u, true)
}

/// `½ Σ ‖𝒢(u) − y‖²_{L²(T)}` with gradient.
pub fn eval_l2(fwd: &ForwardMap, u: &[f64], y: &Seismogram) -> Result<LossEval> {
    eval_kind(PotentialKind::L2, None, fwd, u, y)
}

/// `½ Σ ‖𝒢(u) − y‖²_{Ḣ⁻¹(T)}` with gradient.
pub fn eval_hm1(fwd: &ForwardMap, u: &[f64], y: &Seismogram) -> Result<LossEval> {
    eval_kind(PotentialKind::Hm1, None, fwd, u, y)
}

/// `½ Σ ‖(P_σ𝒢(u) − P_σy)/P_σy‖²_{L²(T)}` with gradient.
pub fn eval_m(fwd: &ForwardMap, u: &[f64], y: &Seismogram, sigma: NormalizerSpec) -> Result<LossEval> {
    eval_kind(PotentialKind::M, Some(sigma), fwd, u, y)
}

/// `½ Σ W₂(P_σ𝒢(u), P_σy)²` with gradient.
pub fn eval_w2(fwd: &ForwardMap, u: &[f64], y: &Seismogram, sigma: NormalizerSpec) -> Result<LossEval> {
    eval_kind(PotentialKind::W2, Some(sigma), fwd, u, y)
}

/// Sets `norm_constant = Φ(u₀; y)` so that the stored potential is 1 at `u₀`.
pub fn calibrate(spec: &PotentialSpec, fwd: &ForwardMap, u0: &[f64], y: &Seismogram) -> Result<PotentialSpec> {
    let pred = fwd.predict(u0)?;
    calibrate_with_prediction(spec, &pred, y, fwd.exec())
}

pub fn calibrate_with_prediction(
    spec: &PotentialSpec,
    pred: &Seismogram,
    y: &Seismogram,
    exec: Exec,
) -> Result<PotentialSpec> {
    let v = data_misfit(spec, pred, y, false, exec)?.value;
    if !(v > 0.0 && v.is_finite()) {
        return Err(FwiError::Calibration(format!("potential {} at the reference field is {v}", spec.kind)));
    }
    let mut out = spec.clone();
    out.norm_constant = v;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seis(data: Vec<f64>, nt: usize, dt: f64) -> Seismogram {
        let mut s = Seismogram::zeros(1, data.len() / nt, nt, dt);
        s.data = data;
        s
    }

    #[test]
    fn spec_validation() {
        assert!(PotentialSpec::new(PotentialKind::W2, 1.0, None).is_err());
        assert!(PotentialSpec::new(PotentialKind::L2, 1.0, Some(NormalizerSpec::Exponential { scale: 1.0 })).is_err());
        assert!(PotentialSpec::new(PotentialKind::L2, 0.0, None).is_err());
        assert!(PotentialSpec::new(PotentialKind::Hm1, 2.0, None).is_ok());
    }

    #[test]
    fn constant_residual_l2_value() {
        let nt = 100;
        let dt = 0.01;
        let p = seis(vec![0.7; nt], nt, dt);
        let y = seis(vec![0.0; nt], nt, dt);
        let spec = PotentialSpec::new(PotentialKind::L2, 1.0, None).unwrap();
        let d = data_misfit(&spec, &p, &y, true, Exec::Sequential).unwrap();
        assert!((d.value - 0.5 * 0.49).abs() < 1e-14);
    }

    #[test]
    fn calibration_rejects_zero_misfit() {
        let p = seis(vec![0.1, -0.1, 0.2, -0.2], 4, 0.25);
        let spec = PotentialSpec::new(PotentialKind::L2, 1.0, None).unwrap();
        assert!(matches!(calibrate_with_prediction(&spec, &p, &p, Exec::Sequential), Err(FwiError::Calibration(_))));
    }
}
