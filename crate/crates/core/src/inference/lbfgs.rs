use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{dot, norm, Target};
use crate::error::{FwiError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapOptions {
    pub max_iter: usize,
    /// Stop when `‖∇J‖ ≤ grad_tol·‖∇J(θ₀)‖`.
    pub grad_tol: f64,
    pub memory: usize,
    pub max_backtracks: usize,
    pub armijo: f64,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self { max_iter: 200, grad_tol: 1e-6, memory: 10, max_backtracks: 30, armijo: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub theta: Vec<f64>,
    /// `Φ_eff + ½‖θ‖²` at `theta`.
    pub objective: f64,
    pub misfit: f64,
    pub grad_norm: f64,
    pub initial_grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step, starting at the initial point.
    pub history: Vec<f64>,
}

fn eval<T: Target + ?Sized>(target: &T, theta: &[f64]) -> Result<(f64, f64, Vec<f64>)> {
    let (m, mut g) = target.misfit_grad(theta)?;
    for (gi, t) in g.iter_mut().zip(theta) {
        *gi += t;
    }
    Ok((m + 0.5 * dot(theta, theta), m, g))
}

/// Two-loop recursion: `−H·g` from the stored curvature pairs.
fn direction(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Relative change in the objective treated as roundoff by the line search.
pub const ROUNDOFF: f64 = 64.0 * f64::EPSILON;

/// MAP point `argmin Φ_eff(θ) + ½‖θ‖²` by limited-memory BFGS with
/// Armijo backtracking. Starts from `init` (the prior mean `θ = 0` when
/// `None`). Accepted steps never increase the objective by more than
/// [`ROUNDOFF`] relative.
pub fn map_estimate<T: Target + ?Sized>(target: &T, init: Option<&[f64]>, opts: &MapOptions) -> Result<MapResult> {
    let n = target.dim();
    let mut theta = match init {
        Some(t) if t.len() == n => t.to_vec(),
        Some(t) => return Err(FwiError::Shape(format!("initial point has {} values, expected {n}", t.len()))),
        None => vec![0.0; n],
    };
    let (mut f, mut misfit, mut g) = eval(target, &theta)?;
    if !f.is_finite() {
        return Err(FwiError::Optimization(format!("objective at the initial point is {f}")));
    }
    let g0 = norm(&g);
    let mut history = vec![f];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let tol = opts.grad_tol * g0;
    while iterations < opts.max_iter && norm(&g) > tol {
        let mut d = direction(&g, &pairs);
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            pairs.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut step = if pairs.is_empty() { (1.0 / norm(&g)).min(1.0) } else { 1.0 };
        let mut accepted = None;
        let mut last = (f64::NAN, 0.0);
        for _ in 0..=opts.max_backtracks {
            let trial: Vec<f64> = theta.iter().zip(&d).map(|(t, di)| t + step * di).collect();
            match eval(target, &trial) {
                Ok((ft, mt, gt)) if ft.is_finite() && ft <= f + opts.armijo * step * slope => {
                    accepted = Some((trial, ft, mt, gt));
                    break;
                }
                // near the optimum changes in f drop below its roundoff; fall
                // back to requiring a smaller gradient
                Ok((ft, mt, gt)) if (ft - f).abs() <= ROUNDOFF * f.abs() && norm(&gt) < norm(&g) =>
                {
                    accepted = Some((trial, ft, mt, gt));
                    break;
                }
                Ok((ft, ..)) => last = (ft, step),
                Err(FwiError::Domain(_)) | Err(FwiError::Bounds(_)) => last = (f64::NAN, step),
                Err(e) => return Err(e),
            }
            step *= 0.5;
        }
        let Some((trial, ft, mt, gt)) = accepted else {
            if !pairs.is_empty() {
                // retry from steepest descent before giving up
                pairs.clear();
                continue;
            }
            return Err(FwiError::Optimization(format!(
                "line search failed after {} backtracks at iteration {iterations}: objective {f:.6e}, \
                 gradient norm {:.3e} (initial {g0:.3e}), last trial value {:.6e} at step {:.3e}",
                opts.max_backtracks,
                norm(&g),
                last.0,
                last.1
            )));
        };
        let s: Vec<f64> = trial.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        theta = trial;
        f = ft;
        misfit = mt;
        g = gt;
        history.push(f);
        iterations += 1;
    }
    let grad_norm = norm(&g);
    Ok(MapResult {
        theta,
        objective: f,
        misfit,
        grad_norm,
        initial_grad_norm: g0,
        iterations,
        converged: grad_norm <= tol,
        history,
    })
}
