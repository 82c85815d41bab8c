use crate::error::{FwiError, Result};
use crate::fft::Dct;

use super::{max_abs, DensityTrace, Trace};

/// Eigenvalues of the cell-centred Neumann Laplacian on `n` cells,
/// `λ_k = (2 sin(kπ/2n)/dt)²`, matching the cosine modes `cos(kπt/|T|)`.
fn neumann_eigenvalue(k: usize, n: usize, dt: f64) -> f64 {
    let s = 2.0 * (std::f64::consts::PI * k as f64 / (2 * n) as f64).sin() / dt;
    s * s
}

/// Poincaré constant `1/λ₁` of the discrete Neumann Laplacian; tends to
/// `(|T|/π)²` from above as `dt → 0`.
pub fn poincare_constant(n: usize, dt: f64) -> f64 {
    1.0 / neumann_eigenvalue(1, n, dt)
}

fn check_zero_mean(h: &[f64]) -> Result<()> {
    let mean = h.iter().sum::<f64>() / h.len() as f64;
    let scale = max_abs(h);
    if mean.abs() > 1e-8 * scale {
        return Err(FwiError::Precondition(format!(
            "Ḣ⁻¹ seminorm needs a zero-mean trace (mean {mean:e}, max {scale:e}); apply remove_zero_frequency first"
        )));
    }
    Ok(())
}

/// `‖h‖²_{Ḣ⁻¹}` of a zero-mean trace: cosine coefficients divided by the
/// Neumann eigenvalues. The zero mode is ignored.
pub fn hminus1_norm_sq(h: &[f64], dt: f64) -> f64 {
    let n = h.len();
    let x = Dct::cached(n).forward(h);
    let t_span = n as f64 * dt;
    let scale = 2.0 / n as f64;
    let sum: f64 = (1..n).map(|k| (scale * x[k]).powi(2) / neumann_eigenvalue(k, n, dt)).sum();
    0.5 * t_span * sum
}

/// Gradient of [`hminus1_norm_sq`] with respect to the samples, i.e.
/// `2·(−Δ_T)⁻¹h·dt`.
pub fn hminus1_grad(h: &[f64], dt: f64) -> Vec<f64> {
    let n = h.len();
    let dct = Dct::cached(n);
    let x = dct.forward(h);
    let t_span = n as f64 * dt;
    let scale = 2.0 / n as f64;
    let mut a = vec![0.0; n];
    for k in 1..n {
        a[k] = t_span * scale * scale * x[k] / neumann_eigenvalue(k, n, dt);
    }
    dct.transpose(&a)
}

pub fn hminus1_norm(h: &Trace) -> Result<f64> {
    check_zero_mean(&h.samples)?;
    Ok(hminus1_norm_sq(&h.samples, h.dt).sqrt())
}

/// Continuum `Ḣ⁻¹(T)` seminorm of a zero-mean piecewise-constant function:
/// the `L²` norm of its (piecewise-linear) primitive, integrated exactly.
pub fn hminus1_continuum_norm(h: &[f64], dt: f64) -> f64 {
    let mut prim = 0.0;
    let mut sum = 0.0;
    for &v in h {
        let next = prim + v * dt;
        sum += prim * prim + prim * next + next * next;
        prim = next;
    }
    (sum * dt / 3.0).sqrt()
}

/// `‖h‖²_{Ḣ⁻¹(f)}`: the flux `q = f φ'` solving `−(fφ')' = hf` with zero
/// flux at both ends is a running sum, and the norm is `∫ q²/f`. Interface
/// densities are arithmetic means of the adjacent cells.
pub fn weighted_hminus1_norm_sq(h: &Trace, f: &DensityTrace) -> Result<f64> {
    if h.len() != f.len() || (h.dt - f.dt).abs() > 1e-12 * f.dt {
        return Err(FwiError::Shape(format!("trace ({}) and density ({}) sampling differ", h.len(), f.len())));
    }
    if !(f.lower > 0.0) {
        return Err(FwiError::Bounds(format!("density lower bound {} is not positive", f.lower)));
    }
    let dt = f.dt;
    let weighted: f64 = h.samples.iter().zip(&f.samples).map(|(a, b)| a * b).sum::<f64>() * dt;
    let scale: f64 = h.samples.iter().zip(&f.samples).map(|(a, b)| a.abs() * b).sum::<f64>() * dt;
    if weighted.abs() > 1e-8 * scale {
        return Err(FwiError::Precondition(format!("perturbation has nonzero f-weighted mean {weighted:e}")));
    }
    let n = f.len();
    let mut flux = 0.0;
    let mut sum = 0.0;
    for i in 0..n - 1 {
        flux -= h.samples[i] * f.samples[i] * dt;
        sum += flux * flux / (0.5 * (f.samples[i] + f.samples[i + 1]));
    }
    Ok(sum * dt)
}

pub fn weighted_hminus1_norm(h: &Trace, f: &DensityTrace) -> Result<f64> {
    Ok(weighted_hminus1_norm_sq(h, f)?.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_matches_quadratic_form() {
        let n = 37;
        let dt = 0.03;
        let h: Vec<f64> = (0..n).map(|i| (i as f64 * 0.9).sin() - 0.1 * i as f64).collect();
        let g = hminus1_grad(&h, dt);
        // norm² is quadratic, so ⟨∇, h⟩ = 2·norm²
        let ip: f64 = g.iter().zip(&h).map(|(a, b)| a * b).sum();
        let mut hm = h.clone();
        let mean = hm.iter().sum::<f64>() / n as f64;
        hm.iter_mut().for_each(|v| *v -= mean);
        assert!((ip - 2.0 * hminus1_norm_sq(&hm, dt)).abs() < 1e-10 * ip.abs());
    }

    #[test]
    fn discrete_poincare_exceeds_continuum_value() {
        let c = poincare_constant(100, 0.01);
        let cont = (1.0 / std::f64::consts::PI).powi(2);
        assert!(c >= cont && c < cont * (1.0 + 1e-3));
    }

    #[test]
    fn nonzero_mean_names_the_fix() {
        let err = hminus1_norm(&Trace::new(vec![1.0, 2.0, 3.0], 0.1).unwrap()).unwrap_err();
        assert!(err.to_string().contains("remove_zero_frequency"));
    }
}
