use crate::error::{FwiError, Result};

use super::DensityTrace;

/// A probability measure on the line, given either as weighted atoms or as
/// uniform mass on consecutive intervals. Masses need not be normalized.
#[derive(Debug, Clone, Copy)]
pub enum Measure1D<'a> {
    Atomic { positions: &'a [f64], weights: &'a [f64] },
    /// `masses[k]` spread uniformly over `[edges[k], edges[k+1]]`.
    PiecewiseUniform { edges: &'a [f64], masses: &'a [f64] },
}

/// Affine piece of a quantile function: on a `q`-interval of length `len`
/// it runs from `x0` with slope `slope`.
#[derive(Debug, Clone, Copy)]
struct Piece {
    len: f64,
    x0: f64,
    slope: f64,
    cell: usize,
}

fn quantile_pieces(m: &Measure1D) -> Result<Vec<Piece>> {
    let check = |w: &[f64]| -> Result<f64> {
        if let Some(v) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(FwiError::Input(format!("invalid mass {v}")));
        }
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            return Err(FwiError::Input("measure has zero mass".into()));
        }
        Ok(total)
    };
    match *m {
        Measure1D::Atomic { positions, weights } => {
            if positions.len() != weights.len() {
                return Err(FwiError::Shape(format!("{} atoms but {} weights", positions.len(), weights.len())));
            }
            if positions.iter().any(|x| !x.is_finite()) {
                return Err(FwiError::Input("atom position is not finite".into()));
            }
            let total = check(weights)?;
            let mut order: Vec<usize> = (0..positions.len()).collect();
            order.sort_by(|&a, &b| positions[a].total_cmp(&positions[b]));
            Ok(order
                .into_iter()
                .filter(|&k| weights[k] > 0.0)
                .map(|k| Piece { len: weights[k] / total, x0: positions[k], slope: 0.0, cell: k })
                .collect())
        }
        Measure1D::PiecewiseUniform { edges, masses } => {
            if edges.len() != masses.len() + 1 {
                return Err(FwiError::Shape(format!("{} edges for {} cells", edges.len(), masses.len())));
            }
            if edges.windows(2).any(|e| !(e[1] > e[0])) {
                return Err(FwiError::Input("interval edges must be increasing".into()));
            }
            let total = check(masses)?;
            Ok((0..masses.len())
                .filter(|&k| masses[k] > 0.0)
                .map(|k| {
                    let len = masses[k] / total;
                    Piece { len, x0: edges[k], slope: (edges[k + 1] - edges[k]) / len, cell: k }
                })
                .collect())
        }
    }
}

/// Walks the common refinement of two quantile partitions. For every
/// interval `[0, Δ]` (in local `q`) it passes the first piece, `Δ`, the
/// offset into each piece and the second piece.
fn merge(a: &[Piece], b: &[Piece], mut visit: impl FnMut(&Piece, f64, f64, &Piece, f64)) {
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a.first().map_or(0.0, |p| p.len), b.first().map_or(0.0, |p| p.len));
    while i < a.len() && j < b.len() {
        let delta = ra.min(rb);
        visit(&a[i], delta, a[i].len - ra, &b[j], b[j].len - rb);
        ra -= delta;
        rb -= delta;
        if ra <= 0.0 {
            i += 1;
            ra = a.get(i).map_or(0.0, |p| p.len);
        }
        if rb <= 0.0 {
            j += 1;
            rb = b.get(j).map_or(0.0, |p| p.len);
        }
    }
}

/// `∫₀¹ (d₀ + d₁s)² ds` over `[0, Δ]`.
fn affine_sq_integral(d0: f64, d1: f64, delta: f64) -> f64 {
    delta * (d0 * d0 + d0 * d1 * delta + d1 * d1 * delta * delta / 3.0)
}

/// Squared quadratic Wasserstein distance `∫₀¹ |F⁻¹ − G⁻¹|² dq`, integrated
/// exactly over the merged breakpoints of the two quantile functions.
/// Atoms use the right-continuous generalized inverse.
pub fn w2_sq_measures(a: &Measure1D, b: &Measure1D) -> Result<f64> {
    let pa = quantile_pieces(a)?;
    let pb = quantile_pieces(b)?;
    let mut total = 0.0;
    merge(&pa, &pb, |p, delta, oa, q, ob| {
        let d0 = (p.x0 + p.slope * oa) - (q.x0 + q.slope * ob);
        total += affine_sq_integral(d0, p.slope - q.slope, delta);
    });
    Ok(total)
}

fn density_pieces(f: &DensityTrace) -> Vec<Piece> {
    let total: f64 = f.samples.iter().sum::<f64>() * f.dt;
    f.samples
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let len = v * f.dt / total;
            Piece { len, x0: k as f64 * f.dt, slope: f.dt / len, cell: k }
        })
        .collect()
}

pub fn w2_sq(f: &DensityTrace, g: &DensityTrace) -> Result<f64> {
    f.check_compatible(g)?;
    let (pa, pb) = (density_pieces(f), density_pieces(g));
    let mut total = 0.0;
    merge(&pa, &pb, |p, delta, oa, q, ob| {
        let d0 = (p.x0 + p.slope * oa) - (q.x0 + q.slope * ob);
        total += affine_sq_integral(d0, p.slope - q.slope, delta);
    });
    Ok(total)
}

pub fn w2_1d(f: &DensityTrace, g: &DensityTrace) -> Result<f64> {
    Ok(w2_sq(f, g)?.sqrt())
}

/// `W₂²(f, g)` and its derivative with respect to the density values of
/// `f`: `∂/∂fᵢ = ∫_{cell i} φ dt`, where `φ' = 2(t − T(t))` for the monotone
/// map `T` pushing `f` to `g`. `φ` is fixed by `φ(0) = 0`; the derivative is
/// meaningful along mass-preserving perturbations.
pub fn w2_sq_grad(f: &DensityTrace, g: &DensityTrace) -> Result<(f64, Vec<f64>)> {
    f.check_compatible(g)?;
    let (pa, pb) = (density_pieces(f), density_pieces(g));
    let mut total = 0.0;
    let mut grad = vec![0.0; f.samples.len()];
    let mut phi = 0.0;
    merge(&pa, &pb, |p, delta, oa, q, ob| {
        let d0 = (p.x0 + p.slope * oa) - (q.x0 + q.slope * ob);
        let d1 = p.slope - q.slope;
        total += affine_sq_integral(d0, d1, delta);
        // along q, dt = slope·dq and dφ/dq = 2·slope·(X − Y)
        let s = p.slope;
        let d2 = delta * delta;
        grad[p.cell] += s * (phi * delta + 2.0 * s * (d0 * d2 / 2.0 + d1 * d2 * delta / 6.0));
        phi += 2.0 * s * (d0 * delta + d1 * d2 / 2.0);
    });
    Ok((total, grad))
}

/// Gauss–Newton Hessian of `½W₂²(·, g)` at `f`, applied to a density
/// perturbation `df`: the quadratic form is `∫ (δF)²/f dt` with `δF` the
/// cumulative perturbation, sampled at cell interfaces.
pub fn w2_gauss_newton_apply(f: &DensityTrace, df: &[f64]) -> Vec<f64> {
    let n = f.samples.len();
    let dt = f.dt;
    let mut acc = 0.0;
    let mut a = vec![0.0; n];
    for i in 0..n - 1 {
        acc += df[i] * dt;
        let fbar = 0.5 * (f.samples[i] + f.samples[i + 1]);
        a[i] = acc * dt / fbar;
    }
    let mut out = vec![0.0; n];
    let mut tail = 0.0;
    for k in (0..n).rev() {
        tail += a[k];
        out[k] = tail * dt;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_atoms_give_squared_distance() {
        let a = Measure1D::Atomic { positions: &[0.3], weights: &[2.0] };
        let b = Measure1D::Atomic { positions: &[1.1], weights: &[0.5] };
        assert!((w2_sq_measures(&a, &b).unwrap() - 0.64).abs() < 1e-15);
    }

    #[test]
    fn uniform_intervals_match_closed_form() {
        // U[0,1] vs U[2,4]: quantiles q and 2+2q, ∫(2+q)² dq = 19/3
        let a = Measure1D::PiecewiseUniform { edges: &[0.0, 1.0], masses: &[1.0] };
        let b = Measure1D::PiecewiseUniform { edges: &[2.0, 3.0, 4.0], masses: &[0.5, 0.5] };
        assert!((w2_sq_measures(&a, &b).unwrap() - 19.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn gauss_newton_form_is_symmetric_psd() {
        let f = DensityTrace::from_unnormalized(&[1.0, 2.0, 0.5, 1.5, 1.0], 0.2).unwrap();
        let x = [0.3, -0.1, 0.2, -0.5, 0.1];
        let y = [-0.2, 0.4, 0.1, 0.0, -0.3];
        let hx = w2_gauss_newton_apply(&f, &x);
        let hy = w2_gauss_newton_apply(&f, &y);
        let xhy: f64 = x.iter().zip(&hy).map(|(a, b)| a * b).sum();
        let yhx: f64 = y.iter().zip(&hx).map(|(a, b)| a * b).sum();
        assert!((xhy - yhx).abs() < 1e-15);
        assert!(x.iter().zip(&hx).map(|(a, b)| a * b).sum::<f64>() > 0.0);
    }
}
