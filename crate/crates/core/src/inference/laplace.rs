use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{dot, Target};
use crate::error::{FwiError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaplaceOptions {
    pub max_rank: usize,
    /// Drop eigenvalues below `rel_tol·λ_max`.
    pub rel_tol: f64,
    pub oversampling: usize,
    pub power_iters: usize,
    pub seed: u64,
}

impl Default for LaplaceOptions {
    fn default() -> Self {
        Self { max_rank: 50, rel_tol: 1e-2, oversampling: 10, power_iters: 1, seed: 0 }
    }
}

/// `N(θ*, (I + VΛVᵀ)⁻¹)` in whitened coordinates, where `VΛVᵀ` is the
/// truncated Gauss–Newton Hessian of the misfit (the prior-preconditioned
/// Hessian in the original coordinates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianApprox {
    pub mean: Vec<f64>,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal columns, one per eigenvalue.
    pub eigenvectors: Vec<Vec<f64>>,
}

impl GaussianApprox {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `λ/(1+λ)`: the posterior covariance is `I − V diag(d) Vᵀ`.
    pub fn shrinkage(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|l| l / (1.0 + l)).collect()
    }

    /// Posterior covariance applied to `x`.
    pub fn apply_cov(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        for (v, d) in self.eigenvectors.iter().zip(self.shrinkage()) {
            let c = d * dot(v, x);
            out.iter_mut().zip(v).for_each(|(o, vi)| *o -= c * vi);
        }
        out
    }

    /// Posterior precision `I + VΛVᵀ` applied to `x`.
    pub fn apply_precision(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        for (v, l) in self.eigenvectors.iter().zip(&self.eigenvalues) {
            let c = l * dot(v, x);
            out.iter_mut().zip(v).for_each(|(o, vi)| *o += c * vi);
        }
        out
    }

    /// Draw `θ* + (I − VDVᵀ)^{1/2} ξ`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let xi: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let mut out = xi.clone();
        for (v, l) in self.eigenvectors.iter().zip(&self.eigenvalues) {
            let c = ((1.0 / (1.0 + l)).sqrt() - 1.0) * dot(v, &xi);
            out.iter_mut().zip(v).for_each(|(o, vi)| *o += c * vi);
        }
        out.iter_mut().zip(&self.mean).for_each(|(o, m)| *o += m);
        out
    }

    /// Pointwise variance of a linear image `x ↦ Lx` given the prior
    /// pointwise variance of `L` (`diag LLᵀ`) and `L` applied to the
    /// eigenvectors: `diag LLᵀ − Σ d_j (Lv_j)²`.
    pub fn image_variance(&self, prior_var: &[f64], lv: &[Vec<f64>]) -> Vec<f64> {
        let d = self.shrinkage();
        let mut out = prior_var.to_vec();
        for (img, dj) in lv.iter().zip(d) {
            out.iter_mut().zip(img).for_each(|(o, x)| *o -= dj * x * x);
        }
        out.iter_mut().for_each(|o| *o = o.max(0.0));
        out
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(&l) = self.eigenvalues.iter().find(|&&l| l <= -1.0) {
            return Err(FwiError::Indefinite(l));
        }
        Ok(())
    }
}

fn orthonormalize(cols: &[Vec<f64>]) -> DMatrix<f64> {
    let n = cols[0].len();
    let y = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    y.qr().q()
}

fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

/// Low-rank Laplace approximation at `theta_map` by a randomized range
/// finder on the Gauss–Newton Hessian.
pub fn laplace<T: Target + ?Sized>(target: &T, theta_map: &[f64], opts: &LaplaceOptions) -> Result<GaussianApprox> {
    let n = target.dim();
    if theta_map.len() != n {
        return Err(FwiError::Shape(format!("MAP point has {} values, expected {n}", theta_map.len())));
    }
    let l = (opts.max_rank + opts.oversampling).min(n).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let omega: Vec<Vec<f64>> = (0..l).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let mut y = target.gauss_newton(theta_map, &omega)?;
    for _ in 0..opts.power_iters {
        let q = columns(&orthonormalize(&y));
        y = target.gauss_newton(theta_map, &q)?;
    }
    let q = orthonormalize(&y);
    let qc = columns(&q);
    let hq = target.gauss_newton(theta_map, &qc)?;
    let k = qc.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            t[(i, j)] = dot(&qc[i], &hq[j]);
        }
    }
    let t = (&t + t.transpose()) * 0.5;
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    if let Some(&lmin) = order.last().map(|&i| &eig.eigenvalues[i]) {
        if lmin <= -1.0 {
            return Err(FwiError::Indefinite(lmin));
        }
    }
    let lmax = order.first().map_or(0.0, |&i| eig.eigenvalues[i]);
    let floor = (opts.rel_tol * lmax).max(1e-12 * lmax.abs()).max(f64::MIN_POSITIVE);
    let mut values = Vec::new();
    let mut vectors = Vec::new();
    for &i in order.iter().take(opts.max_rank) {
        let lam = eig.eigenvalues[i];
        if lam < floor || lam <= 0.0 {
            break;
        }
        let v = &q * eig.eigenvectors.column(i);
        values.push(lam);
        vectors.push(v.iter().copied().collect());
    }
    let approx = GaussianApprox { mean: theta_map.to_vec(), eigenvalues: values, eigenvectors: vectors };
    approx.validate()?;
    Ok(approx)
}
