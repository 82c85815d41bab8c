use super::Target;
use crate::error::{FwiError, Result};
use crate::priors::MaternPrior;

/// Linear-Gaussian surrogate: noisy point values of a Matérn field,
/// `Φ_eff = β/(2γ²) Σ_k (u(x_k) − y_k)²`. Its posterior is Gaussian, with a
/// low-rank data term, which makes it the reference problem for the Laplace
/// and pCN code paths.
#[derive(Debug)]
pub struct PointObservations<'a> {
    pub prior: &'a MaternPrior,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub noise_sd: f64,
    pub beta: f64,
}

impl<'a> PointObservations<'a> {
    pub fn new(prior: &'a MaternPrior, indices: Vec<usize>, values: Vec<f64>, noise_sd: f64, beta: f64) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(FwiError::Shape(format!("{} locations but {} values", indices.len(), values.len())));
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= prior.grid().len()) {
            return Err(FwiError::Geometry(format!("observation index {i} outside the grid")));
        }
        if !(noise_sd > 0.0 && beta >= 0.0) {
            return Err(FwiError::Config(format!("need noise_sd > 0 and beta >= 0, got {noise_sd}, {beta}")));
        }
        Ok(Self { prior, indices, values, noise_sd, beta })
    }

    fn weight(&self) -> f64 {
        self.beta / (self.noise_sd * self.noise_sd)
    }

    fn residual(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let u = self.prior.field(theta)?;
        Ok(self.indices.iter().zip(&self.values).map(|(&i, y)| u[i] - y).collect())
    }

    fn scatter(&self, r: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.prior.grid().len()];
        for (&i, v) in self.indices.iter().zip(r) {
            g[i] += v;
        }
        g
    }
}

impl Target for PointObservations<'_> {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn misfit(&self, theta: &[f64]) -> Result<f64> {
        let r = self.residual(theta)?;
        Ok(0.5 * self.weight() * r.iter().map(|x| x * x).sum::<f64>())
    }

    fn misfit_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let r = self.residual(theta)?;
        let w = self.weight();
        let v = 0.5 * w * r.iter().map(|x| x * x).sum::<f64>();
        let wr: Vec<f64> = r.iter().map(|x| w * x).collect();
        Ok((v, self.prior.field_vjp(&self.scatter(&wr))))
    }

    fn gauss_newton(&self, _theta: &[f64], dirs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let w = self.weight();
        Ok(dirs
            .iter()
            .map(|d| {
                let du = self.prior.field_jvp(d);
                let pd: Vec<f64> = self.indices.iter().map(|&i| w * du[i]).collect();
                self.prior.field_vjp(&self.scatter(&pd))
            })
            .collect())
    }
}
