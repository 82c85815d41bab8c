use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Target;
use crate::error::{FwiError, Result};
use crate::exec::Exec;

/// Current state of one pCN chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub theta: Vec<f64>,
    /// Cached `Φ_eff(theta)`.
    pub loss: f64,
    pub beta_pcn: f64,
    pub accepted: u64,
    pub proposed: u64,
    pub rng: ChaCha8Rng,
}

impl ChainState {
    pub fn new<T: Target + ?Sized>(target: &T, theta: Vec<f64>, beta_pcn: f64, seed: u64) -> Result<Self> {
        if theta.len() != target.dim() {
            return Err(FwiError::Shape(format!("chain start has {} values, expected {}", theta.len(), target.dim())));
        }
        if !(beta_pcn >= 0.0 && beta_pcn <= 1.0) {
            return Err(FwiError::Config(format!("pCN step size must lie in [0, 1], got {beta_pcn}")));
        }
        let loss = target.misfit(&theta)?;
        if !loss.is_finite() {
            return Err(FwiError::Input(format!("misfit at the chain start is {loss}")));
        }
        Ok(Self { theta, loss, beta_pcn, accepted: 0, proposed: 0, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    /// Difference between the cached loss and a fresh evaluation.
    pub fn audit<T: Target + ?Sized>(&self, target: &T) -> Result<f64> {
        Ok((target.misfit(&self.theta)? - self.loss).abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StepOutcome {
    Accepted,
    Rejected,
    /// The proposal's misfit was not finite; rejected.
    NonFinite,
}

/// One preconditioned Crank–Nicolson step. The prior is reversible for the
/// proposal, so acceptance involves only the misfit.
pub fn pcn_step<T: Target + ?Sized>(state: &mut ChainState, target: &T) -> Result<StepOutcome> {
    let b = state.beta_pcn;
    let a = (1.0 - b * b).sqrt();
    let proposal: Vec<f64> = state
        .theta
        .iter()
        .map(|&t| {
            let eta: f64 = state.rng.sample(StandardNormal);
            a * t + b * eta
        })
        .collect();
    let u: f64 = state.rng.random();
    state.proposed += 1;
    let loss = match target.misfit(&proposal) {
        Ok(l) if l.is_finite() => l,
        Ok(_) | Err(FwiError::Domain(_)) | Err(FwiError::Bounds(_)) => return Ok(StepOutcome::NonFinite),
        Err(e) => return Err(e),
    };
    if u.ln() < state.loss - loss {
        state.theta = proposal;
        state.loss = loss;
        state.accepted += 1;
        Ok(StepOutcome::Accepted)
    } else {
        Ok(StepOutcome::Rejected)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub n_steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub beta_pcn: f64,
    /// Adapt `beta_pcn` towards `target_accept` during burn-in.
    pub adapt: bool,
    pub target_accept: f64,
    pub seed: u64,
    pub n_batches: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_steps: 1000,
            burn_in: 200,
            thin: 10,
            beta_pcn: 0.2,
            adapt: true,
            target_accept: 0.25,
            seed: 0,
            n_batches: 20,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps > 0 && self.burn_in >= self.n_steps {
            return Err(FwiError::Config(format!(
                "burn_in ({}) must be smaller than n_steps ({})",
                self.burn_in, self.n_steps
            )));
        }
        if self.thin == 0 || self.n_batches == 0 {
            return Err(FwiError::Config("thin and n_batches must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.beta_pcn) || !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(FwiError::Config("beta_pcn must be in [0,1] and target_accept in (0,1)".into()));
        }
        Ok(())
    }
}

/// Moments and diagnostics of one chain. Statistics cover the steps after
/// burn-in, applied to the observed quantity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainSummary {
    pub seed: u64,
    pub n_steps: usize,
    pub burn_in: usize,
    pub accepted: u64,
    pub total: u64,
    pub acceptance_rate: f64,
    pub burn_in_acceptance_rate: f64,
    pub non_finite_proposals: u64,
    pub final_beta_pcn: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Batch-means standard error of `mean`.
    pub std_error: Vec<f64>,
    /// Thinned post-burn-in samples of the observed quantity.
    pub samples: Vec<Vec<f64>>,
    /// Set when the chain took no steps and reports its initial state only.
    pub initial_state_only: bool,
    pub final_theta: Vec<f64>,
    pub final_loss: f64,
}

/// Runs one chain from `init` and summarizes `observe(θ)` over the
/// post-burn-in steps. Deterministic given `config.seed`.
pub fn run_chain<T, F>(target: &T, init: Vec<f64>, config: &ChainConfig, observe: F) -> Result<ChainSummary>
where
    T: Target + ?Sized,
    F: Fn(&[f64]) -> Vec<f64>,
{
    config.validate()?;
    let mut state = ChainState::new(target, init, config.beta_pcn, config.seed)?;
    let first = observe(&state.theta);
    let d = first.len();
    if config.n_steps == 0 {
        return Ok(ChainSummary {
            seed: config.seed,
            n_steps: 0,
            burn_in: 0,
            accepted: 0,
            total: 0,
            acceptance_rate: f64::NAN,
            burn_in_acceptance_rate: f64::NAN,
            non_finite_proposals: 0,
            final_beta_pcn: state.beta_pcn,
            mean: first.clone(),
            variance: vec![0.0; d],
            std_error: vec![0.0; d],
            samples: vec![first],
            initial_state_only: true,
            final_theta: state.theta.clone(),
            final_loss: state.loss,
        });
    }

    let mut non_finite = 0;
    let window = 50;
    let mut window_acc = 0;
    for step in 0..config.burn_in {
        match pcn_step(&mut state, target)? {
            StepOutcome::Accepted => window_acc += 1,
            StepOutcome::NonFinite => non_finite += 1,
            StepOutcome::Rejected => {}
        }
        if config.adapt && (step + 1) % window == 0 {
            let rate = window_acc as f64 / window as f64;
            state.beta_pcn = (state.beta_pcn * (rate - config.target_accept).exp()).clamp(1e-4, 1.0);
            window_acc = 0;
        }
    }
    let burn_acc = state.accepted;
    let burn_total = state.proposed;
    state.accepted = 0;
    state.proposed = 0;

    let n_post = config.n_steps - config.burn_in;
    let batch = (n_post / config.n_batches).max(1);
    let mut mean = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    let mut batch_sum = vec![0.0; d];
    let mut batch_means: Vec<Vec<f64>> = Vec::new();
    let mut samples = Vec::new();
    for k in 0..n_post {
        if pcn_step(&mut state, target)? == StepOutcome::NonFinite {
            non_finite += 1;
        }
        let obs = observe(&state.theta);
        let cnt = (k + 1) as f64;
        for i in 0..d {
            let delta = obs[i] - mean[i];
            mean[i] += delta / cnt;
            m2[i] += delta * (obs[i] - mean[i]);
            batch_sum[i] += obs[i];
        }
        if (k + 1) % batch == 0 {
            batch_means.push(batch_sum.iter().map(|s| s / batch as f64).collect());
            batch_sum.iter_mut().for_each(|s| *s = 0.0);
        }
        if (k + 1) % config.thin == 0 {
            samples.push(obs);
        }
    }
    let variance: Vec<f64> = m2.iter().map(|v| if n_post > 1 { v / (n_post - 1) as f64 } else { 0.0 }).collect();
    let nb = batch_means.len();
    let std_error = (0..d)
        .map(|i| {
            if nb < 2 {
                return f64::NAN;
            }
            let bm = batch_means.iter().map(|b| b[i]).sum::<f64>() / nb as f64;
            let v = batch_means.iter().map(|b| (b[i] - bm).powi(2)).sum::<f64>() / (nb - 1) as f64;
            (v / nb as f64).sqrt()
        })
        .collect();
    Ok(ChainSummary {
        seed: config.seed,
        n_steps: config.n_steps,
        burn_in: config.burn_in,
        accepted: state.accepted,
        total: state.proposed,
        acceptance_rate: state.accepted as f64 / state.proposed as f64,
        burn_in_acceptance_rate: if burn_total > 0 { burn_acc as f64 / burn_total as f64 } else { f64::NAN },
        non_finite_proposals: non_finite,
        final_beta_pcn: state.beta_pcn,
        mean,
        variance,
        std_error,
        samples,
        initial_state_only: false,
        final_theta: state.theta,
        final_loss: state.loss,
    })
}

/// Independent chains, one per configuration, run concurrently under `exec`.
pub fn run_chains<T, F>(
    target: &T,
    init: &[f64],
    configs: &[ChainConfig],
    observe: F,
    exec: Exec,
) -> Result<Vec<ChainSummary>>
where
    T: Target + ?Sized,
    F: Fn(&[f64]) -> Vec<f64> + Sync + Send,
{
    exec.map_slice(configs, |c| run_chain(target, init.to_vec(), c, &observe)).into_iter().collect()
}
