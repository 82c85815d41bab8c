//! In-memory experiment steps shared by the commands and the acceptance
//! suite: data simulation, noise, calibrated inversions, chains and
//! stability comparisons.

use bayes_fwi::grid_wave::{Grid2D, Seismogram, VelocityBounds};
use bayes_fwi::inference::{laplace, map_estimate, run_chains, ChainConfig, ChainSummary, FwiTarget, GaussianApprox, MapResult};
use bayes_fwi::posterior_metrics::{
    hellinger_is, latent_gaussian, make_noise, noise_for_snr, stability_report, Gaussian, HellingerEstimate,
    StabilityReport,
};
use bayes_fwi::potentials::{calibrate, data_misfit, ForwardMap, Potential, PotentialSpec};
use bayes_fwi::priors::{LevelSetMode, MeanSpec, PriorModel, PriorSpec};
use bayes_fwi::signal::NormalizerSpec;
use bayes_fwi::{io, Exec, FwiError, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{ChainInit, ExperimentConfig, PriorMean, TrueModel};
use crate::scenes;

/// Grid, forward map and prior built from a config.
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub fwd: ForwardMap,
    pub model: PriorModel,
}

/// Prior mean in velocity units, when the config overrides the prior's own.
pub fn prior_mean_velocity(cfg: &ExperimentConfig) -> Result<Option<Vec<f64>>> {
    Ok(match cfg.prior_mean {
        None => None,
        Some(PriorMean::Layered { v_top, v_bottom, water_velocity }) => {
            Some(scenes::layered(&cfg.grid, v_top, v_bottom, water_velocity))
        }
        Some(PriorMean::SmoothedTruth { length }) => Some(scenes::smooth(&cfg.grid, &true_velocity(cfg)?, length)),
    })
}

/// The configured true velocity field.
pub fn true_velocity(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    match &cfg.true_model {
        TrueModel::Builtin { scene } => scenes::build(*scene, &cfg.grid, &cfg.bounds),
        TrueModel::File { path } => {
            let (v, meta) = io::read_field(path)?;
            if meta.grid != cfg.grid {
                return Err(FwiError::Config(format!("true_model.path: grid of {} differs", path.display())));
            }
            scenes::check_bounds(&v, &cfg.bounds)?;
            Ok(v)
        }
    }
}

/// Prior spec with the configured mean substituted.
pub fn effective_prior(cfg: &ExperimentConfig) -> Result<PriorSpec> {
    let mut spec = cfg.prior.clone();
    let Some(v) = prior_mean_velocity(cfg)? else { return Ok(spec) };
    match &mut spec {
        PriorSpec::Gaussian { matern } => {
            matern.mean = MeanSpec::Field(v.iter().map(|&c| cfg.bounds.latent_from_velocity(c)).collect());
        }
        PriorSpec::LevelSet { levelset } => match &mut levelset.mode {
            LevelSetMode::Mixed { background, .. } => background.mean = MeanSpec::Field(v),
            LevelSetMode::Plain { .. } => {
                return Err(FwiError::Config("prior_mean needs a Gaussian or mixed level-set prior".into()))
            }
        },
    }
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoisyData {
    pub noisy: Seismogram,
    pub snr_db: Option<f64>,
    pub amplitude: f64,
    pub seed: u64,
}

/// MAP point, Laplace approximation and the fields derived from them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Inversion {
    pub potential: PotentialSpec,
    pub map: MapResult,
    pub approx: GaussianApprox,
    pub latent_mean: Vec<f64>,
    pub latent_std: Vec<f64>,
    pub velocity_mean: Vec<f64>,
    /// Monte Carlo over the Laplace approximation; absent with fewer than two draws.
    pub velocity_std: Option<Vec<f64>>,
}

impl Experiment {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let geom = cfg.geometry.build(&cfg.grid);
        let fwd = ForwardMap::new(cfg.grid.clone(), geom, cfg.solver.clone(), cfg.bounds)?;
        let model = PriorModel::new(&effective_prior(cfg)?, &cfg.grid, cfg.bounds)?;
        Ok(Self { cfg: cfg.clone(), fwd, model })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.cfg.grid
    }

    pub fn bounds(&self) -> VelocityBounds {
        self.cfg.bounds
    }

    pub fn exec(&self) -> Exec {
        self.cfg.solver.exec
    }

    pub fn true_velocity(&self) -> Result<Vec<f64>> {
        true_velocity(&self.cfg)
    }

    /// Clean, zero-mean synthetic data for the true model.
    pub fn simulate(&self) -> Result<Seismogram> {
        let v = self.true_velocity()?;
        let u: Vec<f64> = v.iter().map(|&c| self.bounds().latent_from_velocity(c)).collect();
        self.fwd.predict(&u)
    }

    /// Noisy copy of `clean` from the configured noise model; without noise
    /// settings the copy is exact.
    pub fn add_noise(&self, clean: &Seismogram, seed: u64) -> Result<NoisyData> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = self.cfg.noise;
        if let Some(target) = noise.snr_db {
            let c = noise_for_snr(clean, target, &mut rng)?;
            return Ok(NoisyData { noisy: c.noisy, snr_db: Some(c.snr_db), amplitude: c.amplitude, seed });
        }
        let a = noise.amplitude.unwrap_or(0.0);
        if a == 0.0 {
            return Ok(NoisyData { noisy: clean.clone(), snr_db: None, amplitude: 0.0, seed });
        }
        let (noisy, _) = make_noise(clean, &mut rng, a)?;
        let noisy = bayes_fwi::grid_wave::remove_zero_frequency(&noisy);
        let snr = bayes_fwi::posterior_metrics::snr_db(clean, &noisy.sub(clean)?)?;
        Ok(NoisyData { noisy, snr_db: Some(snr), amplitude: a, seed })
    }

    /// Potentials with data-dependent pieces filled in: a default normalizer
    /// for W₂ and M, and the calibration constant at the prior mean, both
    /// taken from the clean data so clean and noisy runs share one potential.
    pub fn potentials(&self, clean: &Seismogram) -> Result<Vec<PotentialSpec>> {
        let u0 = self.model.latent_mean()?;
        self.cfg
            .potentials
            .iter()
            .map(|p| {
                let mut p = p.clone();
                if p.kind.needs_normalizer() && p.normalizer.is_none() {
                    p.normalizer = Some(NormalizerSpec::square_for_amplitude(clean.max_abs()));
                }
                p.validate()?;
                if self.cfg.calibrate {
                    calibrate(&p, &self.fwd, &u0, clean)
                } else {
                    Ok(p)
                }
            })
            .collect()
    }

    pub fn invert(&self, spec: &PotentialSpec, y: &Seismogram, mc_seed: u64) -> Result<Inversion> {
        let pot = Potential::new(spec.clone(), y.clone())?;
        let target = FwiTarget::new(&self.fwd, &pot, &self.model)?;
        let inf = &self.cfg.inference;
        let map = map_estimate(&target, None, &inf.map)?;
        let approx = laplace(&target, &map.theta, &inf.laplace)?;
        let latent_mean = self.model.latent(&map.theta)?;
        let velocity_mean = self.model.velocity(&map.theta)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mc_seed);
        let draws: Vec<Vec<f64>> = (0..inf.std_samples).map(|_| approx.sample(&mut rng)).collect();
        let latent_std = match self.model.matern() {
            Some(p) => {
                let mask = self.grid().active_mask();
                let var: Vec<f64> = mask.iter().map(|&a| if a { p.pointwise_variance() } else { 0.0 }).collect();
                let lv: Vec<Vec<f64>> =
                    approx.eigenvectors.iter().map(|v| self.model.jvp(&map.theta, v)).collect::<Result<_>>()?;
                approx.image_variance(&var, &lv).iter().map(|v| v.sqrt()).collect()
            }
            None => pointwise_std(&self.sample_fields(&draws, |t| self.model.latent(t))?, self.grid().len()),
        };
        let velocity_std = if draws.len() >= 2 {
            Some(pointwise_std(&self.sample_fields(&draws, |t| self.model.velocity(t))?, self.grid().len()))
        } else {
            None
        };
        Ok(Inversion { potential: spec.clone(), map, approx, latent_mean, latent_std, velocity_mean, velocity_std })
    }

    fn sample_fields<F>(&self, draws: &[Vec<f64>], f: F) -> Result<Vec<Vec<f64>>>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>> + Sync + Send,
    {
        self.exec().map_slice(draws, |t| f(t)).into_iter().collect()
    }

    /// Inversions of one dataset for every potential, in config order.
    pub fn invert_all(&self, specs: &[PotentialSpec], y: &Seismogram, mc_seed: u64) -> Result<Vec<Inversion>> {
        self.exec().map_slice(specs, |s| self.invert(s, y, mc_seed)).into_iter().collect()
    }

    /// Grid push-forward of an inversion's Laplace approximation; `None`
    /// for non-Gaussian priors.
    pub fn pushforward(&self, inv: &Inversion) -> Result<Option<Gaussian>> {
        if !self.model.is_gaussian() {
            return Ok(None);
        }
        latent_gaussian(&self.model, &inv.approx).map(Some)
    }

    /// pCN chains for one potential, seeds `seed, seed + 1, …`. Each chain
    /// observes the velocity field, with the salt velocity appended for
    /// hierarchical level-set priors.
    pub fn chains(&self, spec: &PotentialSpec, y: &Seismogram) -> Result<Vec<ChainSummary>> {
        let pot = Potential::new(spec.clone(), y.clone())?;
        let target = FwiTarget::new(&self.fwd, &pot, &self.model)?;
        let inf = &self.cfg.inference;
        let init = match inf.chain_init {
            ChainInit::PriorMean => vec![0.0; self.model.dim()],
            ChainInit::Map => map_estimate(&target, None, &inf.map)?.theta,
        };
        let configs: Vec<ChainConfig> = (0..inf.n_chains)
            .map(|i| ChainConfig { seed: self.cfg.seed.wrapping_add(i as u64), ..inf.chain.clone() })
            .collect();
        let observe = |t: &[f64]| {
            let mut v = self.model.velocity(t).unwrap_or_else(|_| vec![f64::NAN; self.grid().len()]);
            if let Some(s) = self.model.salt_value(t) {
                v.push(s);
            }
            v
        };
        run_chains(&target, &init, &configs, observe, self.exec())
    }

    /// Importance-sampled Hellinger distance between the clean- and
    /// noisy-data posteriors of one potential.
    pub fn hellinger(&self, spec: &PotentialSpec, y: &Seismogram, y2: &Seismogram, n: usize) -> Result<HellingerEstimate> {
        let s = spec.scale();
        let exec = self.exec();
        hellinger_is(self.model.dim(), n, self.cfg.seed, exec, |t| {
            let pred = self.fwd.predict(&self.model.latent(t)?)?;
            let a = data_misfit(spec, &pred, y, false, Exec::Sequential)?.value;
            let b = data_misfit(spec, &pred, y2, false, Exec::Sequential)?.value;
            Ok((s * a, s * b))
        })
    }

    /// Stability report over matched clean and noisy inversions.
    pub fn compare(
        &self,
        clean: &[Option<Inversion>],
        noisy: &[Option<Inversion>],
        y: &Seismogram,
        y2: &Seismogram,
        snr_db: Option<f64>,
        noise_seed: u64,
    ) -> Result<StabilityReport> {
        let mut entries = Vec::new();
        for (i, p) in self.cfg.potentials.iter().enumerate() {
            let pair = match (clean.get(i).and_then(|c| c.as_ref()), noisy.get(i).and_then(|c| c.as_ref())) {
                (Some(a), Some(b)) => match (self.pushforward(a)?, self.pushforward(b)?) {
                    (Some(ga), Some(gb)) => Some((ga, gb)),
                    _ => None,
                },
                _ => None,
            };
            entries.push((potential_name(p), pair));
        }
        stability_report(&entries, y, y2, self.grid(), noise_seed, snr_db)
    }
}

/// Directory and report name of a potential: `l2`, `hm1`, `m` or `w2`.
pub fn potential_name(p: &PotentialSpec) -> String {
    p.kind.label().to_ascii_lowercase()
}

fn pointwise_std(fields: &[Vec<f64>], n: usize) -> Vec<f64> {
    let k = fields.len() as f64;
    if fields.len() < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| {
            let m = fields.iter().map(|f| f[i]).sum::<f64>() / k;
            (fields.iter().map(|f| (f[i] - m).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        })
        .collect()
}
