//! File-level commands. Each writes its artifacts under the output
//! directory and finishes with `manifest_<command>.json`.

use std::path::{Path, PathBuf};

use bayes_fwi::grid_wave::Seismogram;
use bayes_fwi::inference::{ChainSummary, GaussianApprox, MapResult};
use bayes_fwi::io::{self, field_csv, read_json, read_seismogram, seismogram_csv, write_atomic, write_field, write_json};
use bayes_fwi::posterior_metrics::{HellingerEstimate, StabilityReport};
use bayes_fwi::potentials::PotentialSpec;
use bayes_fwi::priors::{PriorSpec, SaltValue};
use bayes_fwi::{FwiError, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Dataset, ExperimentConfig, Scene, TrueModel};
use crate::pipeline::{potential_name, Experiment, Inversion};
use crate::scenes::SALT_VELOCITY;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub versions: Vec<(String, String)>,
    pub seeds: Vec<(String, u64)>,
    pub files: Vec<FileEntry>,
}

/// Collects written files and emits the manifest.
struct Outputs {
    root: PathBuf,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf(), files: Vec::new() }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn json<T: Serialize + ?Sized>(&mut self, rel: &str, v: &T) -> Result<()> {
        let p = self.path(rel);
        write_json(&p, v)?;
        self.files.push(p);
        Ok(())
    }

    fn text(&mut self, rel: &str, s: &str) -> Result<()> {
        let p = self.path(rel);
        write_atomic(&p, s.as_bytes())?;
        self.files.push(p);
        Ok(())
    }

    fn pair(&mut self, (a, b): (PathBuf, PathBuf)) {
        self.files.push(a);
        self.files.push(b);
    }

    fn seismogram(&mut self, rel: &str, s: &Seismogram) -> Result<()> {
        let r = io::write_seismogram(&self.path(rel), s)?;
        self.pair(r);
        self.text(&format!("{rel}.csv"), &seismogram_csv(s))
    }

    fn field(&mut self, rel: &str, cfg: &ExperimentConfig, v: &[f64], quantity: &str, units: &str) -> Result<()> {
        let r = write_field(&self.path(rel), &cfg.grid, v, quantity, units)?;
        self.pair(r);
        Ok(())
    }

    fn finish(mut self, command: &str, cfg: &ExperimentConfig, seeds: Vec<(String, u64)>) -> Result<Manifest> {
        self.files.sort();
        self.files.dedup();
        let files = self
            .files
            .iter()
            .map(|p| {
                let bytes = std::fs::read(p)?;
                Ok(FileEntry {
                    path: p.strip_prefix(&self.root).unwrap_or(p).to_string_lossy().replace('\\', "/"),
                    sha256: hex::encode(Sha256::digest(&bytes)),
                    bytes: bytes.len() as u64,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = Manifest {
            command: command.into(),
            config_sha256: cfg.hash(),
            versions: vec![
                ("bayes-fwi".into(), bayes_fwi::VERSION.into()),
                ("bayes-fwi-cli".into(), env!("CARGO_PKG_VERSION").into()),
            ],
            seeds,
            files,
        };
        write_json(&self.root.join(format!("manifest_{command}.json")), &manifest)?;
        Ok(manifest)
    }
}

fn data_stem(out: &Path, d: Dataset) -> PathBuf {
    out.join("data").join(d.name())
}

fn load_data(out: &Path, d: Dataset) -> Result<Seismogram> {
    let stem = data_stem(out, d);
    read_seismogram(&stem).map_err(|e| FwiError::Io(format!("dataset {} missing, run `forward` first ({e})", d.name())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionRecord {
    pub n_sources: usize,
    pub n_receivers: usize,
    pub source_positions: Vec<(f64, f64)>,
    pub receiver_positions: Vec<(f64, f64)>,
    pub dt: f64,
    pub nt: usize,
    pub noise_seed: u64,
    pub noise_amplitude: f64,
    pub snr_db: Option<f64>,
}

/// Simulates clean data, adds noise and writes both with the true model.
pub fn forward(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    let exp = Experiment::new(cfg)?;
    let mut o = Outputs::new(out);
    let v = exp.true_velocity()?;
    o.field("data/true_velocity", cfg, &v, "velocity", "km/s")?;
    let clean = exp.simulate()?;
    let noisy = exp.add_noise(&clean, cfg.seed)?;
    o.seismogram("data/clean", &clean)?;
    o.seismogram("data/noisy", &noisy.noisy)?;
    let geom = exp.fwd.geometry();
    let record = AcquisitionRecord {
        n_sources: geom.n_sources(),
        n_receivers: geom.n_receivers(),
        source_positions: geom.sources.iter().map(|s| s.position).collect(),
        receiver_positions: geom.receivers.clone(),
        dt: geom.dt,
        nt: geom.nt,
        noise_seed: noisy.seed,
        noise_amplitude: noisy.amplitude,
        snr_db: noisy.snr_db,
    };
    o.json("data/acquisition.json", &record)?;
    o.json("config.json", cfg)?;
    o.finish("forward", cfg, vec![("noise".into(), cfg.seed)])
}

/// Prior settings echoed next to every inversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorEcho {
    pub kind: String,
    /// Matérn parameters of the Gaussian field (the level-set function for
    /// level-set priors).
    pub matern_sigma: f64,
    pub matern_nu: f64,
    pub matern_ell: f64,
    /// `(mean, sd)` of a hierarchical salt velocity.
    pub salt_hyper_prior: Option<(f64, f64)>,
    pub prior_mean: Option<crate::config::PriorMean>,
}

pub fn prior_echo(cfg: &ExperimentConfig) -> PriorEcho {
    let (kind, m, hyper) = match &cfg.prior {
        PriorSpec::Gaussian { matern } => ("gaussian", matern, None),
        PriorSpec::LevelSet { levelset } => (
            "level_set",
            &levelset.underlying,
            match levelset.u_plus {
                SaltValue::Hyper(h) => Some((h.mean, h.sd)),
                SaltValue::Fixed(_) => None,
            },
        ),
    };
    PriorEcho {
        kind: kind.into(),
        matern_sigma: m.sigma,
        matern_nu: m.nu,
        matern_ell: m.ell,
        salt_hyper_prior: hyper,
        prior_mean: cfg.prior_mean,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionSummary {
    pub potential: PotentialSpec,
    pub dataset: String,
    pub map: MapResult,
    pub rank: usize,
}

fn write_inversion(o: &mut Outputs, cfg: &ExperimentConfig, dir: &str, inv: &Inversion, dataset: Dataset) -> Result<()> {
    o.field(&format!("{dir}/latent_mean"), cfg, &inv.latent_mean, "latent", "1")?;
    o.field(&format!("{dir}/latent_std"), cfg, &inv.latent_std, "latent standard deviation", "1")?;
    o.field(&format!("{dir}/velocity_mean"), cfg, &inv.velocity_mean, "velocity", "km/s")?;
    let mut cols: Vec<(&str, &[f64])> = vec![
        ("latent_mean", &inv.latent_mean),
        ("latent_std", &inv.latent_std),
        ("velocity_mean", &inv.velocity_mean),
    ];
    if let Some(s) = &inv.velocity_std {
        o.field(&format!("{dir}/velocity_std"), cfg, s, "velocity standard deviation", "km/s")?;
        cols.push(("velocity_std", s));
    }
    o.text(&format!("{dir}/fields.csv"), &field_csv(&cfg.grid, &cols)?)?;
    let mut eig = String::from("index,eigenvalue\n");
    for (i, l) in inv.approx.eigenvalues.iter().enumerate() {
        eig.push_str(&format!("{i},{l:.12e}\n"));
    }
    o.text(&format!("{dir}/eigenvalues.csv"), &eig)?;
    o.json(&format!("{dir}/approx.json"), &inv.approx)?;
    let summary = InversionSummary {
        potential: inv.potential.clone(),
        dataset: dataset.name().into(),
        map: inv.map.clone(),
        rank: inv.approx.rank(),
    };
    o.json(&format!("{dir}/summary.json"), &summary)?;
    o.json(&format!("{dir}/prior.json"), &prior_echo(cfg))
}

/// MAP and Laplace approximation for every potential on both datasets.
pub fn invert(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    let exp = Experiment::new(cfg)?;
    let clean = load_data(out, Dataset::Clean)?;
    let noisy = load_data(out, Dataset::Noisy)?;
    let specs = exp.potentials(&clean)?;
    let mut o = Outputs::new(out);
    for (d, y) in [(Dataset::Clean, &clean), (Dataset::Noisy, &noisy)] {
        let runs = exp.invert_all(&specs, y, cfg.seed)?;
        for inv in &runs {
            let dir = format!("invert/{}/{}", d.name(), potential_name(&inv.potential));
            write_inversion(&mut o, cfg, &dir, inv, d)?;
        }
    }
    o.finish("invert", cfg, vec![("laplace".into(), cfg.inference.laplace.seed), ("std_samples".into(), cfg.seed)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaltSummary {
    pub n_samples: usize,
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
    pub hyper_prior: Option<(f64, f64)>,
    /// Salt velocity of the built-in scene, when that scene is used.
    pub true_value: Option<f64>,
    pub interval_contains_true: Option<bool>,
    pub interval_contains_mean: bool,
}

/// `q`-quantile by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn salt_summary(values: &[f64], cfg: &ExperimentConfig) -> Option<SaltSummary> {
    if values.is_empty() {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    let (q025, q975) = (quantile(&s, 0.025), quantile(&s, 0.975));
    let true_value = matches!(cfg.true_model, TrueModel::Builtin { scene: Scene::Salt }).then_some(SALT_VELOCITY);
    let hyper_prior = match &cfg.prior {
        PriorSpec::LevelSet { levelset } => match levelset.u_plus {
            SaltValue::Hyper(h) => Some((h.mean, h.sd)),
            SaltValue::Fixed(_) => None,
        },
        _ => None,
    };
    Some(SaltSummary {
        n_samples: s.len(),
        mean,
        q025,
        q975,
        hyper_prior,
        true_value,
        interval_contains_true: true_value.map(|t| q025 <= t && t <= q975),
        interval_contains_mean: q025 <= mean && mean <= q975,
    })
}

fn histogram_csv(values: &[f64], bins: usize) -> String {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in values {
        counts[(((v - lo) / w) as usize).min(bins - 1)] += 1;
    }
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for (i, c) in counts.iter().enumerate() {
        out.push_str(&format!("{:.6},{:.6},{c}\n", lo + i as f64 * w, lo + (i + 1) as f64 * w));
    }
    out
}

/// pCN chains for every potential on the configured dataset.
pub fn sample(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    let exp = Experiment::new(cfg)?;
    let clean = load_data(out, Dataset::Clean)?;
    let y = load_data(out, cfg.inference.chain_data)?;
    let specs = exp.potentials(&clean)?;
    let mut o = Outputs::new(out);
    let n = cfg.grid.len();
    let hyper = exp.model.hyper_index().is_some();
    for spec in &specs {
        let dir = format!("sample/{}", potential_name(spec));
        let chains = exp.chains(spec, &y)?;
        let mut salt = Vec::new();
        for (i, c) in chains.iter().enumerate() {
            let flat: Vec<f64> = c.samples.iter().flat_map(|s| s[..n].iter().copied()).collect();
            let meta = ChainSampleMeta { grid: cfg.grid.clone(), n_samples: c.samples.len(), quantity: "velocity".into() };
            let r = io::write_raw(&o.path(&format!("{dir}/chain_{i}_samples")), &flat, &meta)?;
            o.pair(r);
            o.json(&format!("{dir}/chain_{i}.json"), &ChainRecord::from(c, n))?;
            if hyper {
                salt.extend(c.samples.iter().map(|s| s[n]));
            }
        }
        o.json(&format!("{dir}/prior.json"), &prior_echo(cfg))?;
        if let Some(s) = salt_summary(&salt, cfg) {
            o.json(&format!("{dir}/salt_summary.json"), &s)?;
            o.text(&format!("{dir}/salt_histogram.csv"), &histogram_csv(&salt, 30))?;
        }
    }
    let seeds = (0..cfg.inference.n_chains).map(|i| (format!("chain_{i}"), cfg.seed.wrapping_add(i as u64))).collect();
    o.finish("sample", cfg, seeds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSampleMeta {
    pub grid: bayes_fwi::grid_wave::Grid2D,
    pub n_samples: usize,
    pub quantity: String,
}

/// Chain summary without the bulky sample list and with the velocity
/// moments split from the salt coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub seed: u64,
    pub n_steps: usize,
    pub burn_in: usize,
    #[serde(deserialize_with = "null_as_nan")]
    pub acceptance_rate: f64,
    #[serde(deserialize_with = "null_as_nan")]
    pub burn_in_acceptance_rate: f64,
    pub non_finite_proposals: u64,
    pub final_beta_pcn: f64,
    pub initial_state_only: bool,
    #[serde(deserialize_with = "null_as_nan")]
    pub final_loss: f64,
    #[serde(deserialize_with = "nulls_as_nan")]
    pub velocity_mean: Vec<f64>,
    #[serde(deserialize_with = "nulls_as_nan")]
    pub velocity_variance: Vec<f64>,
    #[serde(deserialize_with = "nulls_as_nan")]
    pub velocity_std_error: Vec<f64>,
    pub salt_mean: Option<f64>,
    pub salt_std_error: Option<f64>,
}

// serde_json writes NaN as null; undefined rates (no proposals) round-trip as NaN.
fn null_as_nan<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

fn nulls_as_nan<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    Ok(Vec::<Option<f64>>::deserialize(d)?.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
}

impl ChainRecord {
    fn from(c: &ChainSummary, n: usize) -> Self {
        Self {
            seed: c.seed,
            n_steps: c.n_steps,
            burn_in: c.burn_in,
            acceptance_rate: c.acceptance_rate,
            burn_in_acceptance_rate: c.burn_in_acceptance_rate,
            non_finite_proposals: c.non_finite_proposals,
            final_beta_pcn: c.final_beta_pcn,
            initial_state_only: c.initial_state_only,
            final_loss: c.final_loss,
            velocity_mean: c.mean[..n].to_vec(),
            velocity_variance: c.variance[..n].to_vec(),
            velocity_std_error: c.std_error[..n].to_vec(),
            salt_mean: c.mean.get(n).copied(),
            salt_std_error: c.std_error.get(n).copied(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareOutput {
    pub report: StabilityReport,
    pub hellinger: Vec<(String, HellingerEstimate)>,
}

fn load_inversion(out: &Path, d: Dataset, name: &str, dim: usize) -> Result<Option<Inversion>> {
    let dir = out.join("invert").join(d.name()).join(name);
    if !dir.join("approx.json").exists() {
        return Ok(None);
    }
    let approx: GaussianApprox = read_json(&dir.join("approx.json"))?;
    let summary: InversionSummary = read_json(&dir.join("summary.json"))?;
    let field = |stem: &str| -> Result<Vec<f64>> { Ok(io::read_field(&dir.join(stem))?.0) };
    let velocity_std = if io::with_ext(&dir.join("velocity_std"), "bin").exists() { Some(field("velocity_std")?) } else { None };
    if approx.dim() != dim {
        return Err(FwiError::Io(format!("{}: approximation does not match the configured prior", dir.display())));
    }
    Ok(Some(Inversion {
        potential: summary.potential,
        map: summary.map,
        approx,
        latent_mean: field("latent_mean")?,
        latent_std: field("latent_std")?,
        velocity_mean: field("velocity_mean")?,
        velocity_std,
    }))
}

/// Stability report from the clean and noisy inversions on disk.
pub fn compare(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    let exp = Experiment::new(cfg)?;
    let clean = load_data(out, Dataset::Clean)?;
    let noisy = load_data(out, Dataset::Noisy)?;
    let acq: AcquisitionRecord = read_json(&out.join("data/acquisition.json"))?;
    let names: Vec<String> = cfg.potentials.iter().map(potential_name).collect();
    let mut runs = [Vec::new(), Vec::new()];
    for (k, d) in [Dataset::Clean, Dataset::Noisy].into_iter().enumerate() {
        for n in &names {
            runs[k].push(load_inversion(out, d, n, exp.model.dim())?);
        }
    }
    let report = exp.compare(&runs[0], &runs[1], &clean, &noisy, acq.snr_db, acq.noise_seed)?;
    let mut hellinger = Vec::new();
    if cfg.compare.hellinger_samples > 0 {
        for spec in exp.potentials(&clean)? {
            hellinger.push((potential_name(&spec), exp.hellinger(&spec, &clean, &noisy, cfg.compare.hellinger_samples)?));
        }
    }
    let mut o = Outputs::new(out);
    o.json("compare/report.json", &CompareOutput { report: report.clone(), hellinger })?;
    o.text("compare/report.csv", &report.to_csv())?;
    let mut cols: Vec<(String, &[f64])> = Vec::new();
    for (k, d) in [Dataset::Clean, Dataset::Noisy].into_iter().enumerate() {
        for (n, r) in names.iter().zip(&runs[k]) {
            if let Some(r) = r {
                cols.push((format!("{}_{n}_velocity_mean", d.name()), &r.velocity_mean));
                if let Some(s) = &r.velocity_std {
                    cols.push((format!("{}_{n}_velocity_std", d.name()), s));
                }
                cols.push((format!("{}_{n}_latent_std", d.name()), &r.latent_std));
            }
        }
    }
    let cols_ref: Vec<(&str, &[f64])> = cols.iter().map(|(a, b)| (a.as_str(), *b)).collect();
    o.text("compare/fields.csv", &field_csv(&cfg.grid, &cols_ref)?)?;
    o.finish("compare", cfg, vec![("noise".into(), acq.noise_seed), ("hellinger".into(), cfg.seed)])
}
