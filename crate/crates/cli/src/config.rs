use std::collections::HashSet;
use std::path::{Path, PathBuf};

use bayes_fwi::grid_wave::{AcquisitionGeometry, Grid2D, SolverConfig, VelocityBounds};
use bayes_fwi::inference::{ChainConfig, LaplaceOptions, MapOptions};
use bayes_fwi::potentials::PotentialSpec;
use bayes_fwi::priors::PriorSpec;
use bayes_fwi::signal::NormalizerSpec;
use bayes_fwi::{FwiError, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// One experiment: scene, acquisition, prior, potentials and inference
/// settings. Parsed from JSON; unknown keys are rejected everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub grid: Grid2D,
    pub bounds: VelocityBounds,
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    pub true_model: TrueModel,
    pub prior: PriorSpec,
    /// Replaces the mean of the prior (velocity units).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_mean: Option<PriorMean>,
    pub potentials: Vec<PotentialSpec>,
    /// Rescale every potential to 1 at the prior mean on the clean data.
    #[serde(default = "yes")]
    pub calibrate: bool,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub inference: InferenceConfig,
    #[serde(default)]
    pub compare: CompareConfig,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometryConfig {
    /// Sources and receivers on horizontal lines, one Ricker wavelet.
    Line {
        n_sources: usize,
        source_depth: f64,
        receiver_depth: f64,
        #[serde(default = "one")]
        receiver_stride: usize,
        peak_freq: f64,
        dt: f64,
        nt: usize,
    },
    Explicit { geometry: AcquisitionGeometry },
}

fn one() -> usize {
    1
}

impl GeometryConfig {
    pub fn build(&self, grid: &Grid2D) -> AcquisitionGeometry {
        match self {
            GeometryConfig::Line { n_sources, source_depth, receiver_depth, receiver_stride, peak_freq, dt, nt } => {
                AcquisitionGeometry::surface_line(
                    grid,
                    *n_sources,
                    *source_depth,
                    *receiver_depth,
                    *receiver_stride,
                    *peak_freq,
                    *dt,
                    *nt,
                )
            }
            GeometryConfig::Explicit { geometry } => geometry.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scene {
    /// Layered gradient with a smooth anomaly.
    Continuous,
    /// Polygonal salt body at 4.79 km/s over a gradient.
    Salt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrueModel {
    Builtin { scene: Scene },
    /// Velocity field in the raw+sidecar format, given by its stem.
    File { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorMean {
    /// `water_velocity` in the water layer and a linear gradient from
    /// `v_top` to `v_bottom` below it.
    Layered {
        v_top: f64,
        v_bottom: f64,
        #[serde(default = "water")]
        water_velocity: f64,
    },
    /// The true model blurred by a Gaussian of standard deviation `length`
    /// (km) over the sediment cells.
    SmoothedTruth { length: f64 },
}

fn water() -> f64 {
    1.5
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Target signal-to-noise ratio in dB.
    pub snr_db: Option<f64>,
    /// Fixed noise standard deviation, used when `snr_db` is absent.
    pub amplitude: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainInit {
    PriorMean,
    #[default]
    Map,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    Clean,
    #[default]
    Noisy,
}

impl Dataset {
    pub fn name(self) -> &'static str {
        match self {
            Dataset::Clean => "clean",
            Dataset::Noisy => "noisy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub map: MapOptions,
    pub laplace: LaplaceOptions,
    pub chain: ChainConfig,
    pub n_chains: usize,
    pub chain_init: ChainInit,
    /// Data the chains condition on.
    pub chain_data: Dataset,
    /// Draws from each Laplace approximation used for velocity standard
    /// deviations (and latent ones for non-Gaussian priors).
    pub std_samples: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            map: MapOptions::default(),
            laplace: LaplaceOptions::default(),
            chain: ChainConfig::default(),
            n_chains: 1,
            chain_init: ChainInit::default(),
            chain_data: Dataset::default(),
            std_samples: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    /// Prior draws for the importance-sampled Hellinger distance; 0 skips it.
    pub hellinger_samples: usize,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| {
            FwiError::Config(format!("line {} column {}: {e}", e.line(), e.column()))
        })?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative paths inside it resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FwiError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            FwiError::Config(m) => FwiError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let TrueModel::File { path: p } = &mut cfg.true_model {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical (compact) JSON serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, e: FwiError| match e {
            FwiError::Config(m) | FwiError::Geometry(m) | FwiError::Shape(m) | FwiError::Input(m) => {
                FwiError::Config(format!("{name}: {m}"))
            }
            other => other,
        };
        self.grid.validate().map_err(|e| field("grid", e))?;
        self.bounds.validate().map_err(|e| field("bounds", e))?;
        self.geometry.build(&self.grid).validate(&self.grid).map_err(|e| field("geometry", e))?;
        self.prior.validate().map_err(|e| field("prior", e))?;
        if self.potentials.is_empty() {
            return Err(FwiError::Config("potentials: list must not be empty".into()));
        }
        let mut seen = HashSet::new();
        for (i, p) in self.potentials.iter().enumerate() {
            // a missing W₂/M normalizer is filled from the data at run time
            let mut p = p.clone();
            if p.kind.needs_normalizer() && p.normalizer.is_none() {
                p.normalizer = Some(NormalizerSpec::square_for_amplitude(1.0));
            }
            p.validate().map_err(|e| field(&format!("potentials[{i}]"), e))?;
            if !seen.insert(p.kind) {
                return Err(FwiError::Config(format!("potentials[{i}]: {} listed twice", p.kind)));
            }
        }
        match self.prior_mean {
            Some(PriorMean::Layered { v_top, v_bottom, water_velocity }) => {
                for (name, v) in [("v_top", v_top), ("v_bottom", v_bottom), ("water_velocity", water_velocity)] {
                    if !(v > self.bounds.v_min && v < self.bounds.v_max) {
                        return Err(FwiError::Config(format!("prior_mean.{name}: {v} outside the velocity bounds")));
                    }
                }
            }
            Some(PriorMean::SmoothedTruth { length }) if !(length >= 0.0 && length.is_finite()) => {
                return Err(FwiError::Config(format!("prior_mean.length must be >= 0, got {length}")));
            }
            _ => {}
        }
        match (self.noise.snr_db, self.noise.amplitude) {
            (Some(_), Some(_)) => return Err(FwiError::Config("noise: give snr_db or amplitude, not both".into())),
            (Some(s), None) if !s.is_finite() => return Err(FwiError::Config("noise.snr_db must be finite".into())),
            (None, Some(a)) if !(a >= 0.0 && a.is_finite()) => {
                return Err(FwiError::Config("noise.amplitude must be non-negative".into()))
            }
            _ => {}
        }
        if let TrueModel::File { path } = &self.true_model {
            let bin = bayes_fwi::io::with_ext(path, "bin");
            if !bin.exists() {
                return Err(FwiError::Config(format!("true_model.path: {} does not exist", bin.display())));
            }
        }
        self.inference.chain.validate().map_err(|e| field("inference.chain", e))?;
        if self.inference.n_chains == 0 {
            return Err(FwiError::Config("inference.n_chains must be at least 1".into()));
        }
        Ok(())
    }
}
