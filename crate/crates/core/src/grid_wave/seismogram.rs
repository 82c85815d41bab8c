use serde::{Deserialize, Serialize};

use crate::error::{FwiError, Result};

/// Receiver traces for every source: `data[(s * n_rcv + r) * nt + n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seismogram {
    pub n_src: usize,
    pub n_rcv: usize,
    pub nt: usize,
    pub dt: f64,
    pub data: Vec<f64>,
    /// Set once the per-trace time mean has been removed.
    pub zero_mean: bool,
    #[serde(default)]
    pub source_coords: Vec<(f64, f64)>,
    #[serde(default)]
    pub receiver_coords: Vec<(f64, f64)>,
}

impl Seismogram {
    pub fn zeros(n_src: usize, n_rcv: usize, nt: usize, dt: f64) -> Self {
        Self {
            n_src,
            n_rcv,
            nt,
            dt,
            data: vec![0.0; n_src * n_rcv * nt],
            zero_mean: false,
            source_coords: Vec::new(),
            receiver_coords: Vec::new(),
        }
    }

    /// Same layout and metadata, new sample values.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        if data.len() != self.data.len() {
            return Err(FwiError::Shape(format!("expected {} samples, got {}", self.data.len(), data.len())));
        }
        Ok(Self { data, zero_mean: false, ..self.clone_meta() })
    }

    fn clone_meta(&self) -> Self {
        Self {
            n_src: self.n_src,
            n_rcv: self.n_rcv,
            nt: self.nt,
            dt: self.dt,
            data: Vec::new(),
            zero_mean: self.zero_mean,
            source_coords: self.source_coords.clone(),
            receiver_coords: self.receiver_coords.clone(),
        }
    }

    pub fn n_traces(&self) -> usize {
        self.n_src * self.n_rcv
    }

    /// Length of the time window `|T|`.
    pub fn t_span(&self) -> f64 {
        self.nt as f64 * self.dt
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.n_src, self.n_rcv, self.nt]
    }

    pub fn trace(&self, src: usize, rcv: usize) -> &[f64] {
        let k = (src * self.n_rcv + rcv) * self.nt;
        &self.data[k..k + self.nt]
    }

    pub fn trace_mut(&mut self, src: usize, rcv: usize) -> &mut [f64] {
        let k = (src * self.n_rcv + rcv) * self.nt;
        &mut self.data[k..k + self.nt]
    }

    pub fn traces(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.nt)
    }

    pub fn check_same_shape(&self, other: &Seismogram) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(FwiError::Shape(format!("seismogram shapes differ: {:?} vs {:?}", self.shape(), other.shape())));
        }
        if (self.dt - other.dt).abs() > 1e-12 * self.dt.abs().max(1.0) {
            return Err(FwiError::Shape(format!("sampling intervals differ: {} vs {}", self.dt, other.dt)));
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `‖·‖²` in `L²(D; L²(T))` with counting measure on traces.
    pub fn l2_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>() * self.dt
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sub(&self, other: &Seismogram) -> Result<Seismogram> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        let mut out = self.with_data(data)?;
        out.zero_mean = self.zero_mean && other.zero_mean;
        Ok(out)
    }

    /// Checks the zero-mean invariant: every trace mean is within `1e-12` of
    /// that trace's max-abs.
    pub fn verify_zero_mean(&self) -> bool {
        self.traces().all(|tr| {
            let mean = tr.iter().sum::<f64>() / tr.len() as f64;
            let scale = tr.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            mean.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE)
        })
    }
}

/// Subtracts each trace's time mean and marks the result zero-mean.
pub fn remove_zero_frequency(s: &Seismogram) -> Seismogram {
    let mut out = s.clone();
    for tr in out.data.chunks_exact_mut(s.nt) {
        let mean = tr.iter().sum::<f64>() / tr.len() as f64;
        tr.iter_mut().for_each(|v| *v -= mean);
    }
    out.zero_mean = true;
    out
}
