//! FFT helpers: 2D periodic convolution for the Matérn sampler and the
//! DCT-II pair behind the Neumann Ḣ⁻¹ seminorm.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Row-major 2D FFT on an `nx` (fast) × `nz` (slow) periodic grid.
pub struct Fft2 {
    nx: usize,
    nz: usize,
    fx: Arc<dyn Fft<f64>>,
    ix: Arc<dyn Fft<f64>>,
    fz: Arc<dyn Fft<f64>>,
    iz: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("nx", &self.nx).field("nz", &self.nz).finish()
    }
}

impl Fft2 {
    pub fn new(nx: usize, nz: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            nx,
            nz,
            fx: planner.plan_fft_forward(nx),
            ix: planner.plan_fft_inverse(nx),
            fz: planner.plan_fft_forward(nz),
            iz: planner.plan_fft_inverse(nz),
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let (px, pz) = if inverse { (&self.ix, &self.iz) } else { (&self.fx, &self.fz) };
        for row in buf.chunks_exact_mut(self.nx) {
            px.process(row);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); self.nz];
        for x in 0..self.nx {
            for z in 0..self.nz {
                col[z] = buf[z * self.nx + x];
            }
            pz.process(&mut col);
            for z in 0..self.nz {
                buf[z * self.nx + x] = col[z];
            }
        }
    }

    /// Applies the real, even Fourier multiplier `symbol` to `data` in place.
    pub fn apply_multiplier(&self, data: &mut [f64], symbol: &[f64]) {
        assert_eq!(data.len(), self.len());
        assert_eq!(symbol.len(), self.len());
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, false);
        for (b, s) in buf.iter_mut().zip(symbol) {
            *b *= *s;
        }
        self.transform(&mut buf, true);
        let norm = 1.0 / self.len() as f64;
        for (d, b) in data.iter_mut().zip(&buf) {
            *d = b.re * norm;
        }
    }

    /// Inverse transform of a real spectrum, returning the real part.
    pub fn inverse_real_spectrum(&self, spectrum: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex64> = spectrum.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, true);
        let norm = 1.0 / self.len() as f64;
        buf.iter().map(|b| b.re * norm).collect()
    }

    /// Angular wavenumbers along one axis for `n` points of spacing `h`.
    pub fn wavenumbers(n: usize, h: f64) -> Vec<f64> {
        let len = n as f64 * h;
        (0..n)
            .map(|i| {
                let j = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
                2.0 * PI * j / len
            })
            .collect()
    }
}

/// Unnormalized DCT-II of length `n`:
/// `X_k = Σ_j x_j cos(π k (2j+1) / 2n)`, computed through a length-2n FFT.
pub struct Dct {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    twiddle: Vec<Complex64>,
}

thread_local! {
    static DCT_CACHE: RefCell<HashMap<usize, Arc<Dct>>> = RefCell::new(HashMap::new());
}

impl Dct {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let twiddle = (0..n)
            .map(|k| Complex64::from_polar(1.0, -PI * k as f64 / (2 * n) as f64))
            .collect();
        Self {
            n,
            fwd: planner.plan_fft_forward(2 * n),
            inv: planner.plan_fft_inverse(2 * n),
            twiddle,
        }
    }

    /// Shared per-thread instance for length `n`.
    pub fn cached(n: usize) -> Arc<Dct> {
        DCT_CACHE.with(|c| c.borrow_mut().entry(n).or_insert_with(|| Arc::new(Dct::new(n))).clone())
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(x.len(), n);
        let mut buf = vec![Complex64::new(0.0, 0.0); 2 * n];
        for j in 0..n {
            buf[j].re = x[j];
            buf[2 * n - 1 - j].re = x[j];
        }
        self.fwd.process(&mut buf);
        (0..n).map(|k| 0.5 * (self.twiddle[k] * buf[k]).re).collect()
    }

    /// Transpose of [`Dct::forward`]: `y_j = Σ_k a_k cos(π k (2j+1) / 2n)`.
    pub fn transpose(&self, a: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(a.len(), n);
        let mut buf = vec![Complex64::new(0.0, 0.0); 2 * n];
        for k in 0..n {
            buf[k] = a[k] * self.twiddle[k].conj();
        }
        // unnormalized inverse: Σ_k z_k e^{+2πi jk / 2n}
        self.inv.process(&mut buf);
        (0..n).map(|j| buf[j].re).collect()
    }
}
