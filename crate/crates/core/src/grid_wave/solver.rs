use serde::{Deserialize, Serialize};

use super::{AcquisitionGeometry, Grid2D, Seismogram};
use crate::error::{FwiError, Result};
use crate::exec::Exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Sponge thickness in cells, appended outside the model grid.
    pub sponge_width: usize,
    /// Nominal amplitude reflection of the sponge, sets the damping peak.
    pub sponge_reflection: f64,
    /// Pressure-release (Dirichlet) top boundary instead of a top sponge.
    pub free_surface: bool,
    /// Fraction of the stability limit used by `dt`.
    pub cfl_safety: f64,
    /// Store every k-th forward state; intermediate states are interpolated.
    pub history_stride: usize,
    pub exec: Exec,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            sponge_width: 20,
            sponge_reflection: 1e-3,
            free_surface: false,
            cfl_safety: 0.9,
            history_stride: 1,
            exec: Exec::default(),
        }
    }
}

/// Stability limit of the scheme for a medium no faster than `v_max`.
///
/// The fourth-order stencil has spectral radius `16/3·(1/dx² + 1/dz²)`, and
/// leapfrog needs `dt²·v²·ρ ≤ 4`.
pub fn stable_dt(dx: f64, dz: f64, v_max: f64) -> f64 {
    let rho = 16.0 / 3.0 * (dx.powi(-2) + dz.powi(-2));
    2.0 / (v_max * rho.sqrt())
}

/// Stored forward wavefield states `v^1 ..= v^nt` (every `stride`-th kept).
#[derive(Debug, Clone)]
pub struct ForwardHistory {
    stride: usize,
    nt: usize,
    cells: usize,
    /// `states[j]` holds `v^{j·stride}` for `j ≥ 1`; `v^nt` is always kept last.
    states: Vec<Vec<f64>>,
}

impl ForwardHistory {
    fn new(stride: usize, nt: usize, cells: usize) -> Self {
        Self { stride, nt, cells, states: Vec::with_capacity(nt / stride + 2) }
    }

    fn push(&mut self, n: usize, state: &[f64]) {
        if n % self.stride == 0 || n == self.nt {
            self.states.push(state.to_vec());
        }
    }

    fn stored(&self, n: usize) -> Option<&[f64]> {
        if n == 0 {
            return None;
        }
        if n == self.nt && n % self.stride != 0 {
            return self.states.last().map(|v| v.as_slice());
        }
        Some(&self.states[n / self.stride - 1])
    }

    /// Writes `v^n` into `out` (zero for `n ≤ 0`).
    pub fn state_into(&self, n: isize, out: &mut [f64]) {
        if n <= 0 {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let n = n as usize;
        if self.stride == 1 || n % self.stride == 0 || n == self.nt {
            out.copy_from_slice(self.stored(n).unwrap());
            return;
        }
        let lo = (n / self.stride) * self.stride;
        let hi = (lo + self.stride).min(self.nt);
        let w = (n - lo) as f64 / (hi - lo) as f64;
        let b = self.stored(hi).unwrap();
        match self.stored(lo) {
            Some(a) => out.iter_mut().zip(a.iter().zip(b)).for_each(|(o, (x, y))| *o = (1.0 - w) * x + w * y),
            None => out.iter_mut().zip(b).for_each(|(o, y)| *o = w * y),
        }
    }

    pub fn memory_bytes(&self) -> usize {
        self.states.len() * self.cells * std::mem::size_of::<f64>()
    }
}

/// Per-model coefficient arrays on the extended (sponge + ghost) grid.
struct Coeffs {
    m: Vec<f64>,
    two_a: Vec<f64>,
    a_minus_g: Vec<f64>,
    inv_a_plus_g: Vec<f64>,
}

/// Acoustic solver bound to one grid and acquisition geometry.
#[derive(Debug, Clone)]
pub struct WaveSolver {
    grid: Grid2D,
    geom: AcquisitionGeometry,
    cfg: SolverConfig,
    v_max: f64,
    npx: usize,
    npz: usize,
    stride: usize,
    /// Sponge damping rate per extended cell (ghosts included), 1/s.
    gamma: Vec<f64>,
    /// Extended interior cell → model grid cell (edge replication).
    ext_to_grid: Vec<(usize, usize)>,
    src_idx: Vec<usize>,
    rcv_idx: Vec<usize>,
    /// Source time functions already divided by the cell area.
    forcing: Vec<Vec<f64>>,
    c0: f64,
    cx1: f64,
    cx2: f64,
    cz1: f64,
    cz2: f64,
}

impl WaveSolver {
    /// `v_max` is the largest velocity the solver will be asked to propagate;
    /// `dt` is checked against the stability limit for it.
    pub fn new(grid: Grid2D, geom: AcquisitionGeometry, cfg: SolverConfig, v_max: f64) -> Result<Self> {
        grid.validate()?;
        geom.validate(&grid)?;
        if cfg.history_stride == 0 {
            return Err(FwiError::Config("history_stride must be at least 1".into()));
        }
        if !(cfg.cfl_safety > 0.0 && cfg.cfl_safety <= 1.0) {
            return Err(FwiError::Config("cfl_safety must lie in (0, 1]".into()));
        }
        let limit = cfg.cfl_safety * stable_dt(grid.dx, grid.dz, v_max);
        if geom.dt > limit * (1.0 + 1e-12) {
            return Err(FwiError::Config(format!(
                "CFL violation: dt = {} exceeds {:.6e} for v_max = {v_max} km/s",
                geom.dt, limit
            )));
        }
        let w = cfg.sponge_width;
        let top = if cfg.free_surface { 0 } else { w };
        let npx = grid.nx + 2 * w;
        let npz = grid.nz + w + top;
        let stride = npx + 4;
        let total = stride * (npz + 4);

        let mut gamma = vec![0.0; total];
        let mut ext_to_grid = Vec::with_capacity(npx * npz);
        let h = grid.dx.min(grid.dz);
        let gamma_max = if w > 0 { 1.5 * v_max * (1.0 / cfg.sponge_reflection).ln() / (w as f64 * h) } else { 0.0 };
        for ez in 0..npz {
            for ex in 0..npx {
                let dxs = if ex < w { w - ex } else if ex >= w + grid.nx { ex + 1 - w - grid.nx } else { 0 };
                let dzs = if ez < top { top - ez } else if ez >= top + grid.nz { ez + 1 - top - grid.nz } else { 0 };
                if w > 0 {
                    let r = (dxs as f64 / w as f64).powi(2) + (dzs as f64 / w as f64).powi(2);
                    gamma[(ez + 2) * stride + ex + 2] = gamma_max * r;
                }
                let ix = (ex as isize - w as isize).clamp(0, grid.nx as isize - 1) as usize;
                let iz = (ez as isize - top as isize).clamp(0, grid.nz as isize - 1) as usize;
                ext_to_grid.push((ix, iz));
            }
        }
        let to_ext = |(ix, iz): (usize, usize)| (iz + top + 2) * stride + ix + w + 2;
        let src_idx = geom
            .sources
            .iter()
            .map(|s| to_ext(grid.nearest_node(s.position.0, s.position.1).unwrap()))
            .collect();
        let rcv_idx = geom.receivers.iter().map(|r| to_ext(grid.nearest_node(r.0, r.1).unwrap())).collect();
        let area = grid.dx * grid.dz;
        let forcing = geom
            .sources
            .iter()
            .map(|s| geom.wavelets[s.wavelet].samples(geom.dt, geom.nt).into_iter().map(|v| v / area).collect())
            .collect();
        let (ix2, iz2) = (grid.dx.powi(-2), grid.dz.powi(-2));
        Ok(Self {
            c0: -2.5 * (ix2 + iz2),
            cx1: 4.0 / 3.0 * ix2,
            cx2: -1.0 / 12.0 * ix2,
            cz1: 4.0 / 3.0 * iz2,
            cz2: -1.0 / 12.0 * iz2,
            grid,
            geom,
            cfg,
            v_max,
            npx,
            npz,
            stride,
            gamma,
            ext_to_grid,
            src_idx,
            rcv_idx,
            forcing,
        })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn geometry(&self) -> &AcquisitionGeometry {
        &self.geom
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    fn total(&self) -> usize {
        self.stride * (self.npz + 4)
    }

    #[inline]
    fn ext_index(&self, k: usize) -> usize {
        (k / self.npx + 2) * self.stride + k % self.npx + 2
    }

    fn coeffs(&self, m: &[f64]) -> Result<Coeffs> {
        if m.len() != self.grid.len() {
            return Err(FwiError::Shape(format!("slowness field has {} cells, grid has {}", m.len(), self.grid.len())));
        }
        let m_floor = self.v_max.powi(-2) * (1.0 - 1e-9);
        if let Some(bad) = m.iter().find(|&&v| !(v.is_finite() && v >= m_floor)) {
            return Err(FwiError::Config(format!(
                "squared slowness {bad} implies a velocity above v_max = {} (CFL) or is invalid",
                self.v_max
            )));
        }
        let total = self.total();
        let dt = self.geom.dt;
        let mut c = Coeffs {
            m: vec![1.0; total],
            two_a: vec![0.0; total],
            a_minus_g: vec![0.0; total],
            inv_a_plus_g: vec![0.0; total],
        };
        for (k, &(ix, iz)) in self.ext_to_grid.iter().enumerate() {
            let e = self.ext_index(k);
            let mv = m[self.grid.index(ix, iz)];
            let a = mv / (dt * dt);
            let g = mv * self.gamma[e] / (2.0 * dt);
            c.m[e] = mv;
            c.two_a[e] = 2.0 * a;
            c.a_minus_g[e] = a - g;
            c.inv_a_plus_g[e] = 1.0 / (a + g);
        }
        Ok(c)
    }

    #[inline]
    fn lap(&self, v: &[f64], i: usize) -> f64 {
        let s = self.stride;
        self.c0 * v[i]
            + self.cx1 * (v[i - 1] + v[i + 1])
            + self.cx2 * (v[i - 2] + v[i + 2])
            + self.cz1 * (v[i - s] + v[i + s])
            + self.cz2 * (v[i - 2 * s] + v[i + 2 * s])
    }

    /// One explicit step: `next = (2a·cur − (a−g)·prev + L·cur + extra) / (a+g)`
    /// over interior cells. `extra` is added per cell before the division.
    fn step(&self, c: &Coeffs, prev: &[f64], cur: &[f64], next: &mut [f64], extra: Option<&[f64]>) {
        let s = self.stride;
        for ez in 0..self.npz {
            let row = (ez + 2) * s + 2;
            for i in row..row + self.npx {
                let mut rhs = c.two_a[i] * cur[i] - c.a_minus_g[i] * prev[i] + self.lap(cur, i);
                if let Some(e) = extra {
                    rhs += e[i];
                }
                next[i] = rhs * c.inv_a_plus_g[i];
            }
        }
    }

    /// `∂E^n/∂m` for one time level, using `v^{n+1}, v^n, v^{n−1}`.
    fn residual_sensitivity(&self, vp: &[f64], v0: &[f64], vm: &[f64], out: &mut [f64]) {
        let dt = self.geom.dt;
        let idt2 = 1.0 / (dt * dt);
        let i2dt = 0.5 / dt;
        for ez in 0..self.npz {
            let row = (ez + 2) * self.stride + 2;
            for i in row..row + self.npx {
                out[i] = (vp[i] - 2.0 * v0[i] + vm[i]) * idt2 + self.gamma[i] * (vp[i] - vm[i]) * i2dt;
            }
        }
    }

    fn run_source(&self, c: &Coeffs, src: usize, mut history: Option<&mut ForwardHistory>) -> Vec<f64> {
        let nt = self.geom.nt;
        let nr = self.rcv_idx.len();
        let total = self.total();
        let (mut prev, mut cur, mut next) = (vec![0.0; total], vec![0.0; total], vec![0.0; total]);
        let mut traces = vec![0.0; nr * nt];
        let si = self.src_idx[src];
        for n in 0..nt {
            self.step(c, &prev, &cur, &mut next, None);
            next[si] += self.forcing[src][n] * c.inv_a_plus_g[si];
            for (r, &ri) in self.rcv_idx.iter().enumerate() {
                traces[r * nt + n] = next[ri];
            }
            std::mem::swap(&mut prev, &mut cur);
            std::mem::swap(&mut cur, &mut next);
            if let Some(h) = history.as_deref_mut() {
                h.push(n + 1, &cur);
            }
        }
        traces
    }

    fn assemble(&self, per_source: Vec<Vec<f64>>) -> Seismogram {
        let mut s = Seismogram::zeros(self.geom.n_sources(), self.geom.n_receivers(), self.geom.nt, self.geom.dt);
        s.data = per_source.into_iter().flatten().collect();
        s.source_coords = self.geom.sources.iter().map(|x| x.position).collect();
        s.receiver_coords = self.geom.receivers.clone();
        s
    }

    /// Receiver traces for every source, for squared slowness `m` on the grid.
    pub fn forward(&self, m: &[f64]) -> Result<Seismogram> {
        let c = self.coeffs(m)?;
        let per = self.cfg.exec.map_range(self.geom.n_sources(), |s| self.run_source(&c, s, None));
        Ok(self.assemble(per))
    }

    /// Forward solve that also keeps the wavefield history needed by
    /// [`WaveSolver::adjoint`] and [`WaveSolver::born`].
    pub fn forward_with_history(&self, m: &[f64]) -> Result<(Seismogram, Vec<ForwardHistory>)> {
        let c = self.coeffs(m)?;
        let total = self.total();
        let out = self.cfg.exec.map_range(self.geom.n_sources(), |s| {
            let mut h = ForwardHistory::new(self.cfg.history_stride, self.geom.nt, total);
            let tr = self.run_source(&c, s, Some(&mut h));
            (tr, h)
        });
        let (traces, hist): (Vec<_>, Vec<_>) = out.into_iter().unzip();
        Ok((self.assemble(traces), hist))
    }

    fn check_history(&self, history: &[ForwardHistory]) -> Result<()> {
        if history.len() != self.geom.n_sources() || history.iter().any(|h| h.nt != self.geom.nt) {
            return Err(FwiError::Shape("forward history does not match the acquisition geometry".into()));
        }
        Ok(())
    }

    /// Gradient with respect to `m` (on the grid) of a data functional `J`
    /// whose derivative with respect to each recorded sample is `residual`.
    ///
    /// This is the exact transpose of the discrete forward scheme, so it
    /// matches finite differences of `J` to round-off.
    pub fn adjoint(&self, m: &[f64], residual: &Seismogram, history: &[ForwardHistory]) -> Result<Vec<f64>> {
        let shape = [self.geom.n_sources(), self.geom.n_receivers(), self.geom.nt];
        if residual.shape() != shape {
            return Err(FwiError::Shape(format!("residual shape {:?} does not match geometry {:?}", residual.shape(), shape)));
        }
        self.check_history(history)?;
        let c = self.coeffs(m)?;
        let per = self.cfg.exec.map_range(self.geom.n_sources(), |s| self.adjoint_source(&c, s, residual, &history[s]));
        let mut grad = vec![0.0; self.grid.len()];
        for g_ext in per {
            for (k, &(ix, iz)) in self.ext_to_grid.iter().enumerate() {
                grad[self.grid.index(ix, iz)] += g_ext[self.ext_index(k)];
            }
        }
        Ok(grad)
    }

    fn adjoint_source(&self, c: &Coeffs, src: usize, residual: &Seismogram, hist: &ForwardHistory) -> Vec<f64> {
        let nt = self.geom.nt;
        let total = self.total();
        let (mut mu_next, mut mu_cur, mut mu_prev) = (vec![0.0; total], vec![0.0; total], vec![0.0; total]);
        let mut inject = vec![0.0; total];
        let mut grad = vec![0.0; total];
        let (mut vp, mut v0, mut vm) = (vec![0.0; total], vec![0.0; total], vec![0.0; total]);
        let mut sens = vec![0.0; total];
        let traces: Vec<&[f64]> = (0..self.rcv_idx.len()).map(|r| residual.trace(src, r)).collect();
        // μ^{k-1} from μ^k, μ^{k+1} and ∂J/∂v^k, k = nt..1
        for k in (1..=nt).rev() {
            for (r, &ri) in self.rcv_idx.iter().enumerate() {
                inject[ri] += traces[r][k - 1];
            }
            self.step(c, &mu_next, &mu_cur, &mut mu_prev, Some(&inject));
            for &ri in &self.rcv_idx {
                inject[ri] = 0.0;
            }
            let n = k as isize - 1;
            hist.state_into(n + 1, &mut vp);
            hist.state_into(n, &mut v0);
            hist.state_into(n - 1, &mut vm);
            self.residual_sensitivity(&vp, &v0, &vm, &mut sens);
            for ((g, mu), s) in grad.iter_mut().zip(&mu_prev).zip(&sens) {
                *g -= mu * s;
            }
            std::mem::swap(&mut mu_next, &mut mu_cur);
            std::mem::swap(&mut mu_cur, &mut mu_prev);
        }
        grad
    }

    /// Linearized (Born) data perturbation for a squared-slowness perturbation
    /// `dm` around the model whose history is given.
    pub fn born(&self, m: &[f64], history: &[ForwardHistory], dm: &[f64]) -> Result<Seismogram> {
        if dm.len() != self.grid.len() {
            return Err(FwiError::Shape("perturbation does not match the grid".into()));
        }
        self.check_history(history)?;
        let c = self.coeffs(m)?;
        let total = self.total();
        let mut dm_ext = vec![0.0; total];
        for (k, &(ix, iz)) in self.ext_to_grid.iter().enumerate() {
            dm_ext[self.ext_index(k)] = dm[self.grid.index(ix, iz)];
        }
        let per = self.cfg.exec.map_range(self.geom.n_sources(), |s| self.born_source(&c, &history[s], &dm_ext));
        Ok(self.assemble(per))
    }

    fn born_source(&self, c: &Coeffs, hist: &ForwardHistory, dm_ext: &[f64]) -> Vec<f64> {
        let nt = self.geom.nt;
        let nr = self.rcv_idx.len();
        let total = self.total();
        let (mut prev, mut cur, mut next) = (vec![0.0; total], vec![0.0; total], vec![0.0; total]);
        let (mut vp, mut v0, mut vm) = (vec![0.0; total], vec![0.0; total], vec![0.0; total]);
        let mut src = vec![0.0; total];
        let mut traces = vec![0.0; nr * nt];
        for n in 0..nt {
            let ni = n as isize;
            hist.state_into(ni + 1, &mut vp);
            hist.state_into(ni, &mut v0);
            hist.state_into(ni - 1, &mut vm);
            self.residual_sensitivity(&vp, &v0, &vm, &mut src);
            src.iter_mut().zip(dm_ext).for_each(|(s, d)| *s *= -d);
            self.step(c, &prev, &cur, &mut next, Some(&src));
            for (r, &ri) in self.rcv_idx.iter().enumerate() {
                traces[r * nt + n] = next[ri];
            }
            std::mem::swap(&mut prev, &mut cur);
            std::mem::swap(&mut cur, &mut next);
        }
        traces
    }

    /// Discrete energy `E^{n+1/2} = ½Σ m((v^{n+1}−v^n)/dt)² + ½⟨v^{n+1}, −L v^n⟩`
    /// after every step for one source.
    pub fn energy_history(&self, m: &[f64], src: usize) -> Result<Vec<f64>> {
        let c = self.coeffs(m)?;
        let nt = self.geom.nt;
        let total = self.total();
        let dt = self.geom.dt;
        let (mut prev, mut cur, mut next) = (vec![0.0; total], vec![0.0; total], vec![0.0; total]);
        let si = self.src_idx[src];
        let mut energy = Vec::with_capacity(nt);
        for n in 0..nt {
            self.step(&c, &prev, &cur, &mut next, None);
            next[si] += self.forcing[src][n] * c.inv_a_plus_g[si];
            let mut e = 0.0;
            for ez in 0..self.npz {
                let row = (ez + 2) * self.stride + 2;
                for i in row..row + self.npx {
                    let vt = (next[i] - cur[i]) / dt;
                    e += 0.5 * c.m[i] * vt * vt - 0.5 * next[i] * self.lap(&cur, i);
                }
            }
            energy.push(e);
            std::mem::swap(&mut prev, &mut cur);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(energy)
    }
}
