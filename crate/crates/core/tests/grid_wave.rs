use bayes_fwi::grid_wave::{
    remove_zero_frequency, stable_dt, AcquisitionGeometry, Grid2D, Seismogram, SolverConfig, Source,
    VelocityBounds, VelocityModel, WaveSolver, Wavelet,
};
use bayes_fwi::{Exec, FwiError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bounds() -> VelocityBounds {
    VelocityBounds::new(1.5, 4.0).unwrap()
}

/// 2D free-space response of `m v_tt − Δv = w(t)δ(x)` with `m = 1/c²`:
/// `v(r, t) = (1/2π) ∫_0^{acosh(ct/r)} w(t − (r/c)·cosh θ) dθ`.
fn analytic_trace(w: &Wavelet, c: f64, r: f64, times: &[f64]) -> Vec<f64> {
    times
        .iter()
        .map(|&t| {
            if c * t <= r {
                return 0.0;
            }
            let top = (c * t / r).acosh();
            let n = 4000;
            let h = top / n as f64;
            let f = |th: f64| w.value(t - r / c * th.cosh());
            // Simpson
            let mut s = f(0.0) + f(top);
            for k in 1..n {
                s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * h);
            }
            s * h / 3.0 / (2.0 * std::f64::consts::PI)
        })
        .collect()
}

fn first_break(trace: &[f64], times: &[f64], frac: f64) -> f64 {
    let peak = trace.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let i = trace.iter().position(|v| v.abs() > frac * peak).unwrap();
    times[i]
}

fn peak_time(trace: &[f64], times: &[f64]) -> f64 {
    let (i, _) = trace.iter().enumerate().fold((0, 0.0f64), |(bi, bv), (i, v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) });
    times[i]
}

#[test]
fn zero_wavelet_gives_zero_data() {
    let grid = Grid2D::new(24, 16, 0.05, 0.05).unwrap();
    let mut geom = AcquisitionGeometry::surface_line(&grid, 2, 0.1, 0.1, 2, 5.0, 0.004, 100);
    geom.wavelets = vec![Wavelet::Sampled(vec![0.0; 100])];
    let model = VelocityModel::homogeneous(grid.clone(), 2.0, bounds()).unwrap();
    let s = WaveSolver::new(grid, geom, SolverConfig::default(), 4.0).unwrap().forward(&model.slowness_sq()).unwrap();
    assert!(s.data.iter().all(|&v| v == 0.0));
}

#[test]
fn homogeneous_arrival_matches_travel_time() {
    let dx = 0.02;
    let grid = Grid2D::new(91, 51, dx, dx).unwrap();
    let c = 2.0;
    let f = 5.0;
    let wavelet = Wavelet::ricker(f);
    let t0 = 1.5 / f;
    let dt = 0.004;
    let nt = 350;
    let geom = AcquisitionGeometry {
        sources: vec![Source { position: (0.4, 0.5), wavelet: 0 }],
        receivers: vec![(1.4, 0.5)],
        wavelets: vec![wavelet.clone()],
        dt,
        nt,
    };
    let model = VelocityModel::homogeneous(grid.clone(), c, bounds()).unwrap();
    let cfg = SolverConfig { sponge_width: 30, ..Default::default() };
    let s = WaveSolver::new(grid, geom, cfg, 2.5).unwrap().forward(&model.slowness_sq()).unwrap();
    let times: Vec<f64> = (0..nt).map(|n| (n + 1) as f64 * dt).collect();
    let exact = analytic_trace(&wavelet, c, 1.0, &times);
    let num = s.trace(0, 0);

    let grid_period = dx / c;
    let travel = 1.0 / c;
    let pick_num = first_break(num, &times, 0.05);
    let pick_exact = first_break(&exact, &times, 0.05);
    assert!((pick_num - pick_exact).abs() <= 2.0 * grid_period, "{pick_num} vs {pick_exact}");
    let peak_num = peak_time(num, &times);
    let peak_exact = peak_time(&exact, &times);
    assert!((peak_num - peak_exact).abs() <= 2.0 * grid_period, "{peak_num} vs {peak_exact}");
    // the response starts after the direct travel time and peaks within a
    // quarter period of t0 + r/c (2D phase delay)
    assert!(peak_exact >= t0 + travel - dt && peak_exact <= t0 + travel + 0.25 / f, "{peak_exact}");
    assert!((peak_num - (t0 + travel)).abs() <= 0.25 / f + 2.0 * grid_period);

    // waveform agreement over the direct pulse, before sponge returns arrive
    let amp = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let window = t0 + travel + 1.0 / f;
    let err = num
        .iter()
        .zip(&exact)
        .zip(&times)
        .filter(|(_, &t)| t <= window)
        .map(|((a, b), _)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(err < 0.05 * amp, "max error {err} vs peak {amp}");
}

#[test]
fn mirror_receivers_record_identical_traces() {
    let grid = Grid2D::new(41, 21, 0.025, 0.025).unwrap();
    let geom = AcquisitionGeometry {
        sources: vec![Source { position: (0.5, 0.2), wavelet: 0 }],
        receivers: vec![(0.3, 0.1), (0.7, 0.1), (0.05, 0.4), (0.95, 0.4)],
        wavelets: vec![Wavelet::ricker(6.0)],
        dt: 0.003,
        nt: 200,
    };
    let model = VelocityModel::homogeneous(grid.clone(), 2.5, bounds()).unwrap();
    let s = WaveSolver::new(grid, geom, SolverConfig::default(), 4.0).unwrap().forward(&model.slowness_sq()).unwrap();
    let scale = s.max_abs();
    for (a, b) in [(0, 1), (2, 3)] {
        for (x, y) in s.trace(0, a).iter().zip(s.trace(0, b)) {
            assert!((x - y).abs() <= 1e-10 * scale);
        }
    }
}

#[test]
fn cfl_violation_and_bad_geometry_are_reported() {
    let grid = Grid2D::new(16, 16, 0.05, 0.05).unwrap();
    let limit = stable_dt(0.05, 0.05, 4.0);
    let geom = AcquisitionGeometry::surface_line(&grid, 1, 0.1, 0.1, 1, 5.0, limit, 10);
    assert!(matches!(WaveSolver::new(grid.clone(), geom, SolverConfig::default(), 4.0), Err(FwiError::Config(_))));
    let mut geom = AcquisitionGeometry::surface_line(&grid, 1, 0.1, 0.1, 1, 5.0, 0.5 * limit, 10);
    geom.sources[0].position = (-1.0, 0.2);
    assert!(matches!(WaveSolver::new(grid, geom, SolverConfig::default(), 4.0), Err(FwiError::Geometry(_))));
}

#[test]
fn velocities_above_vmax_are_rejected() {
    let grid = Grid2D::new(16, 16, 0.05, 0.05).unwrap();
    let geom = AcquisitionGeometry::surface_line(&grid, 1, 0.1, 0.1, 1, 5.0, 0.004, 10);
    let solver = WaveSolver::new(grid.clone(), geom, SolverConfig::default(), 3.0).unwrap();
    let m = vec![4.0f64.powi(-2); grid.len()];
    assert!(matches!(solver.forward(&m), Err(FwiError::Config(_))));
}

fn random_model(grid: &Grid2D, rng: &mut ChaCha8Rng) -> VelocityModel {
    let mut vel = vec![0.0; grid.len()];
    let (a, b, c) = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0), rng.random_range(0.0..6.0));
    for iz in 0..grid.nz {
        for ix in 0..grid.nx {
            let (x, z) = grid.coords(ix, iz);
            vel[grid.index(ix, iz)] = 2.2 + 0.6 * (a * x * 3.0 + c).sin() * (b * z * 4.0).cos() + 0.4 * z;
        }
    }
    VelocityModel::from_velocity(grid.clone(), &vel, bounds()).unwrap()
}

fn fd_setup() -> (WaveSolver, Vec<f64>, Seismogram) {
    let grid = Grid2D::new(48, 24, 0.025, 0.025).unwrap();
    let geom = AcquisitionGeometry::surface_line(&grid, 1, 0.05, 0.05, 3, 8.0, 0.003, 260);
    let cfg = SolverConfig { sponge_width: 12, ..Default::default() };
    let solver = WaveSolver::new(grid.clone(), geom, cfg, 4.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let truth = random_model(&grid, &mut rng);
    let start = VelocityModel::homogeneous(grid.clone(), 2.4, bounds()).unwrap();
    let y = solver.forward(&truth.slowness_sq()).unwrap();
    (solver, start.slowness_sq(), y)
}

fn l2_misfit(solver: &WaveSolver, m: &[f64], y: &Seismogram) -> f64 {
    let d = solver.forward(m).unwrap();
    0.5 * d.sub(y).unwrap().l2_norm_sq()
}

#[test]
fn adjoint_gradient_matches_central_differences_in_cells() {
    let (solver, m, y) = fd_setup();
    let (d, hist) = solver.forward_with_history(&m).unwrap();
    let mut res = d.sub(&y).unwrap();
    res.data.iter_mut().for_each(|v| *v *= d.dt);
    let grad = solver.adjoint(&m, &res, &hist).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let grid = solver.grid().clone();
    for _ in 0..5 {
        let ix = rng.random_range(4..grid.nx - 4);
        let iz = rng.random_range(2..grid.nz - 4);
        let k = grid.index(ix, iz);
        let mut best = f64::INFINITY;
        for h in [1e-3, 1e-4, 1e-5] {
            let step = h * m[k];
            let mut mp = m.clone();
            mp[k] += step;
            let mut mm = m.clone();
            mm[k] -= step;
            let fd = (l2_misfit(&solver, &mp, &y) - l2_misfit(&solver, &mm, &y)) / (2.0 * step);
            best = best.min((fd - grad[k]).abs() / grad[k].abs().max(1e-300));
        }
        assert!(best < 1e-4, "cell ({ix},{iz}): relative error {best}");
    }
}

#[test]
fn adjoint_consistency_for_random_directions() {
    let (solver, m, y) = fd_setup();
    let (d, hist) = solver.forward_with_history(&m).unwrap();
    let mut res = d.sub(&y).unwrap();
    res.data.iter_mut().for_each(|v| *v *= d.dt);
    let grad = solver.adjoint(&m, &res, &hist).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..2 {
        let dir: Vec<f64> = m.iter().map(|v| v * rng.random_range(-1.0..1.0)).collect();
        let predicted: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        let h = 1e-4;
        let mp: Vec<f64> = m.iter().zip(&dir).map(|(a, b)| a + h * b).collect();
        let mm: Vec<f64> = m.iter().zip(&dir).map(|(a, b)| a - h * b).collect();
        let fd = (l2_misfit(&solver, &mp, &y) - l2_misfit(&solver, &mm, &y)) / (2.0 * h);
        assert!((fd - predicted).abs() < 1e-4 * predicted.abs(), "{fd} vs {predicted}");
    }
}

#[test]
fn born_is_transpose_of_adjoint_and_linearizes_forward() {
    let (solver, m, _) = fd_setup();
    let (d, hist) = solver.forward_with_history(&m).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dm: Vec<f64> = m.iter().map(|v| 0.05 * v * rng.random_range(-1.0..1.0)).collect();
    let r = d.with_data(d.data.iter().map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let jdm = solver.born(&m, &hist, &dm).unwrap();
    let jtr = solver.adjoint(&m, &r, &hist).unwrap();
    let lhs: f64 = jdm.data.iter().zip(&r.data).map(|(a, b)| a * b).sum();
    let rhs: f64 = dm.iter().zip(&jtr).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(rhs.abs()), "{lhs} vs {rhs}");

    let h = 1e-4;
    let mp: Vec<f64> = m.iter().zip(&dm).map(|(a, b)| a + h * b).collect();
    let mm: Vec<f64> = m.iter().zip(&dm).map(|(a, b)| a - h * b).collect();
    let dp = solver.forward(&mp).unwrap();
    let dmn = solver.forward(&mm).unwrap();
    let fd: Vec<f64> = dp.data.iter().zip(&dmn.data).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    let num: f64 = fd.iter().zip(&jdm.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = jdm.data.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(num < 1e-6 * den, "relative Born error {}", num / den);
}

#[test]
fn subsampled_history_gives_close_gradient() {
    let (solver, m, y) = fd_setup();
    let cfg = SolverConfig { history_stride: 2, ..solver.config().clone() };
    let coarse = WaveSolver::new(solver.grid().clone(), solver.geometry().clone(), cfg, 4.0).unwrap();
    let grads: Vec<Vec<f64>> = [&solver, &coarse]
        .iter()
        .map(|s| {
            let (d, hist) = s.forward_with_history(&m).unwrap();
            let mut res = d.sub(&y).unwrap();
            res.data.iter_mut().for_each(|v| *v *= d.dt);
            s.adjoint(&m, &res, &hist).unwrap()
        })
        .collect();
    let num: f64 = grads[0].iter().zip(&grads[1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = grads[0].iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(num < 0.1 * den, "relative difference {}", num / den);
}

#[test]
fn zero_residual_gives_zero_gradient_and_water_is_masked() {
    let grid = Grid2D::new(24, 16, 0.05, 0.05).unwrap().with_water_depth(0.1);
    let geom = AcquisitionGeometry::surface_line(&grid, 1, 0.05, 0.05, 2, 5.0, 0.005, 120);
    let model = VelocityModel::homogeneous(grid.clone(), 2.0, bounds()).unwrap();
    let solver = WaveSolver::new(grid.clone(), geom, SolverConfig::default(), 4.0).unwrap();
    let m = model.slowness_sq();
    let (d, hist) = solver.forward_with_history(&m).unwrap();
    let zero = d.with_data(vec![0.0; d.data.len()]).unwrap();
    assert!(solver.adjoint(&m, &zero, &hist).unwrap().iter().all(|&g| g == 0.0));
    let ones = d.with_data(d.data.clone()).unwrap();
    let gu = model.pullback_gradient(&solver.adjoint(&m, &ones, &hist).unwrap());
    let mask = grid.active_mask();
    assert!(gu.iter().zip(&mask).all(|(g, &a)| a || *g == 0.0));
    assert!(gu.iter().any(|g| *g != 0.0));
}

#[test]
fn energy_is_non_increasing_after_shutoff() {
    let grid = Grid2D::new(40, 30, 0.025, 0.025).unwrap();
    let dt = 0.003;
    let nt = 600;
    // short pulse that is exactly zero after step 60
    let mut pulse = vec![0.0; nt];
    for (n, p) in pulse.iter_mut().enumerate().take(60) {
        let t = n as f64 * dt;
        *p = Wavelet::Ricker { peak_freq: 12.0, delay: 0.09, amplitude: 1.0 }.value(t);
    }
    let geom = AcquisitionGeometry {
        sources: vec![Source { position: (0.5, 0.35), wavelet: 0 }],
        receivers: vec![(0.2, 0.2)],
        wavelets: vec![Wavelet::Sampled(pulse)],
        dt,
        nt,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = random_model(&grid, &mut rng);
    let solver = WaveSolver::new(grid, geom, SolverConfig { sponge_width: 10, ..Default::default() }, 4.0).unwrap();
    let e = solver.energy_history(&model.slowness_sq(), 0).unwrap();
    let e_max = e.iter().cloned().fold(0.0, f64::max);
    assert!(e.iter().all(|&v| v >= -1e-12 * e_max), "energy must stay positive");
    for n in 61..nt {
        assert!(e[n] <= e[n - 1] + 1e-9 * e[n - 1].abs().max(1e-300), "step {n}: {} > {}", e[n], e[n - 1]);
    }
    // the sponge removes most of the energy
    assert!(e[nt - 1] < 0.2 * e[61]);
}

#[test]
fn forward_is_deterministic_and_linear_in_source() {
    let grid = Grid2D::new(24, 16, 0.05, 0.05).unwrap();
    let nt = 150;
    let dt = 0.005;
    let w1 = Wavelet::ricker(5.0).samples(dt, nt);
    let w2: Vec<f64> = (0..nt).map(|n| (n as f64 * 0.07).sin() * (-(n as f64) / 40.0).exp()).collect();
    let sum: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = random_model(&grid, &mut rng);
    let run = |w: &Vec<f64>, exec: Exec| {
        let geom = AcquisitionGeometry {
            sources: vec![Source { position: (0.6, 0.1), wavelet: 0 }, Source { position: (0.2, 0.1), wavelet: 0 }],
            receivers: (0..24).map(|i| (i as f64 * 0.05, 0.05)).collect(),
            wavelets: vec![Wavelet::Sampled(w.clone())],
            dt,
            nt,
        };
        let cfg = SolverConfig { exec, ..Default::default() };
        WaveSolver::new(grid.clone(), geom, cfg, 4.0).unwrap().forward(&model.slowness_sq()).unwrap()
    };
    let a = run(&w1, Exec::Parallel);
    let b = run(&w1, Exec::Sequential);
    assert_eq!(a.data, b.data);
    assert_eq!(a.data, run(&w1, Exec::Parallel).data);
    let c = run(&w2, Exec::Parallel);
    let s = run(&sum, Exec::Parallel);
    let scale = s.max_abs();
    for ((x, y), z) in a.data.iter().zip(&c.data).zip(&s.data) {
        assert!((x + y - z).abs() <= 1e-10 * scale);
    }
    assert!(remove_zero_frequency(&s).verify_zero_mean());
}
