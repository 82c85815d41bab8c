//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=1,4` runs a subset. Failures are reported but only
//! change the exit status when `ACCEPTANCE_STRICT=1`.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::path::PathBuf;
use std::time::Instant;

use bayes_fwi::grid_wave::{remove_zero_frequency, AcquisitionGeometry, Grid2D, Seismogram, SolverConfig, VelocityBounds};
use bayes_fwi::inference::{laplace, map_estimate, run_chain, ChainConfig, LaplaceOptions, MapOptions, PointObservations};
use bayes_fwi::posterior_metrics::{
    covariances_commute, gaussian_w2, gaussian_w2_sq_commuting, gaussian_w2_sq_general, make_noise, Gaussian,
};
use bayes_fwi::potentials::{ForwardMap, Potential, PotentialKind, PotentialSpec};
use bayes_fwi::priors::{MaternPrior, MaternSpec, MeanSpec};
use bayes_fwi::signal::{
    check_equivalence_bounds, check_linearization, hminus1_norm_sq, w2_sq_measures, DensityTrace, Measure1D,
    NormalizerSpec, Trace,
};
use bayes_fwi::Result;
use bayes_fwi_cli::commands::{quantile, salt_summary};
use bayes_fwi_cli::config::{ChainInit, ExperimentConfig};
use bayes_fwi_cli::pipeline::Experiment;
use bayes_fwi_cli::scenes;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn config(name: &str) -> Result<ExperimentConfig> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path)
}

fn max_by<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    it.into_iter().fold(0.0, f64::max)
}

// 1
fn stability_ordering() -> Result<Outcome> {
    let cfg = config("continuous.json")?;
    let exp = Experiment::new(&cfg)?;
    let clean = exp.simulate()?;
    let specs = exp.potentials(&clean)?;
    let clean_runs: Vec<_> = exp.invert_all(&specs, &clean, cfg.seed)?.into_iter().map(Some).collect();
    let mut all = true;
    let mut lines = Vec::new();
    for k in 0..3 {
        let seed = cfg.seed + 100 + k;
        let noisy = exp.add_noise(&clean, seed)?;
        let runs: Vec<_> = exp.invert_all(&specs, &noisy.noisy, cfg.seed)?.into_iter().map(Some).collect();
        let r = exp.compare(&clean_runs, &runs, &clean, &noisy.noisy, noisy.snr_db, seed)?;
        let holds = r.ordering_holds == Some(true);
        all &= holds;
        let d = |n: &str| r.distance(n).unwrap_or(f64::NAN);
        lines.push(format!(
            "seed {seed} (snr {:.2} dB): l2 {:.3}, w2 {:.3}, hm1 {:.3}{}",
            noisy.snr_db.unwrap_or(f64::NAN),
            d("l2"),
            d("w2"),
            d("hm1"),
            if holds { "" } else { " [order violated]" }
        ));
    }
    outcome(all, format!("{}x{} grid, {} potentials; {}", cfg.grid.nx, cfg.grid.nz, specs.len(), lines.join("; ")))
}

// 2
fn gradient_check() -> Result<Outcome> {
    let grid = Grid2D::new(48, 24, 0.025, 0.025)?.with_water_depth(0.05);
    let bounds = VelocityBounds::new(1.4, 5.0)?;
    let geom = AcquisitionGeometry::surface_line(&grid, 2, 0.025, 0.025, 3, 8.0, 0.0025, 320);
    let fwd = ForwardMap::new(grid.clone(), geom, SolverConfig { sponge_width: 12, ..Default::default() }, bounds)?;
    let truth = scenes::continuous(&grid);
    let start = scenes::smooth(&grid, &truth, 0.1);
    let latent = |v: &[f64]| -> Vec<f64> { v.iter().map(|&c| bounds.latent_from_velocity(c)).collect() };
    let (u_true, u0) = (latent(&truth), latent(&start));
    let y = fwd.predict(&u_true)?;
    let sigma = NormalizerSpec::square_for_amplitude(y.max_abs());
    let active = grid.active_mask();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut pass = true;
    let mut parts = Vec::new();
    for (kind, tol) in [(PotentialKind::L2, 1e-4), (PotentialKind::Hm1, 1e-4), (PotentialKind::M, 1e-4), (PotentialKind::W2, 1e-3)] {
        let spec = PotentialSpec::new(kind, 1.0, kind.needs_normalizer().then_some(sigma))?;
        let pot = Potential::new(spec, y.clone())?;
        let g = pot.eval(&fwd, &u0, true)?.gradient.expect("gradient requested");
        let mut worst: f64 = 0.0;
        for _ in 0..5 {
            // water cells are held fixed by the forward map
            let dir: Vec<f64> = active
                .iter()
                .map(|&a| if a { rng.sample::<f64, _>(StandardNormal) } else { 0.0 })
                .collect();
            let predicted: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
            let mut best = f64::INFINITY;
            for h in [1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5] {
                let up: Vec<f64> = u0.iter().zip(&dir).map(|(a, b)| a + h * b).collect();
                let dn: Vec<f64> = u0.iter().zip(&dir).map(|(a, b)| a - h * b).collect();
                let fd = (pot.eval(&fwd, &up, false)?.value - pot.eval(&fwd, &dn, false)?.value) / (2.0 * h);
                best = best.min((fd - predicted).abs() / predicted.abs());
            }
            worst = worst.max(best);
        }
        pass &= worst < tol;
        parts.push(format!("{} {worst:.1e} (tol {tol:.0e})", kind.label()));
    }
    outcome(pass, format!("max relative error over 5 directions: {}", parts.join(", ")))
}

// 3
fn transport_oracle() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let n_pairs = 200;
    for _ in 0..n_pairs {
        let (n, m) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let xa: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let xb: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
        let wa: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let wb: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..1.0)).collect();
        let ours = w2_sq_measures(
            &Measure1D::Atomic { positions: &xa, weights: &wa },
            &Measure1D::Atomic { positions: &xb, weights: &wb },
        )?;
        let (lp, _) = support::transport_simplex(&xa, &wa, &xb, &wb, &mut rng);
        worst = worst.max((ours.sqrt() - lp.max(0.0).sqrt()).abs());
    }
    outcome(worst <= 1e-6, format!("{n_pairs} pairs, up to 64 atoms each, max |W2 - LP| = {worst:.2e}"))
}

// 4
fn linearization() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let nt = 500;
    let dt = 1.0 / nt as f64;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let f = DensityTrace::new(support::smooth_density(nt, &mut rng), dt)?;
        let h = Trace::new(support::smooth_perturbation(&f.samples, &mut rng), dt)?;
        let t = check_linearization(&f, &h, &[1e-3])?;
        worst = worst.max(t.relative_gaps()[0]);
    }
    outcome(worst < 0.02, format!("20 smooth pairs at eps = 1e-3, max relative gap {:.3}%", 100.0 * worst))
}

// 5
fn equivalence_bounds() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let eps = 0.2;
    let (mut count, mut min_slack) = (0, f64::INFINITY);
    while count < 100 {
        let nt = rng.random_range(8..200);
        let dt = 1.0 / nt as f64;
        let mut make = || {
            let raw: Vec<f64> = (0..nt).map(|_| rng.random_range(0.25..4.0)).collect();
            DensityTrace::from_unnormalized(&raw, dt)
        };
        let (f, g) = (make()?, make()?);
        if f.epsilon() < eps || g.epsilon() < eps {
            continue;
        }
        min_slack = min_slack.min(check_equivalence_bounds(&f, &g)?.slack());
        count += 1;
    }
    outcome(min_slack >= -1e-10, format!("100 pairs with densities >= {eps}, min slack {min_slack:.3e}"))
}

// 6
fn gaussian_formulas() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let mut commuting = true;
    for _ in 0..50 {
        let n = rng.random_range(1..8);
        let q = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)).qr().q();
        let mut cov = || {
            let d = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(0.05..3.0)));
            let m = &q * d * q.transpose();
            (&m + m.transpose()) * 0.5
        };
        let (c1, c2) = (cov(), cov());
        let m1 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let m2 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let (a, b) = (Gaussian::new(m1, c1)?, Gaussian::new(m2, c2)?);
        commuting &= covariances_commute(&a, &b, 1e-10);
        worst = worst.max((gaussian_w2_sq_general(&a, &b)? - gaussian_w2_sq_commuting(&a, &b)?).abs());
    }
    let a = Gaussian::new(DVector::from_element(1, 0.0), DMatrix::from_element(1, 1, 1.0))?;
    let b = Gaussian::new(DVector::from_element(1, 1.0), DMatrix::from_element(1, 1, 4.0))?;
    let scalar = (gaussian_w2(&a, &b)? - 2f64.sqrt()).abs();
    outcome(
        commuting && worst < 1e-9 && scalar < 1e-12,
        format!("50 commuting pairs, max |general - commuting| = {worst:.2e}; N(0,1) vs N(1,4) off by {scalar:.1e}"),
    )
}

// 7
fn laplace_exactness() -> Result<Outcome> {
    let g = Grid2D::new(16, 16, 0.0625, 0.0625)?;
    let prior = MaternPrior::new(&MaternSpec::new(0.8, 2.0, 0.2, MeanSpec::Constant(0.1))?, &g)?;
    let idx: Vec<usize> = [(0.2, 0.3), (0.7, 0.2), (0.5, 0.5), (0.3, 0.8), (0.8, 0.7), (0.1, 0.6)]
        .iter()
        .map(|&(x, z): &(f64, f64)| g.index((x / g.dx) as usize, (z / g.dz) as usize))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let vals: Vec<f64> = idx.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    let obs = PointObservations::new(&prior, idx.clone(), vals.clone(), 0.2, 1.0)?;
    let map = map_estimate(&obs, None, &MapOptions { max_iter: 2000, grad_tol: 1e-11, ..Default::default() })?;
    let opts = LaplaceOptions { max_rank: 20, rel_tol: 0.0, oversampling: 10, power_iters: 1, seed: 3 };
    let approx = laplace(&obs, &map.theta, &opts)?;

    // conjugate update in data space with the dense grid covariance
    let n = g.len();
    let mut c = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        c.set_column(j, &DVector::from_vec(prior.field_jvp(&prior.field_vjp(&e))));
    }
    let k = idx.len();
    let p = DMatrix::from_fn(k, n, |r, col| if idx[r] == col { 1.0 } else { 0.0 });
    let s = &p * &c * p.transpose() + DMatrix::identity(k, k) * 0.04;
    let gain = &c * p.transpose() * s.try_inverse().expect("innovation covariance is SPD");
    let m0 = DVector::from_vec(prior.mean().to_vec());
    let mean = &m0 + &gain * (DVector::from_vec(vals) - &p * &m0);
    let cov = &c - &gain * &p * &c;

    let u = prior.field(&map.theta)?;
    let merr = max_by(u.iter().zip(mean.iter()).map(|(a, b)| (a - b).abs()));
    let mut cerr: f64 = 0.0;
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = prior.field_jvp(&approx.apply_cov(&prior.field_vjp(&e)));
        cerr = cerr.max(max_by((0..n).map(|i| (col[i] - cov[(i, j)]).abs())));
    }
    outcome(merr < 1e-8 && cerr < 1e-8, format!("16x16 grid, 6 point observations: mean error {merr:.1e}, covariance error {cerr:.1e}"))
}

// 8
fn pcn_checks() -> Result<Outcome> {
    let g = Grid2D::new(12, 10, 0.05, 0.05)?;
    let prior = MaternPrior::new(&MaternSpec::new(0.7, 2.0, 0.2, MeanSpec::Constant(0.3))?, &g)?;
    let free = PointObservations::new(&prior, vec![0], vec![0.0], 1.0, 0.0)?;
    let pts = [g.index(2, 3), g.index(6, 6), g.index(10, 8)];
    let cfg = ChainConfig { n_steps: 10_000, burn_in: 500, thin: 100, beta_pcn: 0.4, adapt: false, seed: 12, ..Default::default() };
    let s = run_chain(&free, vec![0.0; prior.dim()], &cfg, |t| {
        let u = prior.field(t).expect("whitened vector has the prior's dimension");
        let mut out: Vec<f64> = pts.iter().map(|&i| u[i]).collect();
        out.extend(pts.iter().map(|&i| (u[i] - 0.3).powi(2)));
        out
    })?;
    let sd2 = prior.pointwise_variance();
    let mut z_max: f64 = 0.0;
    for k in 0..3 {
        z_max = z_max.max((s.mean[k] - 0.3).abs() / s.std_error[k]);
        z_max = z_max.max((s.mean[3 + k] - sd2).abs() / s.std_error[3 + k]);
    }
    let moments_ok = z_max < 3.0 && s.acceptance_rate == 1.0;

    let chain = ChainConfig { n_steps: 3000, burn_in: 500, beta_pcn: 0.25, adapt: false, seed: 8, ..Default::default() };
    let mut rates = Vec::new();
    for n in [32, 64, 128] {
        let h = 1.0 / n as f64;
        let g = Grid2D::new(n, n, h, h)?;
        let prior = MaternPrior::new(&MaternSpec::new(1.0, 2.0, 0.2, MeanSpec::Constant(0.0))?, &g)?;
        let idx: Vec<usize> = [(0.2, 0.3), (0.7, 0.2), (0.5, 0.5), (0.3, 0.8), (0.8, 0.7), (0.1, 0.6)]
            .iter()
            .map(|&(x, z): &(f64, f64)| g.index((x / h) as usize, (z / h) as usize))
            .collect();
        let obs = PointObservations::new(&prior, idx, vec![0.8, -0.5, 0.3, 0.9, -0.2, 0.1], 0.2, 1.0)?;
        rates.push(run_chain(&obs, vec![0.0; prior.dim()], &chain, |_| Vec::new())?.acceptance_rate);
    }
    let spread = rates.iter().cloned().fold(f64::MIN, f64::max) - rates.iter().cloned().fold(f64::MAX, f64::min);
    outcome(
        moments_ok && spread < 0.10,
        format!(
            "zero potential: acceptance {:.2}, max moment z-score {z_max:.2} over 10^4 steps; surrogate acceptance {:.3}/{:.3}/{:.3} on 32²/64²/128² (spread {:.1} points)",
            s.acceptance_rate,
            rates[0],
            rates[1],
            rates[2],
            100.0 * spread
        ),
    )
}

// 9
fn noise_regularity() -> Result<Outcome> {
    let mut ratios = Vec::new();
    for nt in [250, 500, 1000, 2000] {
        let dt = 1.0 / nt as f64;
        let mut y = Seismogram::zeros(1, 3, nt, dt);
        for r in 0..3 {
            for (k, v) in y.trace_mut(0, r).iter_mut().enumerate() {
                let t = k as f64 * dt - 0.3 - 0.1 * r as f64;
                let a = (std::f64::consts::PI * 8.0 * t).powi(2);
                *v = (1.0 - 2.0 * a) * (-a).exp();
            }
        }
        let y = remove_zero_frequency(&y);
        let mut rng = ChaCha8Rng::seed_from_u64(nt as u64);
        let (mut num, mut den) = (0.0, 0.0);
        for _ in 0..32 {
            let (noisy, _) = make_noise(&y, &mut rng, 0.1)?;
            let eta = remove_zero_frequency(&noisy.sub(&y)?);
            for tr in eta.traces() {
                num += hminus1_norm_sq(tr, dt);
                den += tr.iter().map(|v| v * v * dt).sum::<f64>();
            }
        }
        ratios.push((num / den).sqrt());
    }
    let monotone = ratios.windows(2).all(|w| w[1] < w[0]);
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.4}")).collect();
    outcome(monotone, format!("|eta|_Hm1/|eta|_L2 at nt 250/500/1000/2000: {}", shown.join(", ")))
}

// 10
fn salt_scene() -> Result<Outcome> {
    let mut cfg = config("salt.json")?;
    cfg.inference.chain_init = ChainInit::Map;
    let exp = Experiment::new(&cfg)?;
    let clean = exp.simulate()?;
    let specs = exp.potentials(&clean)?;
    let chains = exp.chains(&specs[0], &clean)?;
    let n = cfg.grid.len();
    let bg = bayes_fwi_cli::pipeline::prior_mean_velocity(&cfg)?.expect("salt config sets a background");
    let mask = cfg.grid.active_mask();
    let (mut on_segment, mut pure, mut cells) = (true, 0usize, 0usize);
    let mut salt = Vec::new();
    for c in &chains {
        for s in &c.samples {
            let value = s[n];
            salt.push(value);
            for k in (0..n).filter(|&k| mask[k]) {
                let span = value - bg[k];
                let frac = if span.abs() > 1e-12 { (s[k] - bg[k]) / span } else { 0.0 };
                on_segment &= (-1e-9..=1.0 + 1e-9).contains(&frac);
                pure += usize::from(frac < 1e-3 || frac > 1.0 - 1e-3);
                cells += 1;
            }
        }
    }
    let summary = salt_summary(&salt, &cfg).expect("hierarchical salt prior");
    let mut sorted = salt.clone();
    sorted.sort_by(f64::total_cmp);
    let covers = summary.interval_contains_true == Some(true) && summary.interval_contains_mean;
    let rates: Vec<String> = chains.iter().map(|c| format!("{:.2}", c.acceptance_rate)).collect();
    outcome(
        on_segment && covers,
        format!(
            "{} samples: salt mean {:.3}, 95% interval [{:.3}, {:.3}] (median {:.3}), true 4.79 {}; two-phase: {} ({:.1}% of cells pure); acceptance {}",
            salt.len(),
            summary.mean,
            summary.q025,
            summary.q975,
            quantile(&sorted, 0.5),
            if summary.interval_contains_true == Some(true) { "inside" } else { "outside" },
            if on_segment { "yes" } else { "no" },
            100.0 * pure as f64 / cells.max(1) as f64,
            rates.join("/")
        ),
    )
}

type Criterion = (usize, &'static str, fn() -> Result<Outcome>);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "stability ordering d(L2) > d(W2) > d(Hm1)", stability_ordering),
        (2, "adjoint gradients vs finite differences", gradient_check),
        (3, "1D transport vs network simplex", transport_oracle),
        (4, "W2 linearization", linearization),
        (5, "W2 vs Hm1 two-sided bounds", equivalence_bounds),
        (6, "Gaussian W2 formulas", gaussian_formulas),
        (7, "Laplace exactness", laplace_exactness),
        (8, "pCN correctness and dimension robustness", pcn_checks),
        (9, "white-noise regularity", noise_regularity),
        (10, "salt scene", salt_scene),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let (mut passed, mut run) = (0, 0);
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let (pass, detail) = match f() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        run += 1;
        passed += usize::from(pass);
        println!("{} [{id:>2}] {name}: {detail} ({:.1} s)", if pass { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64());
    }
    println!("acceptance: {passed}/{run} criteria passed");
    if strict && passed < run {
        std::process::exit(1);
    }
}
