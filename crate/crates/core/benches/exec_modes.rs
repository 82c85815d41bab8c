use bayes_fwi::grid_wave::{AcquisitionGeometry, Grid2D, SolverConfig, VelocityBounds};
use bayes_fwi::inference::{run_chains, ChainConfig, PointObservations};
use bayes_fwi::posterior_metrics::hellinger_is;
use bayes_fwi::potentials::{ForwardMap, Potential, PotentialKind, PotentialSpec};
use bayes_fwi::priors::{MaternPrior, MaternSpec, MeanSpec};
use bayes_fwi::Exec;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn forward_map(exec: Exec) -> ForwardMap {
    let grid = Grid2D::new(64, 32, 0.02, 0.02).unwrap().with_water_depth(0.06);
    let geom = AcquisitionGeometry::surface_line(&grid, 4, 0.02, 0.02, 2, 8.0, 0.002, 400);
    let cfg = SolverConfig { sponge_width: 12, exec, ..Default::default() };
    ForwardMap::new(grid, geom, cfg, VelocityBounds::new(1.4, 5.0).unwrap()).unwrap()
}

fn wave_solves(c: &mut Criterion) {
    let mut group = c.benchmark_group("misfit_gradient_4_sources");
    group.sample_size(10);
    for (name, exec) in MODES {
        let fwd = forward_map(exec);
        let n = fwd.grid().len();
        let u_true: Vec<f64> = (0..n).map(|k| -0.2 + 0.1 * ((k % 64) as f64 / 64.0)).collect();
        let u0 = vec![-0.2; n];
        let y = fwd.predict(&u_true).unwrap();
        let pot = Potential::new(PotentialSpec::new(PotentialKind::L2, 1.0, None).unwrap(), y).unwrap();
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(pot.eval(&fwd, &u0, true).unwrap().value))
        });
    }
    group.finish();
}

fn chains(c: &mut Criterion) {
    let h = 1.0 / 32.0;
    let grid = Grid2D::new(32, 32, h, h).unwrap();
    let prior = MaternPrior::new(&MaternSpec::new(1.0, 2.0, 0.2, MeanSpec::Constant(0.0)).unwrap(), &grid).unwrap();
    let idx = vec![grid.index(5, 7), grid.index(20, 11), grid.index(16, 16), grid.index(9, 25)];
    let obs = PointObservations::new(&prior, idx, vec![0.5, -0.3, 0.2, 0.8], 0.2, 1.0).unwrap();
    let configs: Vec<ChainConfig> =
        (0..4).map(|s| ChainConfig { n_steps: 400, burn_in: 100, seed: s, ..Default::default() }).collect();
    let init = vec![0.0; prior.dim()];
    let mut group = c.benchmark_group("pcn_4_chains");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(run_chains(&obs, &init, &configs, |t| t[..4].to_vec(), exec).unwrap()))
        });
    }
    group.finish();
}

fn importance_sampling(c: &mut Criterion) {
    let dim = 200;
    let potentials = |t: &[f64]| {
        let s: f64 = t.iter().take(20).map(|x| (x - 0.3).powi(2)).sum();
        let r: f64 = t.iter().take(20).map(|x| (x + 0.1).powi(2)).sum();
        Ok((0.5 * s, 0.5 * r))
    };
    let mut group = c.benchmark_group("hellinger_is_4000");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(hellinger_is(dim, 4000, 1, exec, potentials).unwrap().distance))
        });
    }
    group.finish();
}

criterion_group!(benches, wave_solves, chains, importance_sampling);
criterion_main!(benches);
