//! Independent reference computations shared by integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

/// Exact discrete optimal transport with cost `|x − y|²` by the
/// transportation simplex (MODI pivoting), started from a north-west corner
/// solution on a shuffled atom order. Returns the optimal cost and the
/// largest dual infeasibility `max(0, u_i + v_j − c_ij)` at termination.
pub fn transport_simplex<R: Rng>(
    xa: &[f64],
    wa: &[f64],
    xb: &[f64],
    wb: &[f64],
    rng: &mut R,
) -> (f64, f64) {
    let mut ia: Vec<usize> = (0..xa.len()).collect();
    let mut ib: Vec<usize> = (0..xb.len()).collect();
    ia.shuffle(rng);
    ib.shuffle(rng);
    let sa: f64 = wa.iter().sum();
    let sb: f64 = wb.iter().sum();
    let a: Vec<f64> = ia.iter().map(|&i| wa[i] / sa).collect();
    let b: Vec<f64> = ib.iter().map(|&j| wb[j] / sb).collect();
    let (n, m) = (a.len(), b.len());
    let c = |i: usize, j: usize| (xa[ia[i]] - xb[ib[j]]).powi(2);

    let mut flow = vec![vec![0.0; m]; n];
    let mut basic = vec![vec![false; m]; n];
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0], b[0]);
    loop {
        let q = ra.min(rb);
        flow[i][j] = q;
        basic[i][j] = true;
        if i == n - 1 && j == m - 1 {
            break;
        }
        if (ra < rb || j == m - 1) && i < n - 1 {
            rb -= q;
            i += 1;
            ra = a[i];
        } else {
            ra -= q;
            j += 1;
            rb = b[j];
        }
    }

    for _ in 0..100_000 {
        // potentials from the spanning tree: u_i + v_j = c_ij on basic cells
        let mut u = vec![f64::NAN; n];
        let mut v = vec![f64::NAN; m];
        u[0] = 0.0;
        let mut changed = true;
        while changed {
            changed = false;
            for i in 0..n {
                for j in 0..m {
                    if basic[i][j] {
                        if u[i].is_nan() && !v[j].is_nan() {
                            u[i] = c(i, j) - v[j];
                            changed = true;
                        } else if v[j].is_nan() && !u[i].is_nan() {
                            v[j] = c(i, j) - u[i];
                            changed = true;
                        }
                    }
                }
            }
        }
        let mut best = (-1e-14, usize::MAX, usize::MAX);
        for i in 0..n {
            for j in 0..m {
                let red = c(i, j) - u[i] - v[j];
                if !basic[i][j] && red < best.0 {
                    best = (red, i, j);
                }
            }
        }
        if best.1 == usize::MAX {
            let cost: f64 = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| flow[i][j] * c(i, j)).sum();
            let infeas = (0..n)
                .flat_map(|i| (0..m).map(move |j| (i, j)))
                .map(|(i, j)| (u[i] + v[j] - c(i, j)).max(0.0))
                .fold(0.0, f64::max);
            return (cost, infeas);
        }
        let (_, ei, ej) = best;
        // tree path from column ej to row ei; nodes: rows 0..n, columns n..n+m
        let mut parent = vec![usize::MAX; n + m];
        let mut queue = std::collections::VecDeque::new();
        parent[n + ej] = n + ej;
        queue.push_back(n + ej);
        while let Some(node) = queue.pop_front() {
            if node == ei {
                break;
            }
            if node >= n {
                let col = node - n;
                for r in 0..n {
                    if basic[r][col] && parent[r] == usize::MAX {
                        parent[r] = node;
                        queue.push_back(r);
                    }
                }
            } else {
                for col in 0..m {
                    if basic[node][col] && parent[n + col] == usize::MAX {
                        parent[n + col] = node;
                        queue.push_back(n + col);
                    }
                }
            }
        }
        // cells along the path, alternating − (first) and +
        let mut cells = Vec::new();
        let mut node = ei;
        while node != n + ej {
            let p = parent[node];
            let cell = if node < n { (node, p - n) } else { (p, node - n) };
            cells.push(cell);
            node = p;
        }
        let (mut theta, mut leave) = (f64::INFINITY, 0);
        for (k, &(r, col)) in cells.iter().enumerate() {
            if k % 2 == 0 && flow[r][col] < theta {
                theta = flow[r][col];
                leave = k;
            }
        }
        flow[ei][ej] += theta;
        basic[ei][ej] = true;
        for (k, &(r, col)) in cells.iter().enumerate() {
            if k % 2 == 0 {
                flow[r][col] -= theta;
            } else {
                flow[r][col] += theta;
            }
        }
        let (lr, lc) = cells[leave];
        basic[lr][lc] = false;
        flow[lr][lc] = 0.0;
    }
    panic!("transportation simplex did not converge");
}

/// `sup {Σ hᵢφᵢfᵢdt : Σ f̄ (Δφ)²/dt ≤ 1}` on the cell graph, by dense
/// pseudo-inverse of the weighted graph Laplacian: `sqrt(bᵀA⁺b)`.
pub fn weighted_hm1_dense(h: &[f64], f: &[f64], dt: f64) -> f64 {
    let n = h.len();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        let w = 0.5 * (f[i] + f[i + 1]) / dt;
        a[(i, i)] += w;
        a[(i + 1, i + 1)] += w;
        a[(i, i + 1)] -= w;
        a[(i + 1, i)] -= w;
    }
    let b = DVector::from_iterator(n, h.iter().zip(f).map(|(x, y)| x * y * dt));
    let pinv = a.pseudo_inverse(1e-12).unwrap();
    b.dot(&(pinv * &b)).sqrt()
}

/// Principal square root of an SPD matrix by the Denman–Beavers iteration.
pub fn sqrtm_denman_beavers(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = DMatrix::identity(n, n);
    for _ in 0..100 {
        let yi = y.clone().try_inverse().unwrap();
        let zi = z.clone().try_inverse().unwrap();
        let ny = (&y + zi) * 0.5;
        let nz = (&z + yi) * 0.5;
        let diff = (&ny - &y).norm();
        y = ny;
        z = nz;
        if diff < 1e-15 * y.norm() {
            break;
        }
    }
    y
}

pub fn random_spd<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &b * b.transpose() + DMatrix::identity(n, n) * 0.1
}

/// Cell averages of a smooth positive profile on `[0, 1]`, normalized.
pub fn smooth_density<R: Rng>(nt: usize, rng: &mut R) -> Vec<f64> {
    let dt = 1.0 / nt as f64;
    let k1 = rng.random_range(1..4) as f64;
    let k2 = rng.random_range(1..4) as f64;
    let (p1, p2) = (rng.random_range(0.0..6.3), rng.random_range(0.0..6.3));
    let (a1, a2) = (rng.random_range(0.0..0.4), rng.random_range(0.0..0.3));
    let vals: Vec<f64> = (0..nt)
        .map(|i| {
            let t = (i as f64 + 0.5) * dt;
            1.0 + a1 * (2.0 * std::f64::consts::PI * k1 * t + p1).sin() + a2 * (std::f64::consts::PI * k2 * t + p2).cos()
        })
        .collect();
    let mass: f64 = vals.iter().sum::<f64>() * dt;
    vals.iter().map(|v| v / mass).collect()
}

/// Smooth perturbation with zero `f`-weighted mean and `|h| ≤ 1`.
pub fn smooth_perturbation<R: Rng>(f: &[f64], rng: &mut R) -> Vec<f64> {
    let nt = f.len();
    let dt = 1.0 / nt as f64;
    let coeffs: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut h: Vec<f64> = (0..nt)
        .map(|i| {
            let t = (i as f64 + 0.5) * dt;
            coeffs.iter().enumerate().map(|(k, c)| c * ((k + 1) as f64 * std::f64::consts::PI * t).cos()).sum()
        })
        .collect();
    let wm: f64 = h.iter().zip(f).map(|(a, b)| a * b).sum::<f64>() * dt;
    h.iter_mut().for_each(|v| *v -= wm);
    let s = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    h.iter_mut().for_each(|v| *v /= s);
    h
}
