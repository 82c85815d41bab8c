//! Built-in true models. Both are procedural stand-ins for the continuous
//! and salt benchmarks; neither reproduces a published field.

use bayes_fwi::grid_wave::{Grid2D, VelocityBounds};
use bayes_fwi::{FwiError, Result};

use crate::config::Scene;

/// Velocity of the salt body, km/s.
pub const SALT_VELOCITY: f64 = 4.79;

pub const WATER_VELOCITY: f64 = 1.5;

/// Depth below the water layer as a fraction of the sediment column.
fn sediment_depth(grid: &Grid2D, z: f64) -> f64 {
    let (_, lz) = grid.extent();
    let top = grid.origin.1 + grid.water_depth;
    let bottom = grid.origin.1 + lz;
    if bottom <= top {
        return 0.0;
    }
    ((z - top) / (bottom - top)).clamp(0.0, 1.0)
}

fn fill<F: Fn(f64, f64) -> f64>(grid: &Grid2D, water: f64, f: F) -> Vec<f64> {
    let mask = grid.active_mask();
    (0..grid.len())
        .map(|k| {
            if !mask[k] {
                return water;
            }
            let (x, z) = grid.coords(k % grid.nx, k / grid.nx);
            f(x, z)
        })
        .collect()
}

pub fn layered(grid: &Grid2D, v_top: f64, v_bottom: f64, water_velocity: f64) -> Vec<f64> {
    fill(grid, water_velocity, |_, z| v_top + (v_bottom - v_top) * sediment_depth(grid, z))
}

/// Gaussian blur of `v` restricted to the sediment cells (weights
/// renormalized near the water and the edges); water cells are copied.
pub fn smooth(grid: &Grid2D, v: &[f64], length: f64) -> Vec<f64> {
    if length == 0.0 {
        return v.to_vec();
    }
    let mask = grid.active_mask();
    let rx = (3.0 * length / grid.dx).ceil() as isize;
    let rz = (3.0 * length / grid.dz).ceil() as isize;
    let mut out = v.to_vec();
    for iz in 0..grid.nz {
        for ix in 0..grid.nx {
            let k = grid.index(ix, iz);
            if !mask[k] {
                continue;
            }
            let (mut acc, mut wsum) = (0.0, 0.0);
            for dz in -rz..=rz {
                for dx in -rx..=rx {
                    let (jx, jz) = (ix as isize + dx, iz as isize + dz);
                    if jx < 0 || jz < 0 || jx >= grid.nx as isize || jz >= grid.nz as isize {
                        continue;
                    }
                    let j = grid.index(jx as usize, jz as usize);
                    if !mask[j] {
                        continue;
                    }
                    let d2 = (dx as f64 * grid.dx).powi(2) + (dz as f64 * grid.dz).powi(2);
                    let w = (-0.5 * d2 / (length * length)).exp();
                    acc += w * v[j];
                    wsum += w;
                }
            }
            out[k] = acc / wsum;
        }
    }
    out
}

fn logistic(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}

/// Gradient with two smoothed interfaces and a Gaussian fast anomaly.
pub fn continuous(grid: &Grid2D) -> Vec<f64> {
    let (lx, lz) = grid.extent();
    let (cx, cz) = (grid.origin.0 + 0.62 * lx, grid.origin.1 + 0.55 * lz);
    let r = 0.08 * lx.max(lz);
    fill(grid, WATER_VELOCITY, |x, z| {
        let s = sediment_depth(grid, z);
        let layers = 0.3 * logistic((s - 0.35) / 0.03) + 0.3 * logistic((s - 0.7) / 0.03);
        let anomaly = 0.5 * (-((x - cx).powi(2) + (z - cz).powi(2)) / (2.0 * r * r)).exp();
        2.0 + 1.0 * s + layers + anomaly
    })
}

/// Vertices of the salt outline: a lobed star-shaped polygon.
pub fn salt_polygon(grid: &Grid2D) -> Vec<(f64, f64)> {
    let (lx, lz) = grid.extent();
    let (cx, cz) = (grid.origin.0 + 0.5 * lx, grid.origin.1 + grid.water_depth + 0.5 * (lz - grid.water_depth));
    let (rx, rz) = (0.2 * lx, 0.22 * (lz - grid.water_depth));
    (0..11)
        .map(|i| {
            let phi = 2.0 * std::f64::consts::PI * i as f64 / 11.0;
            let r = 1.0 + 0.22 * (3.0 * phi).cos() + 0.1 * (2.0 * phi).sin();
            (cx + rx * r * phi.cos(), cz + rz * r * phi.sin())
        })
        .collect()
}

/// Even-odd rule.
pub fn inside_polygon(poly: &[(f64, f64)], x: f64, z: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, zi) = poly[i];
        let (xj, zj) = poly[j];
        if (zi > z) != (zj > z) && x < (xj - xi) * (z - zi) / (zj - zi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Salt body at [`SALT_VELOCITY`] over a 2.0 to 3.5 km/s gradient.
pub fn salt(grid: &Grid2D) -> Vec<f64> {
    let poly = salt_polygon(grid);
    fill(grid, WATER_VELOCITY, |x, z| {
        if inside_polygon(&poly, x, z) {
            SALT_VELOCITY
        } else {
            2.0 + 1.5 * sediment_depth(grid, z)
        }
    })
}

pub fn build(scene: Scene, grid: &Grid2D, bounds: &VelocityBounds) -> Result<Vec<f64>> {
    let v = match scene {
        Scene::Continuous => continuous(grid),
        Scene::Salt => salt(grid),
    };
    check_bounds(&v, bounds)?;
    Ok(v)
}

pub fn check_bounds(v: &[f64], bounds: &VelocityBounds) -> Result<()> {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(lo > bounds.v_min && hi < bounds.v_max) {
        return Err(FwiError::Config(format!(
            "true model spans [{lo}, {hi}] km/s, outside the open velocity bounds ({}, {})",
            bounds.v_min, bounds.v_max
        )));
    }
    Ok(())
}
