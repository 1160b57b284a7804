//! Density (pressure) field consistent with a prescribed velocity field.
//!
//! A steady LBM state is fixed by its density and velocity. A predicted
//! velocity field alone leaves the density at `ρ0`, and relaxing the missing
//! pressure field then takes about as long as a start from rest. This
//! module solves for the density under which the prescribed velocity is as
//! close to stationary as possible.
//!
//! With the velocity held fixed, the state after one step is affine in the
//! initial density. Writing `r` for the change of mass and of momentum
//! (relative to the prescribed velocity) over one step, the reconstruction
//! solves `min ‖J (ρ - ρ0) + r(ρ0)‖₂` where `J` is the density Jacobian at
//! rest. `J` is a 3×3 stencil operator (the lattice pressure gradient and
//! its mass counterpart) and is assembled exactly from a few probe steps.
//! The mean density of every connected pore cluster is kept at `ρ0`.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::geometry::StructureGrid;
use crate::lbm::{init_warm_with_density, LbmParams, VelocityField, E, Q};

/// Residual rows per node: mass, x-momentum, y-momentum.
const ROWS: usize = 3;
const MAX_CG_FACTOR: usize = 20;
const CG_TOLERANCE: f64 = 1e-24;
const MAX_CORRECTIONS: usize = 4;
const CORRECTION_TOLERANCE: f64 = 1e-9;

/// One-step residual of the state built from `(density, field)`; zero rows
/// on solid nodes.
fn step_residual(
    grid: &StructureGrid,
    field: &VelocityField,
    density: &[f64],
    params: &LbmParams,
) -> Result<Vec<f64>> {
    let mut state = init_warm_with_density(grid, field, density, params)?;
    state.step()?;
    let f = state.distributions();
    let [gx, gy] = params.force;
    let mut r = vec![0.0; ROWS * grid.cell_count()];
    for (node, _) in grid.solid().iter().enumerate().filter(|(_, s)| !**s) {
        let cell = &f[node * Q..node * Q + Q];
        let (mut rho, mut jx, mut jy) = (0.0, 0.0, 0.0);
        for i in 0..Q {
            rho += cell[i];
            jx += E[i][0] as f64 * cell[i];
            jy += E[i][1] as f64 * cell[i];
        }
        r[ROWS * node] = rho - density[node];
        r[ROWS * node + 1] = jx - rho * (field.ux()[node] - 0.5 * gx);
        r[ROWS * node + 2] = jy - rho * (field.uy()[node] - 0.5 * gy);
    }
    Ok(r)
}

/// Sparse columns of the density Jacobian, one per node (empty on solids).
struct Jacobian {
    columns: Vec<Vec<(usize, f64)>>,
}

impl Jacobian {
    fn assemble(grid: &StructureGrid, params: &LbmParams) -> Result<Self> {
        let size = grid.size();
        let n = grid.cell_count();
        let rest = VelocityField::zeros(size);
        let base = vec![params.rho0; n];
        let r0 = step_residual(grid, &rest, &base, params)?;
        // nodes probed together must be >= 3 apart on the torus
        let period = (3..=size).find(|p| size.is_multiple_of(*p)).unwrap_or(size);
        let solid = grid.solid();
        let mut columns = vec![Vec::new(); n];
        for py in 0..period {
            for px in 0..period {
                let mut density = base.clone();
                for y in (py..size).step_by(period) {
                    for x in (px..size).step_by(period) {
                        density[y * size + x] += params.rho0;
                    }
                }
                let r = step_residual(grid, &rest, &density, params)?;
                for y in (py..size).step_by(period) {
                    for x in (px..size).step_by(period) {
                        let node = y * size + x;
                        if solid[node] {
                            continue;
                        }
                        for dy in [size - 1, 0, 1] {
                            for dx in [size - 1, 0, 1] {
                                let t = ((y + dy) % size) * size + (x + dx) % size;
                                if solid[t] {
                                    continue;
                                }
                                for k in 0..ROWS {
                                    let v = (r[ROWS * t + k] - r0[ROWS * t + k]) / params.rho0;
                                    if v != 0.0 {
                                        columns[node].push((ROWS * t + k, v));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(Self { columns })
    }

    fn apply(&self, d: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (col, &dv) in self.columns.iter().zip(d) {
            if dv != 0.0 {
                for &(row, v) in col {
                    out[row] += v * dv;
                }
            }
        }
    }

    fn apply_transpose(&self, r: &[f64], out: &mut [f64]) {
        for (o, col) in out.iter_mut().zip(&self.columns) {
            *o = col.iter().map(|&(row, v)| v * r[row]).sum();
        }
    }
}

/// Pore clusters under the D2Q9 links (8-neighbourhood, periodic).
pub fn pore_clusters(grid: &StructureGrid) -> Vec<Vec<usize>> {
    let size = grid.size() as i64;
    let solid = grid.solid();
    let mut seen = vec![false; grid.cell_count()];
    let mut clusters = Vec::new();
    for start in 0..grid.cell_count() {
        if solid[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut members = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            let (x, y) = ((node as i64) % size, (node as i64) / size);
            for e in &E[1..] {
                let nx = (x + e[0] as i64).rem_euclid(size);
                let ny = (y + e[1] as i64).rem_euclid(size);
                let next = (ny * size + nx) as usize;
                if !solid[next] && !seen[next] {
                    seen[next] = true;
                    members.push(next);
                    queue.push_back(next);
                }
            }
        }
        clusters.push(members);
    }
    clusters
}

fn remove_cluster_means(v: &mut [f64], clusters: &[Vec<usize>]) {
    for c in clusters {
        let mean = c.iter().map(|&i| v[i]).sum::<f64>() / c.len() as f64;
        for &i in c {
            v[i] -= mean;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Density field under which `field` is closest to a steady state.
///
/// Solids are set to `ρ0`. A field that vanishes on every pore node carries
/// no flow information and yields the uniform `ρ0`.
pub fn reconstruct_density(grid: &StructureGrid, field: &VelocityField, params: &LbmParams) -> Result<Vec<f64>> {
    params.validate()?;
    field.check_size(grid.size(), "density reconstruction")?;
    if !field.is_finite() {
        return Err(Error::data("velocity field contains non-finite values"));
    }
    let n = grid.cell_count();
    let solid = grid.solid();
    let base = vec![params.rho0; n];
    let moving = (0..n).any(|i| !solid[i] && (field.ux()[i] != 0.0 || field.uy()[i] != 0.0));
    if !moving {
        return Ok(base);
    }

    let jac = Jacobian::assemble(grid, params)?;
    let clusters = pore_clusters(grid);
    // The true residual is affine in the density with a Jacobian that
    // differs from the rest-state one by O(|u|); defect correction removes
    // the linearization error.
    let mut density = base;
    let mut scale = None;
    for pass in 0..MAX_CORRECTIONS {
        let b = step_residual(grid, field, &density, params)?;
        let delta = least_squares(&jac, &clusters, &b, grid.pore_count(), &mut scale);
        let step = dot(&delta, &delta).sqrt();
        for (r, d) in density.iter_mut().zip(&delta) {
            *r += d;
        }
        let offset: f64 = density.iter().map(|r| (r - params.rho0).powi(2)).sum::<f64>().sqrt();
        log::debug!("density correction {pass}: |delta| = {step:e}");
        if step <= CORRECTION_TOLERANCE * offset {
            break;
        }
    }
    if density.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
        return Err(Error::data("velocity field implies a non-physical density"));
    }
    Ok(density)
}

/// CGLS for `min ‖J d + b‖` over updates with zero mean on every cluster.
///
/// The stopping threshold is relative to the first solve's initial
/// normal-equation residual (`scale`), so correction passes stop at the
/// same absolute accuracy instead of chasing round-off.
fn least_squares(
    jac: &Jacobian,
    clusters: &[Vec<usize>],
    b: &[f64],
    pores: usize,
    scale: &mut Option<f64>,
) -> Vec<f64> {
    let n = jac.columns.len();
    let mut d = vec![0.0; n];
    let mut residual: Vec<f64> = b.iter().map(|v| -v).collect();
    let mut s = vec![0.0; n];
    jac.apply_transpose(&residual, &mut s);
    remove_cluster_means(&mut s, clusters);
    let mut p = s.clone();
    let mut q = vec![0.0; b.len()];
    let mut gamma = dot(&s, &s);
    let threshold = CG_TOLERANCE * *scale.get_or_insert(gamma);
    let max_iter = MAX_CG_FACTOR * pores.max(1);
    let mut iterations = 0;
    while gamma > threshold && iterations < max_iter {
        jac.apply(&p, &mut q);
        let qq = dot(&q, &q);
        if qq == 0.0 {
            break;
        }
        let alpha = gamma / qq;
        for (di, pi) in d.iter_mut().zip(&p) {
            *di += alpha * pi;
        }
        for (ri, qi) in residual.iter_mut().zip(&q) {
            *ri -= alpha * qi;
        }
        jac.apply_transpose(&residual, &mut s);
        remove_cluster_means(&mut s, clusters);
        let next = dot(&s, &s);
        let beta = next / gamma;
        gamma = next;
        for (pi, si) in p.iter_mut().zip(&s) {
            *pi = si + beta * *pi;
        }
        iterations += 1;
    }
    log::trace!("least squares: {iterations} CG iterations");
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::add_pipe_walls;
    use crate::lbm::init_cold;

    #[test]
    fn zero_field_gives_uniform_density() {
        let grid = add_pipe_walls(&StructureGrid::empty(16), 2, false).unwrap();
        let p = LbmParams::default();
        let d = reconstruct_density(&grid, &VelocityField::zeros(16), &p).unwrap();
        assert!(d.iter().all(|r| *r == p.rho0));
    }

    #[test]
    fn clusters_follow_diagonal_links() {
        // two pores touching only at a corner form one cluster
        let mut solid = vec![true; 64];
        solid[0] = false;
        solid[9] = false;
        solid[36] = false;
        let grid = StructureGrid::from_solid(8, solid).unwrap();
        let mut sizes: Vec<usize> = pore_clusters(&grid).iter().map(Vec::len).collect();
        sizes.sort();
        assert_eq!(sizes, vec![1, 2]);
    }

    #[test]
    fn recovers_converged_density() {
        let mut solid = vec![false; 24 * 24];
        for y in 8..14 {
            for x in 6..12 {
                solid[y * 24 + x] = true;
            }
        }
        let grid = StructureGrid::from_solid(24, solid).unwrap();
        let p = LbmParams {
            tol: 1e-11,
            ..LbmParams::default()
        };
        let mut state = init_cold(&grid, &p).unwrap();
        state.run_to_convergence().unwrap();
        let (rho, u) = state.moments().unwrap();
        let mean: f64 = (0..rho.len()).filter(|i| !grid.solid()[*i]).map(|i| rho[i]).sum::<f64>()
            / grid.pore_count() as f64;
        let spread = (0..rho.len())
            .filter(|i| !grid.solid()[*i])
            .map(|i| (rho[i] - mean).abs())
            .fold(0.0, f64::max);
        let d = reconstruct_density(&grid, &u, &p).unwrap();
        for i in (0..rho.len()).filter(|i| !grid.solid()[*i]) {
            assert!(((d[i] - p.rho0) - (rho[i] - mean)).abs() < 1e-6 * spread, "node {i}");
        }
    }
}
