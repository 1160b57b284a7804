//! D2Q9 BGK lattice Boltzmann solver for body-force driven flow on a torus.
//!
//! Each step collides pore nodes toward the second-order equilibrium with a
//! Guo forcing source, reverses the populations held by solid nodes
//! (full-way bounce-back), and streams everything periodically. The no-slip
//! plane therefore sits half a lattice spacing inside the pore/solid
//! boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{percolates, Axis, StructureGrid};

pub const Q: usize = 9;

/// Lattice velocities: rest, four axis links, four diagonals.
pub const E: [[i32; 2]; Q] = [
    [0, 0],
    [1, 0],
    [0, 1],
    [-1, 0],
    [0, -1],
    [1, 1],
    [-1, 1],
    [-1, -1],
    [1, -1],
];

pub const W: [f64; Q] = [
    4.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
];

pub const OPPOSITE: [usize; Q] = [0, 3, 4, 1, 2, 7, 8, 5, 6];

/// Warm-start velocities are clamped to this speed.
pub const WARM_SPEED_LIMIT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbmParams {
    /// BGK relaxation time.
    pub tau: f64,
    /// Body-force acceleration; the force density is `ρ g`.
    pub force: [f64; 2],
    pub rho0: f64,
    /// Relative velocity-change tolerance between convergence checks.
    pub tol: f64,
    pub check_interval: u64,
    pub max_iters: u64,
}

impl Default for LbmParams {
    fn default() -> Self {
        Self {
            tau: 1.0,
            force: [1e-6, 0.0],
            rho0: 1.0,
            tol: 1e-8,
            check_interval: 100,
            max_iters: 1_000_000,
        }
    }
}

impl LbmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.5) || !self.tau.is_finite() {
            return Err(Error::param(format!(
                "relaxation time {} must exceed 0.5",
                self.tau
            )));
        }
        if !self.force.iter().all(|g| g.is_finite()) {
            return Err(Error::param("body force must be finite"));
        }
        if !(self.rho0 > 0.0) || !self.rho0.is_finite() {
            return Err(Error::param(format!("reference density {} must be positive", self.rho0)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::param(format!("tolerance {} must be positive", self.tol)));
        }
        if self.check_interval == 0 {
            return Err(Error::param("check interval must be at least 1"));
        }
        Ok(())
    }

    /// Kinematic viscosity `(τ - 1/2) / 3`.
    pub fn viscosity(&self) -> f64 {
        (self.tau - 0.5) / 3.0
    }

    /// Dynamic viscosity `ρ0 ν`.
    pub fn dynamic_viscosity(&self) -> f64 {
        self.rho0 * self.viscosity()
    }
}

/// Two-component velocity field in lattice units, zero on solid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    size: usize,
    ux: Vec<f64>,
    uy: Vec<f64>,
}

impl VelocityField {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            ux: vec![0.0; size * size],
            uy: vec![0.0; size * size],
        }
    }

    pub fn new(size: usize, ux: Vec<f64>, uy: Vec<f64>) -> Result<Self> {
        if ux.len() != size * size || uy.len() != size * size {
            return Err(Error::data(format!(
                "velocity planes must hold {} values (got {} and {})",
                size * size,
                ux.len(),
                uy.len()
            )));
        }
        Ok(Self { size, ux, uy })
    }

    pub fn from_fn(size: usize, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> Self {
        let mut field = Self::zeros(size);
        for y in 0..size {
            for x in 0..size {
                let (a, b) = f(x, y);
                field.ux[y * size + x] = a;
                field.uy[y * size + x] = b;
            }
        }
        field
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn ux(&self) -> &[f64] {
        &self.ux
    }

    pub fn uy(&self) -> &[f64] {
        &self.uy
    }

    pub fn ux_mut(&mut self) -> &mut [f64] {
        &mut self.ux
    }

    pub fn uy_mut(&mut self) -> &mut [f64] {
        &mut self.uy
    }

    pub fn into_planes(self) -> (Vec<f64>, Vec<f64>) {
        (self.ux, self.uy)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.size + x;
        (self.ux[i], self.uy[i])
    }

    #[inline]
    pub fn speed_at(&self, i: usize) -> f64 {
        self.ux[i].hypot(self.uy[i])
    }

    pub fn is_finite(&self) -> bool {
        self.ux.iter().chain(&self.uy).all(|v| v.is_finite())
    }

    /// Sets both components to exactly zero on solid cells.
    pub fn mask_solids(&mut self, grid: &StructureGrid) {
        for (i, &s) in grid.solid().iter().enumerate() {
            if s {
                self.ux[i] = 0.0;
                self.uy[i] = 0.0;
            }
        }
    }

    /// Mean of `ux² + uy²` over the whole domain.
    pub fn mean_square(&self) -> f64 {
        let sum: f64 = self
            .ux
            .iter()
            .zip(&self.uy)
            .map(|(a, b)| a * a + b * b)
            .sum();
        sum / self.ux.len() as f64
    }

    pub(crate) fn check_size(&self, size: usize, what: &str) -> Result<()> {
        if self.size != size {
            return Err(Error::data(format!(
                "{what}: field size {} does not match {}",
                self.size, size
            )));
        }
        Ok(())
    }
}

/// Second-order D2Q9 equilibrium populations.
#[inline]
pub fn equilibrium(rho: f64, u: [f64; 2]) -> [f64; Q] {
    let usq = u[0] * u[0] + u[1] * u[1];
    let mut feq = [0.0; Q];
    for i in 0..Q {
        let eu = E[i][0] as f64 * u[0] + E[i][1] as f64 * u[1];
        feq[i] = W[i] * rho * (1.0 + 3.0 * eu + 4.5 * eu * eu - 1.5 * usq);
    }
    feq
}

#[derive(Debug, Clone)]
pub struct LbmState {
    grid: StructureGrid,
    params: LbmParams,
    f: Vec<f64>,
    scratch: Vec<f64>,
    iteration: u64,
}

/// Rest-state start: `moments()` reports `ρ0` and zero velocity everywhere.
pub fn init_cold(grid: &StructureGrid, params: &LbmParams) -> Result<LbmState> {
    init_warm(grid, &VelocityField::zeros(grid.size()), params)
}

/// Equilibrium start around a prescribed velocity on pore nodes (speeds
/// above [`WARM_SPEED_LIMIT`] are scaled down to it); solids start at rest
/// apart from populations streamed in from pore neighbours. Pore populations are shifted by `-g/2` so that `moments()` of the new
/// state returns the prescribed field.
pub fn init_warm(grid: &StructureGrid, field: &VelocityField, params: &LbmParams) -> Result<LbmState> {
    init_state(grid, field, None, params)
}

/// [`init_warm`] with a per-node density in place of `ρ0` on pore nodes
/// (see [`crate::pressure::reconstruct_density`]).
pub fn init_warm_with_density(
    grid: &StructureGrid,
    field: &VelocityField,
    density: &[f64],
    params: &LbmParams,
) -> Result<LbmState> {
    if density.len() != grid.cell_count() {
        return Err(Error::param(format!(
            "density has {} entries for {} nodes",
            density.len(),
            grid.cell_count()
        )));
    }
    if density.iter().zip(grid.solid()).any(|(r, s)| !s && !(*r > 0.0 && r.is_finite())) {
        return Err(Error::data("warm density must be positive and finite on pore nodes"));
    }
    init_state(grid, field, Some(density), params)
}

fn init_state(
    grid: &StructureGrid,
    field: &VelocityField,
    density: Option<&[f64]>,
    params: &LbmParams,
) -> Result<LbmState> {
    params.validate()?;
    if field.size() != grid.size() {
        return Err(Error::param(format!(
            "warm field size {} does not match grid size {}",
            field.size(),
            grid.size()
        )));
    }
    if !field.is_finite() {
        return Err(Error::data("warm field contains non-finite values"));
    }
    if !percolates(grid, Axis::X) {
        return Err(Error::NotPercolating);
    }
    let n = grid.cell_count();
    let mut f = vec![0.0; n * Q];
    let rest = equilibrium(params.rho0, [0.0, 0.0]);
    for (i, cell) in f.chunks_exact_mut(Q).enumerate() {
        if grid.solid()[i] {
            cell.copy_from_slice(&rest);
            continue;
        }
        let mut u = [field.ux()[i], field.uy()[i]];
        let speed = u[0].hypot(u[1]);
        if speed > WARM_SPEED_LIMIT {
            let scale = WARM_SPEED_LIMIT / speed;
            u = [u[0] * scale, u[1] * scale];
        }
        // population velocity whose force-corrected moment is exactly `u`
        let [gx, gy] = params.force;
        let rho = density.map_or(params.rho0, |d| d[i]);
        cell.copy_from_slice(&equilibrium(rho, [u[0] - 0.5 * gx, u[1] - 0.5 * gy]));
    }
    // Solid nodes hold what bounce-back last received: each population
    // arriving from a pore neighbour is that neighbour's post-collision value.
    let size = grid.size();
    let solid = grid.solid();
    let mut seeded = f.clone();
    for y in 0..size {
        for x in 0..size {
            let node = y * size + x;
            if !solid[node] {
                continue;
            }
            for i in 1..Q {
                let sx = (x as i64 - E[i][0] as i64).rem_euclid(size as i64) as usize;
                let sy = (y as i64 - E[i][1] as i64).rem_euclid(size as i64) as usize;
                let source = sy * size + sx;
                if solid[source] {
                    continue;
                }
                let post = collide(&f[source * Q..source * Q + Q], params.tau, params.force)
                    .ok_or_else(|| Error::data("warm field yields a non-physical state"))?;
                seeded[node * Q + i] = post[i];
            }
        }
    }
    let f = seeded;
    Ok(LbmState {
        grid: grid.clone(),
        params: *params,
        scratch: vec![0.0; n * Q],
        f,
        iteration: 0,
    })
}

#[derive(Debug, Clone)]
pub struct Converged {
    pub field: VelocityField,
    pub iterations: u64,
}

impl LbmState {
    pub fn grid(&self) -> &StructureGrid {
        &self.grid
    }

    pub fn params(&self) -> &LbmParams {
        &self.params
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn distributions(&self) -> &[f64] {
        &self.f
    }

    pub fn total_mass(&self) -> f64 {
        self.f.iter().sum()
    }

    /// One collide, force, stream cycle.
    pub fn step(&mut self) -> Result<()> {
        let size = self.grid.size();
        let tau = self.params.tau;
        let [gx, gy] = self.params.force;
        let solid = self.grid.solid();
        let src = &self.f;
        let dst = &mut self.scratch;

        for y in 0..size {
            let ys = [y, (y + 1) % size, (y + size - 1) % size];
            for x in 0..size {
                let xs = [x, (x + 1) % size, (x + size - 1) % size];
                let node = y * size + x;
                let f = &src[node * Q..node * Q + Q];
                let mut post = [0.0; Q];
                if solid[node] {
                    for i in 0..Q {
                        post[i] = f[OPPOSITE[i]];
                    }
                } else {
                    post = collide(f, tau, [gx, gy]).ok_or(Error::Divergence {
                        iteration: self.iteration,
                    })?;
                }
                for i in 0..Q {
                    let tx = xs[lattice_offset(E[i][0])];
                    let ty = ys[lattice_offset(E[i][1])];
                    dst[(ty * size + tx) * Q + i] = post[i];
                }
            }
        }
        std::mem::swap(&mut self.f, &mut self.scratch);
        self.iteration += 1;
        Ok(())
    }

    /// Density on every node and the force-corrected velocity (zero on solids).
    pub fn moments(&self) -> Result<(Vec<f64>, VelocityField)> {
        let n = self.grid.cell_count();
        let [gx, gy] = self.params.force;
        let mut rho = vec![0.0; n];
        let mut field = VelocityField::zeros(self.grid.size());
        for node in 0..n {
            let f = &self.f[node * Q..node * Q + Q];
            let (mut r, mut jx, mut jy) = (0.0, 0.0, 0.0);
            for i in 0..Q {
                r += f[i];
                jx += E[i][0] as f64 * f[i];
                jy += E[i][1] as f64 * f[i];
            }
            rho[node] = r;
            if self.grid.solid()[node] {
                continue;
            }
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::Divergence {
                    iteration: self.iteration,
                });
            }
            field.ux[node] = jx / r + 0.5 * gx;
            field.uy[node] = jy / r + 0.5 * gy;
        }
        Ok((rho, field))
    }

    pub fn velocity(&self) -> Result<VelocityField> {
        self.moments().map(|(_, u)| u)
    }

    /// Steps until the relative L2 change of the velocity between two
    /// consecutive checks drops below the tolerance.
    pub fn run_to_convergence(&mut self) -> Result<Converged> {
        let check = self.params.check_interval;
        let max = self.params.max_iters;
        let mut previous = self.velocity()?;
        let mut last_change = f64::INFINITY;
        loop {
            if self.iteration >= max {
                return Err(Error::NonConvergence {
                    iterations: self.iteration,
                    last_change,
                    field: Box::new(previous),
                });
            }
            let steps = check.min(max - self.iteration);
            for _ in 0..steps {
                self.step()?;
            }
            let current = self.velocity()?;
            last_change = relative_change(&current, &previous);
            if last_change < self.params.tol {
                return Ok(Converged {
                    field: current,
                    iterations: self.iteration,
                });
            }
            previous = current;
        }
    }
}

/// BGK collision with Guo forcing at one pore node; `None` when the node's
/// density is non-positive or any moment is non-finite.
#[inline]
fn collide(f: &[f64], tau: f64, g: [f64; 2]) -> Option<[f64; Q]> {
    let omega = 1.0 / tau;
    let source_scale = 1.0 - 0.5 * omega;
    let mut rho = 0.0;
    let mut jx = 0.0;
    let mut jy = 0.0;
    for i in 0..Q {
        rho += f[i];
        jx += E[i][0] as f64 * f[i];
        jy += E[i][1] as f64 * f[i];
    }
    if !(rho > 0.0) || !rho.is_finite() || !jx.is_finite() || !jy.is_finite() {
        return None;
    }
    let u = [jx / rho + 0.5 * g[0], jy / rho + 0.5 * g[1]];
    let force = [rho * g[0], rho * g[1]];
    let feq = equilibrium(rho, u);
    let mut post = [0.0; Q];
    for i in 0..Q {
        let ex = E[i][0] as f64;
        let ey = E[i][1] as f64;
        let eu = ex * u[0] + ey * u[1];
        let source = W[i]
            * (3.0 * ((ex - u[0]) * force[0] + (ey - u[1]) * force[1]) + 9.0 * eu * (ex * force[0] + ey * force[1]));
        post[i] = f[i] - omega * (f[i] - feq[i]) + source_scale * source;
    }
    Some(post)
}

#[inline]
fn lattice_offset(e: i32) -> usize {
    match e {
        0 => 0,
        1 => 1,
        _ => 2,
    }
}

/// `‖new − old‖₂ / max(‖new‖₂, 1e-30)`, summed in index order.
pub fn relative_change(new: &VelocityField, old: &VelocityField) -> f64 {
    let mut diff = 0.0;
    let mut norm = 0.0;
    for i in 0..new.ux.len() {
        let dx = new.ux[i] - old.ux[i];
        let dy = new.uy[i] - old.uy[i];
        diff += dx * dx + dy * dy;
        norm += new.ux[i] * new.ux[i] + new.uy[i] * new.uy[i];
    }
    diff.sqrt() / norm.sqrt().max(1e-30)
}

/// Convenience: cold start and run to convergence.
pub fn solve(grid: &StructureGrid, params: &LbmParams) -> Result<Converged> {
    init_cold(grid, params)?.run_to_convergence()
}
