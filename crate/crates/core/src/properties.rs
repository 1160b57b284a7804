//! Macroscopic transport properties of a velocity field in its structure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::StructureGrid;
use crate::lbm::{LbmParams, VelocityField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroProperties {
    pub porosity: f64,
    pub tortuosity: f64,
    /// Lattice units (pixel²).
    pub permeability: f64,
    pub mean_speed: f64,
    pub max_speed: f64,
}

impl MacroProperties {
    pub const CSV_HEADER: &'static str = "phi,tau,k,mean_v,max_v";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.porosity, self.tortuosity, self.permeability, self.mean_speed, self.max_speed
        )
    }
}

fn check_sizes(field: &VelocityField, grid: &StructureGrid) -> Result<()> {
    field.check_size(grid.size(), "properties")
}

/// `⟨|v|⟩ / ⟨v_x⟩` with both averages over pore pixels.
pub fn tortuosity(field: &VelocityField, grid: &StructureGrid) -> Result<f64> {
    check_sizes(field, grid)?;
    let mut speed = 0.0;
    let mut axial = 0.0;
    for (i, &s) in grid.solid().iter().enumerate() {
        if !s {
            speed += field.speed_at(i);
            axial += field.ux()[i];
        }
    }
    if axial == 0.0 {
        return Err(Error::UndefinedTortuosity);
    }
    Ok(speed / axial)
}

/// Darcy permeability from the superficial velocity: `k = μ ⟨u_x⟩_Ω / (ρ0 g_x)`.
///
/// Periodic forcing leaves no mean pressure gradient, so the body force is
/// the whole driving term.
pub fn permeability(field: &VelocityField, grid: &StructureGrid, params: &LbmParams) -> Result<f64> {
    check_sizes(field, grid)?;
    let gx = params.force[0];
    if gx == 0.0 || !gx.is_finite() {
        return Err(Error::param("permeability needs a non-zero streamwise force"));
    }
    let mean_ux = field.ux().iter().sum::<f64>() / grid.cell_count() as f64;
    Ok(params.dynamic_viscosity() * mean_ux / (params.rho0 * gx))
}

pub fn summary(field: &VelocityField, grid: &StructureGrid, params: &LbmParams) -> Result<MacroProperties> {
    check_sizes(field, grid)?;
    if grid.pore_count() == 0 {
        return Err(Error::data("structure has no pore space"));
    }
    let mut total = 0.0;
    let mut max: f64 = 0.0;
    for (i, &s) in grid.solid().iter().enumerate() {
        if !s {
            let v = field.speed_at(i);
            total += v;
            max = max.max(v);
        }
    }
    Ok(MacroProperties {
        porosity: grid.porosity(),
        tortuosity: tortuosity(field, grid)?,
        permeability: permeability(field, grid, params)?,
        mean_speed: total / grid.pore_count() as f64,
        max_speed: max,
    })
}
