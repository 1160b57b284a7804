//! Five-term physics-informed loss for a predicted velocity field.
//!
//! Integrals become plain pixel sums. Divergence uses forward differences
//! with periodic wrap; solid neighbours contribute their stored velocity.

use serde::{Deserialize, Serialize};

use crate::augment::roll_field;
use crate::error::{Error, Result};
use crate::geometry::StructureGrid;
use crate::lbm::VelocityField;
use crate::properties::tortuosity;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Obstacle (L1 inside solids).
    pub alpha: f64,
    /// Divergence.
    pub beta: f64,
    /// Periodicity.
    pub gamma: f64,
    /// Tortuosity.
    pub delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 5.0,
            beta: 1.0,
            gamma: 0.1,
            delta: 0.01,
        }
    }
}

impl LossWeights {
    pub const VELOCITY_ONLY: LossWeights = LossWeights {
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
        delta: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("delta", self.delta),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::param(format!("loss weight {name} = {w} must be non-negative")));
            }
        }
        Ok(())
    }

    /// Cumulative ablation settings: velocity only, then obstacle,
    /// divergence, periodicity and tortuosity switched on one at a time
    /// at their default weights.
    pub fn ablation_ladder() -> Vec<(&'static str, LossWeights)> {
        let full = LossWeights::default();
        let mut w = LossWeights::VELOCITY_ONLY;
        let mut out = vec![("vel", w)];
        w.alpha = full.alpha;
        out.push(("vel+obstacle", w));
        w.beta = full.beta;
        out.push(("vel+obstacle+div", w));
        w.gamma = full.gamma;
        out.push(("vel+obstacle+div+perio", w));
        w.delta = full.delta;
        out.push(("full", w));
        out
    }
}

/// Periodic shift applied to a structure and its prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Translation {
    pub tx: usize,
    pub ty: usize,
}

impl Translation {
    pub fn new(tx: usize, ty: usize, size: usize) -> Result<Self> {
        if tx >= size || ty >= size {
            return Err(Error::param(format!(
                "translation ({tx}, {ty}) outside [0, {size})"
            )));
        }
        Ok(Self { tx, ty })
    }

    /// Half-domain shift used for training.
    pub fn half(size: usize) -> Self {
        Self {
            tx: size / 2,
            ty: size / 2,
        }
    }

    pub fn inverse(&self, size: usize) -> Self {
        Self {
            tx: (size - self.tx) % size,
            ty: (size - self.ty) % size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_vel: f64,
    pub l_obstacle: f64,
    pub l_div: f64,
    pub l_perio: f64,
    pub l_tort: f64,
    pub total: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "l_vel,l_obstacle,l_div,l_perio,l_tort,total";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.l_vel, self.l_obstacle, self.l_div, self.l_perio, self.l_tort, self.total
        )
    }
}

fn half_mean_squared_difference(a: &VelocityField, b: &VelocityField) -> f64 {
    let sum: f64 = a
        .ux()
        .iter()
        .zip(b.ux())
        .chain(a.uy().iter().zip(b.uy()))
        .map(|(p, q)| (p - q) * (p - q))
        .sum();
    sum / (2.0 * a.ux().len() as f64)
}

/// Squared error summed over both components, divided by `2 L²`.
pub fn l_vel(pred: &VelocityField, reference: &VelocityField) -> Result<f64> {
    reference.check_size(pred.size(), "l_vel")?;
    Ok(half_mean_squared_difference(pred, reference))
}

/// Mean absolute velocity inside solids, both components, over `2 |B|`.
pub fn l_obstacle(pred: &VelocityField, grid: &StructureGrid) -> Result<f64> {
    pred.check_size(grid.size(), "l_obstacle")?;
    let solids = grid.solid_count();
    if solids == 0 {
        return Ok(0.0);
    }
    let sum: f64 = grid
        .solid()
        .iter()
        .enumerate()
        .filter(|(_, s)| **s)
        .map(|(i, _)| pred.ux()[i].abs() + pred.uy()[i].abs())
        .sum();
    Ok(sum / (2.0 * solids as f64))
}

/// Forward-difference divergence at pixel `(x, y)` with periodic wrap.
#[inline]
pub fn divergence_at(field: &VelocityField, x: usize, y: usize) -> f64 {
    let size = field.size();
    let here = y * size + x;
    let east = y * size + (x + 1) % size;
    let north = ((y + 1) % size) * size + x;
    (field.ux()[east] - field.ux()[here]) + (field.uy()[north] - field.uy()[here])
}

/// Mean squared divergence over pore pixels.
pub fn l_div(pred: &VelocityField, grid: &StructureGrid) -> Result<f64> {
    pred.check_size(grid.size(), "l_div")?;
    let pores = grid.pore_count();
    if pores == 0 {
        return Ok(0.0);
    }
    let size = grid.size();
    let mut sum = 0.0;
    for y in 0..size {
        for x in 0..size {
            if !grid.is_solid(x, y) {
                let d = divergence_at(pred, x, y);
                sum += d * d;
            }
        }
    }
    Ok(sum / pores as f64)
}

/// Disagreement between the prediction for `S` and the prediction for
/// `T[S]` shifted back by `-T`.
pub fn l_perio(pred_s: &VelocityField, pred_ts: &VelocityField, t: Translation) -> Result<f64> {
    pred_ts.check_size(pred_s.size(), "l_perio")?;
    let size = pred_s.size();
    let t = Translation::new(t.tx, t.ty, size)?;
    let back = roll_field(pred_ts, t.inverse(size));
    Ok(half_mean_squared_difference(pred_s, &back))
}

pub fn l_tort(pred: &VelocityField, grid: &StructureGrid, tau_ref: f64) -> Result<f64> {
    let tau = tortuosity(pred, grid)?;
    Ok((tau - tau_ref) * (tau - tau_ref))
}

/// All five components and their weighted sum. The reference tortuosity
/// comes from `reference` on `grid`.
pub fn total_loss(
    pred_s: &VelocityField,
    pred_ts: &VelocityField,
    reference: &VelocityField,
    grid: &StructureGrid,
    t: Translation,
    weights: &LossWeights,
) -> Result<LossReport> {
    weights.validate()?;
    let tau_ref = tortuosity(reference, grid)?;
    let l_vel = l_vel(pred_s, reference)?;
    let l_obstacle = l_obstacle(pred_s, grid)?;
    let l_div = l_div(pred_s, grid)?;
    let l_perio = l_perio(pred_s, pred_ts, t)?;
    let l_tort = l_tort(pred_s, grid, tau_ref)?;
    let total = l_vel
        + weights.alpha * l_obstacle
        + weights.beta * l_div
        + weights.gamma * l_perio
        + weights.delta * l_tort;
    Ok(LossReport {
        l_vel,
        l_obstacle,
        l_div,
        l_perio,
        l_tort,
        total,
    })
}

/// One scored sample for the ablation harness.
pub struct LossSample<'a> {
    pub grid: &'a StructureGrid,
    pub reference: &'a VelocityField,
    pub pred_s: &'a VelocityField,
    pub pred_ts: &'a VelocityField,
    pub translation: Translation,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub setting: String,
    pub weights: LossWeights,
    /// Component means over all samples.
    pub mean: LossReport,
}

/// Mean loss components for each weight setting (one table row each).
pub fn ablation_table(
    samples: &[LossSample<'_>],
    settings: &[(&str, LossWeights)],
) -> Result<Vec<AblationRow>> {
    if samples.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let n = samples.len() as f64;
    settings
        .iter()
        .map(|(name, w)| {
            let mut acc = [0.0; 6];
            for s in samples {
                let r = total_loss(s.pred_s, s.pred_ts, s.reference, s.grid, s.translation, w)?;
                for (a, v) in acc
                    .iter_mut()
                    .zip([r.l_vel, r.l_obstacle, r.l_div, r.l_perio, r.l_tort, r.total])
                {
                    *a += v;
                }
            }
            Ok(AblationRow {
                setting: name.to_string(),
                weights: *w,
                mean: LossReport {
                    l_vel: acc[0] / n,
                    l_obstacle: acc[1] / n,
                    l_div: acc[2] / n,
                    l_perio: acc[3] / n,
                    l_tort: acc[4] / n,
                    total: acc[5] / n,
                },
            })
        })
        .collect()
}
