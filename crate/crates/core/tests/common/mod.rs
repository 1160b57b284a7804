//! Independent reference implementations shared by the integration tests.
//!
//! Everything here works on plain nested arrays indexed `[component][y][x]`
//! and avoids the library's own helpers.

#![allow(dead_code)]

use porelab::{StructureGrid, VelocityField};
use rand::Rng;

pub type Planes = [Vec<Vec<f64>>; 2];

pub fn planes(field: &VelocityField) -> Planes {
    let l = field.size();
    let grab = |v: &[f64]| (0..l).map(|y| v[y * l..(y + 1) * l].to_vec()).collect();
    [grab(field.ux()), grab(field.uy())]
}

pub fn solid_rows(grid: &StructureGrid) -> Vec<Vec<bool>> {
    let l = grid.size();
    (0..l).map(|y| (0..l).map(|x| grid.is_solid(x, y)).collect()).collect()
}

pub fn oracle_l_vel(pred: &VelocityField, reference: &VelocityField) -> f64 {
    let (p, r) = (planes(pred), planes(reference));
    let l = pred.size();
    let mut sum = 0.0;
    for c in 0..2 {
        for y in 0..l {
            for x in 0..l {
                let d = p[c][y][x] - r[c][y][x];
                sum += d * d;
            }
        }
    }
    sum / (2 * l * l) as f64
}

pub fn oracle_l_obstacle(pred: &VelocityField, grid: &StructureGrid) -> f64 {
    let p = planes(pred);
    let s = solid_rows(grid);
    let l = grid.size();
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..l {
        for x in 0..l {
            if s[y][x] {
                count += 1;
                sum += p[0][y][x].abs() + p[1][y][x].abs();
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / (2 * count) as f64
    }
}

pub fn oracle_l_div(pred: &VelocityField, grid: &StructureGrid) -> f64 {
    let p = planes(pred);
    let s = solid_rows(grid);
    let l = grid.size();
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..l {
        for x in 0..l {
            if !s[y][x] {
                count += 1;
                let d = p[0][y][(x + 1) % l] - p[0][y][x] + p[1][(y + 1) % l][x] - p[1][y][x];
                sum += d * d;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// `T[S]` places the content of `S` at `(x, y)` at `(x + tx, y + ty)`, so
/// the equivariant prediction satisfies `pred_ts[y + ty][x + tx] = pred_s[y][x]`.
pub fn oracle_l_perio(pred_s: &VelocityField, pred_ts: &VelocityField, tx: usize, ty: usize) -> f64 {
    let (a, b) = (planes(pred_s), planes(pred_ts));
    let l = pred_s.size();
    let mut sum = 0.0;
    for c in 0..2 {
        for y in 0..l {
            for x in 0..l {
                let d = a[c][y][x] - b[c][(y + ty) % l][(x + tx) % l];
                sum += d * d;
            }
        }
    }
    sum / (2 * l * l) as f64
}

pub fn random_grid<R: Rng>(rng: &mut R, l: usize, solid_fraction: f64) -> StructureGrid {
    let solid = (0..l * l).map(|_| rng.random_bool(solid_fraction)).collect();
    StructureGrid::from_solid(l, solid).unwrap()
}

pub fn random_field<R: Rng>(rng: &mut R, l: usize) -> VelocityField {
    VelocityField::from_fn(l, |_, _| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

pub fn relative_gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Two-sided signed-rank p-value by enumerating every sign assignment.
///
/// Zero differences are dropped; tied magnitudes share their mean rank.
/// Works in doubled ranks so every comparison is an integer comparison.
pub fn wilcoxon_exhaustive(x: &[f64], y: &[f64]) -> f64 {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return 1.0;
    }
    let doubled: Vec<i64> = d
        .iter()
        .map(|di| {
            let below = d.iter().filter(|dj| dj.abs() < di.abs()).count() as i64;
            let tied = d.iter().filter(|dj| dj.abs() == di.abs()).count() as i64;
            2 * below + tied + 1
        })
        .collect();
    let total: i64 = doubled.iter().sum();
    let observed: i64 = doubled.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
    let distance = (2 * observed - total).abs();
    let mut extreme = 0u64;
    for mask in 0u32..(1 << n) {
        let w: i64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| doubled[i]).sum();
        if (2 * w - total).abs() >= distance {
            extreme += 1;
        }
    }
    extreme as f64 / (1u64 << n) as f64
}

/// Steady plane Poiseuille velocity at row `y` for walls occupying rows
/// `[0, t)` and `[L - t, L)`, with the no-slip planes half-way between
/// wall and fluid rows.
pub fn poiseuille(y: usize, l: usize, t: usize, g: f64, nu: f64) -> f64 {
    let lower = t as f64 - 0.5;
    let upper = (l - t) as f64 - 0.5;
    let y = y as f64;
    g / (2.0 * nu) * (y - lower) * (upper - y)
}
