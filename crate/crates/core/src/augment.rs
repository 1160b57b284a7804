//! Physics-consistent augmentations of (structure, velocity) pairs.
//!
//! Flow is driven along +x, so only vertical flips (with `v_y -> -v_y`)
//! and periodic translations map solutions onto solutions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::StructureGrid;
use crate::lbm::VelocityField;
use crate::losses::Translation;

pub const DEFAULT_FLIP_PROBABILITY: f64 = 0.5;
pub const DEFAULT_MAX_ROLL_FRACTION: f64 = 0.3;

fn roll_plane<T: Copy>(src: &[T], size: usize, tx: usize, ty: usize) -> Vec<T> {
    let mut out = src.to_vec();
    for y in 0..size {
        let ny = (y + ty) % size;
        for x in 0..size {
            out[ny * size + (x + tx) % size] = src[y * size + x];
        }
    }
    out
}

fn flip_plane<T: Copy>(src: &[T], size: usize) -> Vec<T> {
    src.chunks_exact(size).rev().flatten().copied().collect()
}

/// Content at `(x, y)` moves to `(x + tx, y + ty)` (mod L).
pub fn roll_field(field: &VelocityField, t: Translation) -> VelocityField {
    let size = field.size();
    VelocityField::new(
        size,
        roll_plane(field.ux(), size, t.tx, t.ty),
        roll_plane(field.uy(), size, t.tx, t.ty),
    )
    .expect("rolled planes keep their size")
}

pub fn roll_grid(grid: &StructureGrid, t: Translation) -> StructureGrid {
    let size = grid.size();
    StructureGrid::from_solid(size, roll_plane(grid.solid(), size, t.tx, t.ty))
        .expect("rolled grid keeps its size")
}

pub fn roll(
    grid: &StructureGrid,
    field: &VelocityField,
    tx: usize,
    ty: usize,
) -> Result<(StructureGrid, VelocityField)> {
    field.check_size(grid.size(), "roll")?;
    let t = Translation::new(tx, ty, grid.size())?;
    Ok((roll_grid(grid, t), roll_field(field, t)))
}

/// Reverses row order in both arrays and negates `v_y`.
pub fn vflip(grid: &StructureGrid, field: &VelocityField) -> Result<(StructureGrid, VelocityField)> {
    field.check_size(grid.size(), "vflip")?;
    let size = grid.size();
    let flipped = StructureGrid::from_solid(size, flip_plane(grid.solid(), size))?;
    let ux = flip_plane(field.ux(), size);
    let uy = flip_plane(field.uy(), size).into_iter().map(|v| -v).collect();
    Ok((flipped, VelocityField::new(size, ux, uy)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Augmentation {
    pub flip: bool,
    pub tx: usize,
    pub ty: usize,
}

impl Augmentation {
    pub const IDENTITY: Augmentation = Augmentation {
        flip: false,
        tx: 0,
        ty: 0,
    };

    /// Flip first (if drawn), then roll.
    pub fn apply(
        &self,
        grid: &StructureGrid,
        field: &VelocityField,
    ) -> Result<(StructureGrid, VelocityField)> {
        let (g, f) = if self.flip {
            vflip(grid, field)?
        } else {
            field.check_size(grid.size(), "augment")?;
            (grid.clone(), field.clone())
        };
        roll(&g, &f, self.tx % g.size(), self.ty % g.size())
    }
}

/// Draws a flip with probability `p_flip` and per-axis shifts uniform in
/// `[0, ⌊max_frac · L⌋]`.
pub fn sample_augmentation(seed: u64, p_flip: f64, max_frac: f64, size: usize) -> Result<Augmentation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(&mut rng, p_flip, max_frac, size)
}

pub fn sample_with<R: Rng + ?Sized>(
    rng: &mut R,
    p_flip: f64,
    max_frac: f64,
    size: usize,
) -> Result<Augmentation> {
    if !(0.0..=1.0).contains(&p_flip) {
        return Err(Error::param(format!("flip probability {p_flip} outside [0, 1]")));
    }
    if !(max_frac > 0.0 && max_frac <= 1.0) {
        return Err(Error::param(format!("roll fraction {max_frac} outside (0, 1]")));
    }
    // a full-length shift is the identity
    let max_shift = ((max_frac * size as f64).floor() as usize).min(size.saturating_sub(1));
    Ok(Augmentation {
        flip: rng.random_bool(p_flip),
        tx: rng.random_range(0..=max_shift),
        ty: rng.random_range(0..=max_shift),
    })
}
