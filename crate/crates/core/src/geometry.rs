//! Periodic 2-D porous structures.
//!
//! All grids live on a torus and are stored row-major, `index = y * L + x`,
//! with `x` the flow (body-force) axis.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_FIELD_SIZE: usize = 8;
pub const WAVE_COUNT_RANGE: (usize, usize) = (10, 100);
pub const WAVE_NUMBER_LIMIT: i32 = 12;
pub const DEFAULT_OBSTACLE_SIZES: (usize, usize) = (3, 8);

/// Real field sampled at pixel centers of the unit square.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    size: usize,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(size: usize, values: Vec<f64>) -> Result<Self> {
        if size < MIN_FIELD_SIZE {
            return Err(Error::param(format!(
                "field size {size} below minimum {MIN_FIELD_SIZE}"
            )));
        }
        if values.len() != size * size {
            return Err(Error::data(format!(
                "expected {} values, got {}",
                size * size,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("scalar field contains non-finite values"));
        }
        Ok(Self { size, values })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.size + x]
    }
}

/// One standing wave `cos(2π (kx x + ky y) + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub kx: i32,
    pub ky: i32,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveSpec {
    pub waves: Vec<Wave>,
}

impl WaveSpec {
    /// Draws a spec from the training distribution: 10..=100 waves, integer
    /// wave numbers in [-12, 12] per component, phases in [0, π].
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let count = rng.random_range(WAVE_COUNT_RANGE.0..=WAVE_COUNT_RANGE.1);
        let waves = (0..count)
            .map(|_| Wave {
                kx: rng.random_range(-WAVE_NUMBER_LIMIT..=WAVE_NUMBER_LIMIT),
                ky: rng.random_range(-WAVE_NUMBER_LIMIT..=WAVE_NUMBER_LIMIT),
                phase: rng.random_range(0.0..=PI),
            })
            .collect();
        Self { waves }
    }

    /// Explicit specs may hold any positive number of waves (a single
    /// wave is handy for analytic checks); wave numbers and phases must
    /// stay in the sampling ranges.
    pub fn validate(&self) -> Result<()> {
        if self.waves.is_empty() {
            return Err(Error::param("wave spec must contain at least one wave"));
        }
        for w in &self.waves {
            if w.kx.abs() > WAVE_NUMBER_LIMIT || w.ky.abs() > WAVE_NUMBER_LIMIT {
                return Err(Error::param(format!(
                    "wave vector ({}, {}) outside [-{WAVE_NUMBER_LIMIT}, {WAVE_NUMBER_LIMIT}]",
                    w.kx, w.ky
                )));
            }
            if !(0.0..=PI).contains(&w.phase) {
                return Err(Error::param(format!("phase {} outside [0, π]", w.phase)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum WaveSource {
    Explicit(WaveSpec),
    Sample,
}

/// Superposition of standing waves, normalized by `sqrt(2 / N)`.
pub fn gen_trig_field(seed: u64, source: &WaveSource, size: usize) -> Result<ScalarField> {
    if size < MIN_FIELD_SIZE {
        return Err(Error::param(format!(
            "field size {size} below minimum {MIN_FIELD_SIZE}"
        )));
    }
    let spec = match source {
        WaveSource::Explicit(spec) => {
            spec.validate()?;
            spec.clone()
        }
        WaveSource::Sample => WaveSpec::sample(&mut ChaCha8Rng::seed_from_u64(seed)),
    };
    let norm = (2.0 / spec.waves.len() as f64).sqrt();
    let inv = 1.0 / size as f64;
    let mut values = vec![0.0; size * size];
    for (y, row) in values.chunks_exact_mut(size).enumerate() {
        let py = (y as f64 + 0.5) * inv;
        for (x, v) in row.iter_mut().enumerate() {
            let px = (x as f64 + 0.5) * inv;
            let sum: f64 = spec
                .waves
                .iter()
                .map(|w| (2.0 * PI * (w.kx as f64 * px + w.ky as f64 * py) + w.phase).cos())
                .sum();
            *v = norm * sum;
        }
    }
    ScalarField::new(size, values)
}

/// Binary occupancy on an L×L torus; `true` marks solid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructureGrid {
    size: usize,
    solid: Vec<bool>,
    pore_count: usize,
}

impl StructureGrid {
    pub fn empty(size: usize) -> Self {
        Self {
            size,
            solid: vec![false; size * size],
            pore_count: size * size,
        }
    }

    pub fn from_solid(size: usize, solid: Vec<bool>) -> Result<Self> {
        if size < 2 {
            return Err(Error::param(format!("grid size {size} too small")));
        }
        if solid.len() != size * size {
            return Err(Error::data(format!(
                "expected {} cells, got {}",
                size * size,
                solid.len()
            )));
        }
        let pore_count = solid.iter().filter(|s| !**s).count();
        Ok(Self {
            size,
            solid,
            pore_count,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn cell_count(&self) -> usize {
        self.size * self.size
    }

    pub fn solid(&self) -> &[bool] {
        &self.solid
    }

    pub fn into_solid(self) -> Vec<bool> {
        self.solid
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.size + x
    }

    #[inline]
    pub fn is_solid(&self, x: usize, y: usize) -> bool {
        self.solid[y * self.size + x]
    }

    pub fn pore_count(&self) -> usize {
        self.pore_count
    }

    pub fn solid_count(&self) -> usize {
        self.cell_count() - self.pore_count
    }

    pub fn porosity(&self) -> f64 {
        self.pore_count as f64 / self.cell_count() as f64
    }
}

/// Marks the lowest `(1 - φ) L²` field values as solid.
///
/// The threshold is an exact order statistic: pixels are ranked by value,
/// ties by pixel index, so the achieved porosity is the closest multiple
/// of `1/L²` to the target (never fewer than one pore pixel).
pub fn threshold_to_porosity(field: &ScalarField, target: f64) -> Result<StructureGrid> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::param(format!("porosity target {target} outside (0, 1]")));
    }
    let n = field.size * field.size;
    let pore = ((target * n as f64).round() as usize).clamp(1, n);
    let solid_count = n - pore;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| field.values[a].total_cmp(&field.values[b]).then(a.cmp(&b)));
    let mut solid = vec![false; n];
    for &i in &order[..solid_count] {
        solid[i] = true;
    }
    StructureGrid::from_solid(field.size, solid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObstacleShape {
    Circle,
    Square,
}

/// An obstacle occupying (part of) the `size × size` box whose top-left
/// pixel is `(x0, y0)`, wrapped periodically.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Obstacle {
    pub shape: ObstacleShape,
    pub x0: usize,
    pub y0: usize,
    pub size: usize,
}

impl Obstacle {
    /// Whether box-local pixel `(a, b)` belongs to the obstacle. Circles
    /// keep pixels whose centers fall within the inscribed radius.
    pub fn covers(&self, a: usize, b: usize) -> bool {
        match self.shape {
            ObstacleShape::Square => a < self.size && b < self.size,
            ObstacleShape::Circle => {
                if a >= self.size || b >= self.size {
                    return false;
                }
                let r = self.size as f64 / 2.0;
                let dx = a as f64 + 0.5 - r;
                let dy = b as f64 + 0.5 - r;
                dx * dx + dy * dy <= r * r
            }
        }
    }

    fn cells(&self, grid_size: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.size).flat_map(move |b| {
            (0..self.size).filter_map(move |a| {
                self.covers(a, b).then(|| {
                    let x = (self.x0 + a) % grid_size;
                    let y = (self.y0 + b) % grid_size;
                    y * grid_size + x
                })
            })
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ShapeParams {
    pub porosity: f64,
    pub p_circle: f64,
    pub size_range: (usize, usize),
}

impl ShapeParams {
    pub fn new(porosity: f64, p_circle: f64) -> Self {
        Self {
            porosity,
            p_circle,
            size_range: DEFAULT_OBSTACLE_SIZES,
        }
    }
}

/// Random circle/square packing; see [`gen_shapes_with_obstacles`].
pub fn gen_shapes(seed: u64, params: &ShapeParams, size: usize) -> Result<StructureGrid> {
    gen_shapes_with_obstacles(seed, params, size).map(|(grid, _)| grid)
}

/// Drops obstacles (overlap allowed) until the porosity reaches the target,
/// then keeps or removes the last one, whichever lands closer to it.
pub fn gen_shapes_with_obstacles(
    seed: u64,
    params: &ShapeParams,
    size: usize,
) -> Result<(StructureGrid, Vec<Obstacle>)> {
    let ShapeParams {
        porosity: target,
        p_circle,
        size_range: (min_size, max_size),
    } = *params;
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::param(format!("porosity target {target} outside (0, 1]")));
    }
    if !(0.0..=1.0).contains(&p_circle) {
        return Err(Error::param(format!("p_circle {p_circle} outside [0, 1]")));
    }
    if min_size == 0 || min_size > max_size || max_size > size {
        return Err(Error::param(format!(
            "obstacle size range [{min_size}, {max_size}] invalid for grid of {size}"
        )));
    }
    if size < 2 {
        return Err(Error::param(format!("grid size {size} too small")));
    }

    let n = size * size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut solid = vec![false; n];
    let mut pore = n;
    let mut obstacles = Vec::new();
    let max_attempts = 64 * n;
    let porosity = |pore: usize| pore as f64 / n as f64;

    while porosity(pore) > target {
        if obstacles.len() >= max_attempts {
            return Err(Error::param(format!(
                "porosity target {target} not reached after {max_attempts} obstacles"
            )));
        }
        let shape = if rng.random_bool(p_circle) {
            ObstacleShape::Circle
        } else {
            ObstacleShape::Square
        };
        let obstacle = Obstacle {
            shape,
            x0: rng.random_range(0..size),
            y0: rng.random_range(0..size),
            size: rng.random_range(min_size..=max_size),
        };
        let newly: Vec<usize> = obstacle.cells(size).filter(|&i| !solid[i]).collect();
        for &i in &newly {
            solid[i] = true;
        }
        let before = pore;
        pore -= newly.len();
        if porosity(pore) <= target {
            let err_with = (porosity(pore) - target).abs();
            let err_without = (porosity(before) - target).abs();
            if err_without < err_with {
                for &i in &newly {
                    solid[i] = false;
                }
            } else {
                obstacles.push(obstacle);
            }
            break;
        }
        obstacles.push(obstacle);
    }
    Ok((StructureGrid::from_solid(size, solid)?, obstacles))
}

/// Adds solid bands running along the flow axis: one at each horizontal
/// edge (a pipe), or a single band of the same total height at mid-domain.
pub fn add_pipe_walls(grid: &StructureGrid, thickness: usize, central: bool) -> Result<StructureGrid> {
    let size = grid.size();
    if thickness == 0 || 4 * thickness >= size {
        return Err(Error::param(format!(
            "wall thickness {thickness} outside [1, L/4) for L = {size}"
        )));
    }
    let rows: Vec<usize> = if central {
        (size / 2 - thickness..size / 2 + thickness).collect()
    } else {
        (0..thickness).chain(size - thickness..size).collect()
    };
    let mut solid = grid.solid().to_vec();
    for y in rows {
        solid[y * size..(y + 1) * size].fill(true);
    }
    StructureGrid::from_solid(size, solid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

/// Whether the pore space carries flow along `axis` on the torus.
///
/// The pore network is explored once, recording each pixel's lifted
/// (unwrapped) coordinate along `axis`. Reaching an already visited pixel
/// with a different lift means a pore loop winds around the domain in that
/// direction, i.e. a connected path joins each face to its periodic image.
/// The transverse axis is periodic throughout.
pub fn percolates(grid: &StructureGrid, axis: Axis) -> bool {
    let size = grid.size();
    let n = size * size;
    // (along, across) -> cell index
    let cell = |a: usize, c: usize| match axis {
        Axis::X => c * size + a,
        Axis::Y => a * size + c,
    };
    let mut lift: Vec<Option<i64>> = vec![None; n];
    let mut queue = VecDeque::new();
    let s = size as i64;

    for start_c in 0..size {
        for start_a in 0..size {
            let start = cell(start_a, start_c);
            if grid.solid()[start] || lift[start].is_some() {
                continue;
            }
            lift[start] = Some(start_a as i64);
            queue.push_back((start_a, start_c));
            while let Some((a, c)) = queue.pop_front() {
                let here = lift[cell(a, c)].unwrap();
                let steps: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
                for (da, dc) in steps {
                    let na = (a as i64 + da).rem_euclid(s) as usize;
                    let nc = (c as i64 + dc).rem_euclid(s) as usize;
                    let next = cell(na, nc);
                    if grid.solid()[next] {
                        continue;
                    }
                    let lifted = here + da;
                    match lift[next] {
                        Some(existing) if existing != lifted => return true,
                        Some(_) => {}
                        None => {
                            lift[next] = Some(lifted);
                            queue.push_back((na, nc));
                        }
                    }
                }
            }
        }
    }
    false
}
