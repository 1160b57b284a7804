//! Cold vs. warm LBM initialization benchmark.

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::derive_seed;
use crate::error::{Error, Result};
use crate::geometry::StructureGrid;
use crate::lbm::{init_cold, init_warm, init_warm_with_density, LbmParams, LbmState, VelocityField};
use crate::pressure::reconstruct_density;
use crate::stats::{bootstrap_ci_median, quantile, wilcoxon_signed_rank, WilcoxonResult};

pub const MIN_SUITE_SAMPLES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarmStartResult {
    pub id: u64,
    pub cold_iters: u64,
    pub warm_iters: u64,
    /// `1 - warm / cold`.
    pub reduction: f64,
    pub porosity: f64,
    /// False when either run hit the iteration limit; such pairs are
    /// excluded from the suite statistics.
    pub converged: bool,
}

impl WarmStartResult {
    pub const CSV_HEADER: &'static str = "id,cold_iters,warm_iters,reduction,porosity,converged";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.id, self.cold_iters, self.warm_iters, self.reduction, self.porosity, self.converged
        )
    }
}

/// How a warm state is built from a velocity field.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum WarmInit {
    /// Equilibrium at `ρ0` around the field.
    Equilibrium,
    /// Equilibrium around the field at the density reconstructed from it.
    #[default]
    Reconstructed,
}

impl WarmInit {
    pub fn name(&self) -> &'static str {
        match self {
            WarmInit::Equilibrium => "equilibrium",
            WarmInit::Reconstructed => "reconstructed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "equilibrium" => Ok(WarmInit::Equilibrium),
            "reconstructed" => Ok(WarmInit::Reconstructed),
            other => Err(Error::param(format!(
                "warm init `{other}` must be equilibrium or reconstructed"
            ))),
        }
    }

    pub fn init(&self, grid: &StructureGrid, field: &VelocityField, params: &LbmParams) -> Result<LbmState> {
        match self {
            WarmInit::Equilibrium => init_warm(grid, field, params),
            WarmInit::Reconstructed => {
                let density = reconstruct_density(grid, field, params)?;
                init_warm_with_density(grid, field, &density, params)
            }
        }
    }
}

/// Iteration count to convergence, or `None` if the budget ran out.
fn iterations_from(state: LbmState) -> Result<Option<u64>> {
    let mut state = state;
    match state.run_to_convergence() {
        Ok(c) => Ok(Some(c.iterations)),
        Err(Error::NonConvergence { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Runs the solver from rest and from `warm_field` with identical
/// parameters and convergence rule.
pub fn bench_pair(
    id: u64,
    grid: &StructureGrid,
    warm_field: &VelocityField,
    params: &LbmParams,
    init: WarmInit,
) -> Result<WarmStartResult> {
    let cold = iterations_from(init_cold(grid, params)?)?;
    let warm = iterations_from(init.init(grid, warm_field, params)?)?;
    let converged = cold.is_some() && warm.is_some();
    if !converged {
        warn!("sample {id}: warm-start pair did not converge, excluded from statistics");
    }
    let cold_iters = cold.unwrap_or(params.max_iters);
    let warm_iters = warm.unwrap_or(params.max_iters);
    Ok(WarmStartResult {
        id,
        cold_iters,
        warm_iters,
        reduction: 1.0 - warm_iters as f64 / cold_iters as f64,
        porosity: grid.porosity(),
        converged,
    })
}

/// Multiplies each velocity component by `1 + σ ξ`, `ξ ~ N(0, 1)` drawn
/// per pixel and component; solid pixels stay at zero.
pub fn perturb_field(field: &VelocityField, grid: &StructureGrid, sigma: f64, seed: u64) -> Result<VelocityField> {
    field.check_size(grid.size(), "perturb")?;
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::param(format!("noise level {sigma} must be non-negative")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = field.clone();
    let n = grid.cell_count();
    for i in 0..n {
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        out.ux_mut()[i] *= 1.0 + sigma * a;
        out.uy_mut()[i] *= 1.0 + sigma * b;
    }
    out.mask_solids(grid);
    Ok(out)
}

pub struct BenchCase<'a> {
    pub id: u64,
    pub grid: &'a StructureGrid,
    pub warm_field: &'a VelocityField,
    pub params: LbmParams,
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteOptions {
    pub warm_init: WarmInit,
    pub bootstrap_resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            warm_init: WarmInit::default(),
            bootstrap_resamples: 10_000,
            level: 0.95,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteStats {
    pub n: usize,
    pub fraction_faster: f64,
    pub median_reduction: f64,
    pub q1: f64,
    pub q3: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci_level: f64,
    /// Paired test of cold against warm iteration counts.
    pub wilcoxon: WilcoxonResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub results: Vec<WarmStartResult>,
    /// `None` when fewer than [`MIN_SUITE_SAMPLES`] pairs converged.
    pub stats: Option<SuiteStats>,
}

impl SuiteReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(WarmStartResult::CSV_HEADER);
        out.push('\n');
        for r in &self.results {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }
}

/// Inferential summary over the converged pairs.
pub fn summarize(results: &[WarmStartResult], opts: &SuiteOptions) -> Result<SuiteStats> {
    let valid: Vec<&WarmStartResult> = results.iter().filter(|r| r.converged).collect();
    if valid.len() < MIN_SUITE_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: MIN_SUITE_SAMPLES,
            got: valid.len(),
        });
    }
    let reductions: Vec<f64> = valid.iter().map(|r| r.reduction).collect();
    let cold: Vec<f64> = valid.iter().map(|r| r.cold_iters as f64).collect();
    let warm: Vec<f64> = valid.iter().map(|r| r.warm_iters as f64).collect();
    let (ci_low, ci_high) = bootstrap_ci_median(&reductions, opts.bootstrap_resamples, opts.level, opts.seed)?;
    Ok(SuiteStats {
        n: valid.len(),
        fraction_faster: valid.iter().filter(|r| r.warm_iters < r.cold_iters).count() as f64
            / valid.len() as f64,
        median_reduction: quantile(&reductions, 0.5)?,
        q1: quantile(&reductions, 0.25)?,
        q3: quantile(&reductions, 0.75)?,
        ci_low,
        ci_high,
        ci_level: opts.level,
        wilcoxon: wilcoxon_signed_rank(&cold, &warm)?,
    })
}

/// Benchmarks every case (in parallel, results in input order) and
/// summarizes the converged ones.
pub fn bench_suite(cases: &[BenchCase<'_>], opts: &SuiteOptions) -> Result<SuiteReport> {
    let results = cases
        .par_iter()
        .map(|c| bench_pair(c.id, c.grid, c.warm_field, &c.params, opts.warm_init))
        .collect::<Result<Vec<_>>>()?;
    let stats = match summarize(&results, opts) {
        Ok(s) => Some(s),
        Err(Error::InsufficientSamples { needed, got }) => {
            warn!("only {got} converged pairs (need {needed}); skipping inferential statistics");
            None
        }
        Err(e) => return Err(e),
    };
    Ok(SuiteReport { results, stats })
}

/// One structure with its converged solution.
pub struct Solved<'a> {
    pub id: u64,
    pub grid: &'a StructureGrid,
    pub field: &'a VelocityField,
    pub params: LbmParams,
}

/// Warm starts from each solution perturbed by relative noise `sigma`; the
/// noise seed of sample `id` is `derive_seed(seed, id, 0)`.
pub fn noise_study(samples: &[Solved<'_>], sigma: f64, seed: u64, opts: &SuiteOptions) -> Result<SuiteReport> {
    let warm: Vec<VelocityField> = samples
        .par_iter()
        .map(|s| perturb_field(s.field, s.grid, sigma, derive_seed(seed, s.id, 0)))
        .collect::<Result<_>>()?;
    let cases: Vec<BenchCase<'_>> = samples
        .iter()
        .zip(&warm)
        .map(|(s, w)| BenchCase {
            id: s.id,
            grid: s.grid,
            warm_field: w,
            params: s.params,
        })
        .collect();
    bench_suite(&cases, opts)
}
