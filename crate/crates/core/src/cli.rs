//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or parameter error, 2 data error,
//! 3 solver did not converge. Diagnostics go to standard error as a single
//! line; primary outputs go to standard output or to the named files.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::augment::{roll_field, sample_augmentation};
use crate::config::Config;
use crate::dataset::{
    self, derive_seed, read_manifest, read_record, record_file_name, write_dataset, write_record, RecordFile,
    MANIFEST_FILE, MANIFEST_HEADER,
};
use crate::error::{Error, Result};
use crate::geometry::{
    add_pipe_walls, gen_shapes, gen_trig_field, percolates, threshold_to_porosity, Axis, ShapeParams,
    Wave, WaveSource, WaveSpec,
};
use crate::lbm::{init_cold, LbmParams, VelocityField};
use crate::losses::{total_loss, LossReport, Translation};
use crate::properties::{summary, MacroProperties};
use crate::stats::{bootstrap_ci_median, quantile, wilcoxon_signed_rank};
use crate::uncertainty::{coverage_of_pairs, residuals, QuantileBand, ResidualPair};
use crate::warmstart::{bench_suite, noise_study, BenchCase, Solved, SuiteOptions, SuiteReport, WarmInit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "porelab", version, about = "Pore-scale flow laboratory")]
pub struct Cli {
    /// Output format for tabular results.
    #[arg(long, global = true, value_enum, default_value = "csv")]
    pub format: Format,
    /// Worker threads for per-sample parallelism (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// key = value configuration file; explicit flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a single structure file.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Run the LBM solver on a structure.
    Simulate(SimulateArgs),
    /// Macroscopic properties of a solved field.
    Props(PropsArgs),
    /// Physics-informed loss of a prediction.
    Loss(LossArgs),
    /// Random flip/roll augmentation of dataset records.
    Augment(AugmentArgs),
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Cold vs. warm start benchmark over a dataset.
    Warmstart(WarmstartArgs),
    /// Summary statistics of CSV columns.
    Stats(StatsArgs),
    #[command(subcommand)]
    Band(BandCommand),
    /// Generate a trig dataset and run the noise warm-start study on it.
    Repro(ReproArgs),
}

#[derive(Debug, Args)]
pub struct GenCommon {
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub porosity: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum GenCommand {
    /// Thresholded random trigonometric field.
    Trig {
        #[command(flatten)]
        common: GenCommon,
        /// Explicit waves `kx:ky:phase,...` instead of sampled ones.
        #[arg(long)]
        waves: Option<String>,
    },
    /// Random boxes and circles.
    Shapes {
        #[command(flatten)]
        common: GenCommon,
        #[arg(long)]
        p_circle: Option<f64>,
        #[arg(long, default_value_t = crate::geometry::DEFAULT_OBSTACLE_SIZES.0)]
        min_size: usize,
        #[arg(long, default_value_t = crate::geometry::DEFAULT_OBSTACLE_SIZES.1)]
        max_size: usize,
    },
    /// Trig structure with horizontal walls.
    Pipe {
        #[command(flatten)]
        common: GenCommon,
        #[arg(long)]
        thickness: Option<usize>,
        #[arg(long)]
        central: bool,
    },
}

#[derive(Debug, Args, Default)]
pub struct SolverFlags {
    #[arg(long)]
    pub tau: Option<f64>,
    /// Body force `gx,gy`.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    pub force: Option<(f64, f64)>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<u64>,
    #[arg(long)]
    pub check_interval: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// Field file to start from instead of rest.
    #[arg(long)]
    pub warm: Option<PathBuf>,
    /// `reconstructed` (default) or `equilibrium`.
    #[arg(long)]
    pub warm_init: Option<String>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PropsArgs {
    #[arg(long)]
    pub structure: PathBuf,
    #[arg(long)]
    pub field: PathBuf,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    #[arg(long)]
    pub structure: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    /// Prediction for the translated structure; `l_perio` is 0 without it.
    #[arg(long)]
    pub pred_translated: Option<PathBuf>,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Translation (default: half the domain).
    #[arg(long)]
    pub tx: Option<usize>,
    #[arg(long)]
    pub ty: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub p_flip: Option<f64>,
    #[arg(long)]
    pub max_frac: Option<f64>,
    /// Copy destination; records are rewritten in place without it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Generate, simulate and store a dataset.
    Gen(DatasetGenArgs),
    /// Seeded train/validation/test split of a dataset's ids.
    Split {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// `train,validation,test`.
        #[arg(long, value_parser = parse_triple, default_value = "0.7,0.15,0.15")]
        fractions: (f64, f64, f64),
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct DatasetGenArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub porosity_min: Option<f64>,
    #[arg(long)]
    pub porosity_max: Option<f64>,
    /// trig, shapes or pipe.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub p_circle: Option<f64>,
    #[arg(long)]
    pub thickness: Option<usize>,
    #[arg(long)]
    pub central: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub solver: SolverFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WarmstartArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// `files:<dir>` (field files named like the records) or `noise:<sigma>`.
    #[arg(long)]
    pub warm_source: String,
    /// `reconstructed` (default) or `equilibrium`.
    #[arg(long)]
    pub warm_init: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub column: String,
    /// Second column for a paired Wilcoxon test against `--column`.
    #[arg(long)]
    pub paired: Option<String>,
    #[arg(long)]
    pub resamples: Option<usize>,
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum BandCommand {
    /// Residual pairs `(|v|_pred, |v|_ref - |v|_pred)` over pore pixels.
    Pairs {
        /// Reference field files (each carries its structure).
        #[arg(long = "ref", required = true, num_args = 1..)]
        reference: Vec<PathBuf>,
        /// Prediction files, one per reference.
        #[arg(long, required = true, num_args = 1..)]
        pred: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a quantile band to a pairs CSV.
    Fit {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long, value_parser = parse_pair)]
        levels: Option<(f64, f64)>,
        #[arg(long)]
        min_per_bin: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Band limits at the given predicted values.
    Eval {
        #[arg(long)]
        band: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        x: Vec<f64>,
    },
    /// Fraction of pairs whose reference value lies in the band.
    Coverage {
        #[arg(long)]
        band: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ReproArgs {
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub size: Option<usize>,
    /// Directory for the dataset and report; nothing is written without it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let v = parse_list(s)?;
    match v[..] {
        [a, b] => Ok((a, b)),
        _ => Err(format!("expected two comma-separated numbers, got `{s}`")),
    }
}

fn parse_triple(s: &str) -> std::result::Result<(f64, f64, f64), String> {
    let v = parse_list(s)?;
    match v[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(format!("expected three comma-separated numbers, got `{s}`")),
    }
}

fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("not a number: `{t}`")))
        .collect()
}

fn parse_waves(s: &str) -> Result<WaveSpec> {
    let waves = s
        .split(',')
        .map(|w| {
            let parts: Vec<&str> = w.split(':').map(str::trim).collect();
            let bad = || Error::param(format!("wave `{w}` is not kx:ky:phase"));
            if parts.len() != 3 {
                return Err(bad());
            }
            Ok(Wave {
                kx: parts[0].parse().map_err(|_| bad())?,
                ky: parts[1].parse().map_err(|_| bad())?,
                phase: parts[2].parse().map_err(|_| bad())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = WaveSpec { waves };
    spec.validate()?;
    Ok(spec)
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let ctx = Ctx {
        format: cli.format,
        config,
    };
    match cli.jobs {
        Some(0) => Err(Error::param("--jobs must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::param(format!("thread pool: {e}")))?
            .install(|| ctx.dispatch(cli.command)),
        None => ctx.dispatch(cli.command),
    }
}

struct Ctx {
    format: Format,
    config: Config,
}

fn print(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
}

fn json_line<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable output");
    s.push('\n');
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_field_file(path: &Path) -> Result<(RecordFile, VelocityField)> {
    let rec = read_record(path)?;
    let field = rec
        .field
        .clone()
        .ok_or_else(|| Error::data(format!("{}: record holds no velocity field", path.display())))?;
    Ok((rec, field))
}

fn read_pairs(path: &Path) -> Result<Vec<ResidualPair>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    reader
        .deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::data(format!("{}: {other:?}", path.display())),
    }
}

impl Ctx {
    fn solver_params(&self, base: LbmParams, flags: &SolverFlags) -> Result<LbmParams> {
        let mut p = base;
        if let Some(t) = flags.tau {
            p.tau = t;
        }
        if let Some((gx, gy)) = flags.force {
            p.force = [gx, gy];
        }
        if let Some(t) = flags.tol {
            p.tol = t;
        }
        if let Some(m) = flags.max_iters {
            p.max_iters = m;
        }
        if let Some(c) = flags.check_interval {
            p.check_interval = c;
        }
        p.validate()?;
        Ok(p)
    }

    fn warm_init(&self, flag: &Option<String>) -> Result<WarmInit> {
        flag.as_deref().map_or(Ok(self.config.warm_init), WarmInit::parse)
    }

    fn suite_options(&self) -> SuiteOptions {
        SuiteOptions {
            warm_init: self.config.warm_init,
            bootstrap_resamples: self.config.bootstrap_resamples,
            level: self.config.ci_level,
            seed: self.config.seed,
        }
    }

    /// Stored physics with the run-control settings of the configuration.
    fn record_params(&self, rec: &RecordFile) -> LbmParams {
        LbmParams {
            rho0: self.config.lbm.rho0,
            check_interval: self.config.lbm.check_interval,
            max_iters: self.config.lbm.max_iters,
            ..rec.params
        }
    }

    fn dispatch(&self, command: Command) -> Result<()> {
        match command {
            Command::Gen(g) => self.gen(g),
            Command::Simulate(a) => self.simulate(a),
            Command::Props(a) => self.props(a),
            Command::Loss(a) => self.loss(a),
            Command::Augment(a) => self.augment(a),
            Command::Dataset(d) => self.dataset(d),
            Command::Warmstart(a) => self.warmstart(a),
            Command::Stats(a) => self.stats(a),
            Command::Band(b) => self.band(b),
            Command::Repro(a) => self.repro(a),
        }
    }

    fn gen(&self, command: GenCommand) -> Result<()> {
        let cfg = &self.config;
        let (common, grid) = match command {
            GenCommand::Trig { common, waves } => {
                let size = common.size.unwrap_or(cfg.size);
                let source = match waves {
                    Some(w) => WaveSource::Explicit(parse_waves(&w)?),
                    None => WaveSource::Sample,
                };
                let field = gen_trig_field(common.seed.unwrap_or(cfg.seed), &source, size)?;
                let grid = threshold_to_porosity(&field, common.porosity)?;
                (common, grid)
            }
            GenCommand::Shapes {
                common,
                p_circle,
                min_size,
                max_size,
            } => {
                let mut params = ShapeParams::new(common.porosity, p_circle.unwrap_or(cfg.p_circle));
                params.size_range = (min_size, max_size);
                let grid = gen_shapes(common.seed.unwrap_or(cfg.seed), &params, common.size.unwrap_or(cfg.size))?;
                (common, grid)
            }
            GenCommand::Pipe {
                common,
                thickness,
                central,
            } => {
                let size = common.size.unwrap_or(cfg.size);
                let field = gen_trig_field(common.seed.unwrap_or(cfg.seed), &WaveSource::Sample, size)?;
                let base = threshold_to_porosity(&field, common.porosity)?;
                let grid = add_pipe_walls(
                    &base,
                    thickness.unwrap_or(cfg.pipe_thickness),
                    central || cfg.pipe_central,
                )?;
                (common, grid)
            }
        };
        let percolating = percolates(&grid, Axis::X);
        if !percolating {
            warn!("generated structure does not percolate along x");
        }
        write_record(
            &common.out,
            &RecordFile {
                grid: grid.clone(),
                params: cfg.lbm,
                field: None,
            },
        )?;
        self.emit_kv(&[
            ("porosity", grid.porosity().to_string()),
            ("percolates", percolating.to_string()),
            ("file", common.out.display().to_string()),
        ]);
        Ok(())
    }

    fn emit_kv(&self, pairs: &[(&str, String)]) {
        match self.format {
            Format::Csv => print(&pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect::<String>()),
            Format::Json => {
                let map: serde_json::Map<String, serde_json::Value> = pairs
                    .iter()
                    .map(|(k, v)| {
                        let value = v
                            .parse::<f64>()
                            .ok()
                            .filter(|f| f.is_finite())
                            .map(|f| json!(f))
                            .or_else(|| v.parse::<bool>().ok().map(|b| json!(b)))
                            .unwrap_or_else(|| json!(v));
                        (k.to_string(), value)
                    })
                    .collect();
                print(&json_line(&map));
            }
        }
    }

    fn simulate(&self, a: SimulateArgs) -> Result<()> {
        let rec = read_record(&a.input)?;
        let params = self.solver_params(self.config.lbm, &a.solver)?;
        let mut state = match &a.warm {
            Some(w) => {
                let (_, field) = read_field_file(w)?;
                self.warm_init(&a.warm_init)?.init(&rec.grid, &field, &params)?
            }
            None => init_cold(&rec.grid, &params)?,
        };
        let start = Instant::now();
        let outcome = state.run_to_convergence();
        let wall = start.elapsed().as_secs_f64();
        let (field, iterations, failure) = match outcome {
            Ok(c) => (c.field, c.iterations, None),
            Err(Error::NonConvergence {
                iterations,
                last_change,
                field,
            }) => ((*field).clone(), iterations, Some(Error::NonConvergence {
                iterations,
                last_change,
                field,
            })),
            Err(e) => return Err(e),
        };
        if let Some(out) = &a.output {
            let mut stored = dataset::to_storage_precision(&field);
            stored.mask_solids(&rec.grid);
            write_record(
                out,
                &RecordFile {
                    grid: rec.grid.clone(),
                    params,
                    field: Some(stored),
                },
            )?;
        }
        self.emit_kv(&[
            ("iterations", iterations.to_string()),
            ("converged", failure.is_none().to_string()),
            ("wall_time_s", format!("{wall:.6}")),
        ]);
        failure.map_or(Ok(()), Err)
    }

    fn props(&self, a: PropsArgs) -> Result<()> {
        let structure = read_record(&a.structure)?;
        let (rec, field) = read_field_file(&a.field)?;
        if rec.grid != structure.grid {
            return Err(Error::data("field file was solved on a different structure"));
        }
        let props = summary(&field, &structure.grid, &self.record_params(&rec))?;
        self.emit_rows(MacroProperties::CSV_HEADER, &[props.csv_row()], &props);
        Ok(())
    }

    fn emit_rows<T: Serialize + ?Sized>(&self, header: &str, rows: &[String], value: &T) {
        match self.format {
            Format::Csv => {
                let mut out = format!("{header}\n");
                for r in rows {
                    out.push_str(r);
                    out.push('\n');
                }
                print(&out);
            }
            Format::Json => print(&json_line(value)),
        }
    }

    fn loss(&self, a: LossArgs) -> Result<()> {
        let grid = read_record(&a.structure)?.grid;
        let size = grid.size();
        let (_, pred) = read_field_file(&a.pred)?;
        let (_, reference) = read_field_file(&a.reference)?;
        let t = Translation::new(
            a.tx.unwrap_or(size / 2) % size.max(1),
            a.ty.unwrap_or(size / 2) % size.max(1),
            size,
        )?;
        let pred_ts = match &a.pred_translated {
            Some(p) => read_field_file(p)?.1,
            None => {
                warn!("no translated prediction given; l_perio reported as 0");
                roll_field(&pred, t)
            }
        };
        let mut w = self.config.weights;
        w.alpha = a.alpha.unwrap_or(w.alpha);
        w.beta = a.beta.unwrap_or(w.beta);
        w.gamma = a.gamma.unwrap_or(w.gamma);
        w.delta = a.delta.unwrap_or(w.delta);
        let report: LossReport = total_loss(&pred, &pred_ts, &reference, &grid, t, &w)?;
        self.emit_rows(LossReport::CSV_HEADER, &[report.csv_row()], &report);
        Ok(())
    }

    fn augment(&self, a: AugmentArgs) -> Result<()> {
        let seed = a.seed.unwrap_or(self.config.seed);
        let p_flip = a.p_flip.unwrap_or(self.config.p_flip);
        let max_frac = a.max_frac.unwrap_or(self.config.max_frac);
        let entries = read_manifest(&a.dataset)?;
        let dest = a.out.clone().unwrap_or_else(|| a.dataset.clone());
        fs::create_dir_all(&dest).map_err(|e| Error::io(&dest, e))?;
        let rows = entries
            .par_iter()
            .map(|e| -> Result<String> {
                let (rec, field) = read_field_file(&e.file)?;
                let aug = sample_augmentation(derive_seed(seed, e.id, 0), p_flip, max_frac, rec.grid.size())?;
                let (grid, field) = aug.apply(&rec.grid, &field)?;
                let params = self.record_params(&rec);
                let props = summary(&field, &grid, &params)?;
                let name = record_file_name(e.id);
                write_record(
                    &dest.join(&name),
                    &RecordFile {
                        grid,
                        params: rec.params,
                        field: Some(field),
                    },
                )?;
                Ok(format!(
                    "{},{},{},{},{},{}",
                    e.id, name, props.porosity, props.tortuosity, props.permeability, e.iterations
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut manifest = format!("{MANIFEST_HEADER}\n");
        for r in &rows {
            manifest.push_str(r);
            manifest.push('\n');
        }
        write_text(&dest.join(MANIFEST_FILE), &manifest)?;
        for extra in [dataset::PROVENANCE_FILE, dataset::FAILURES_FILE] {
            let src = a.dataset.join(extra);
            if dest != a.dataset && src.exists() {
                fs::copy(&src, dest.join(extra)).map_err(|e| Error::io(&src, e))?;
            }
        }
        info!("augmented {} records into {}", rows.len(), dest.display());
        self.emit_kv(&[("records", rows.len().to_string()), ("dir", dest.display().to_string())]);
        Ok(())
    }

    fn dataset(&self, command: DatasetCommand) -> Result<()> {
        match command {
            DatasetCommand::Gen(a) => {
                let mut cfg = self.config.clone();
                if let Some(v) = a.size {
                    cfg.size = v;
                }
                if let Some(v) = a.porosity_min {
                    cfg.porosity_min = v;
                }
                if let Some(v) = a.porosity_max {
                    cfg.porosity_max = v;
                }
                if let Some(v) = a.kind {
                    cfg.kind = v;
                }
                if let Some(v) = a.p_circle {
                    cfg.p_circle = v;
                }
                if let Some(v) = a.thickness {
                    cfg.pipe_thickness = v;
                }
                cfg.pipe_central |= a.central;
                if let Some(v) = a.seed {
                    cfg.seed = v;
                }
                cfg.lbm = self.solver_params(cfg.lbm, &a.solver)?;
                let out = a.out.unwrap_or_else(|| cfg.output_dir.clone());
                let output = dataset::generate_dataset(&cfg.dataset(a.count)?)?;
                write_dataset(&out, &output)?;
                self.emit_kv(&[
                    ("records", output.records.len().to_string()),
                    ("failures", output.failures.len().to_string()),
                    ("dir", out.display().to_string()),
                ]);
                Ok(())
            }
            DatasetCommand::Split {
                dataset: dir,
                seed,
                fractions,
                out,
            } => {
                let ids: Vec<u64> = read_manifest(&dir)?.iter().map(|e| e.id).collect();
                let s = dataset::split(&ids, seed.unwrap_or(self.config.split_seed), fractions)?;
                let text = match self.format {
                    Format::Csv => {
                        let mut t = String::from("id,split\n");
                        for (name, part) in [("train", &s.train), ("validation", &s.validation), ("test", &s.test)] {
                            for id in part {
                                t.push_str(&format!("{id},{name}\n"));
                            }
                        }
                        t
                    }
                    Format::Json => json_line(&s),
                };
                match out {
                    Some(p) => write_text(&p, &text),
                    None => {
                        print(&text);
                        Ok(())
                    }
                }
            }
        }
    }

    fn load_solved(&self, dir: &Path) -> Result<Vec<(u64, RecordFile, VelocityField)>> {
        read_manifest(dir)?
            .par_iter()
            .map(|e| {
                let (rec, field) = read_field_file(&e.file)?;
                Ok((e.id, rec, field))
            })
            .collect()
    }

    fn report(&self, report: &SuiteReport, out: Option<&Path>) -> Result<()> {
        if let Some(p) = out {
            write_text(p, &report.to_csv())?;
        }
        match self.format {
            Format::Json => print(&json_line(report)),
            Format::Csv => {
                if out.is_none() {
                    print(&report.to_csv());
                }
                let mut kv = vec![("samples", report.results.len().to_string())];
                if let Some(s) = &report.stats {
                    kv.extend([
                        ("converged", s.n.to_string()),
                        ("fraction_faster", s.fraction_faster.to_string()),
                        ("median_reduction", s.median_reduction.to_string()),
                        ("q1", s.q1.to_string()),
                        ("q3", s.q3.to_string()),
                        ("ci_low", s.ci_low.to_string()),
                        ("ci_high", s.ci_high.to_string()),
                        ("wilcoxon_p", s.wilcoxon.p_value.to_string()),
                    ]);
                }
                let text: String = kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
                if out.is_some() {
                    print(&text);
                } else {
                    eprint!("{text}");
                }
            }
        }
        Ok(())
    }

    fn warmstart(&self, a: WarmstartArgs) -> Result<()> {
        let solved = self.load_solved(&a.dataset)?;
        let opts = SuiteOptions {
            warm_init: self.warm_init(&a.warm_init)?,
            ..self.suite_options()
        };
        let report = if let Some(sigma) = a.warm_source.strip_prefix("noise:") {
            let sigma: f64 = sigma
                .parse()
                .map_err(|_| Error::param(format!("bad noise level in `{}`", a.warm_source)))?;
            let samples: Vec<Solved<'_>> = solved
                .iter()
                .map(|(id, rec, field)| Solved {
                    id: *id,
                    grid: &rec.grid,
                    field,
                    params: self.record_params(rec),
                })
                .collect();
            noise_study(&samples, sigma, a.seed.unwrap_or(self.config.seed), &opts)?
        } else if let Some(dir) = a.warm_source.strip_prefix("files:") {
            let warm: Vec<VelocityField> = solved
                .iter()
                .map(|(id, rec, _)| {
                    let (_, f) = read_field_file(&Path::new(dir).join(record_file_name(*id)))?;
                    f.check_size(rec.grid.size(), "warm field")?;
                    Ok(f)
                })
                .collect::<Result<_>>()?;
            let cases: Vec<BenchCase<'_>> = solved
                .iter()
                .zip(&warm)
                .map(|((id, rec, _), w)| BenchCase {
                    id: *id,
                    grid: &rec.grid,
                    warm_field: w,
                    params: self.record_params(rec),
                })
                .collect();
            bench_suite(&cases, &opts)?
        } else {
            return Err(Error::param(format!(
                "warm source `{}` must be files:<dir> or noise:<sigma>",
                a.warm_source
            )));
        };
        self.report(&report, a.out.as_deref())
    }

    fn stats(&self, a: StatsArgs) -> Result<()> {
        let mut reader = csv::Reader::from_path(&a.input).map_err(|e| csv_error(&a.input, e))?;
        let headers = reader.headers().map_err(|e| csv_error(&a.input, e))?.clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::data(format!("column `{name}` not found")))
        };
        let col = find(&a.column)?;
        let paired = a.paired.as_deref().map(find).transpose()?;
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for row in reader.records() {
            let row = row.map_err(|e| csv_error(&a.input, e))?;
            let value = |i: usize| -> Result<f64> {
                let cell = row.get(i).unwrap_or("").trim();
                cell.parse()
                    .map_err(|_| Error::data(format!("non-numeric cell `{cell}`")))
            };
            xs.push(value(col)?);
            if let Some(p) = paired {
                ys.push(value(p)?);
            }
        }
        let resamples = a.resamples.unwrap_or(self.config.bootstrap_resamples);
        let level = a.level.unwrap_or(self.config.ci_level);
        let (ci_low, ci_high) = bootstrap_ci_median(&xs, resamples, level, a.seed.unwrap_or(self.config.seed))?;
        let mut out = vec![
            ("n", json!(xs.len())),
            ("median", json!(quantile(&xs, 0.5)?)),
            ("q1", json!(quantile(&xs, 0.25)?)),
            ("q3", json!(quantile(&xs, 0.75)?)),
            ("ci_low", json!(ci_low)),
            ("ci_high", json!(ci_high)),
            ("ci_level", json!(level)),
        ];
        if paired.is_some() {
            let w = wilcoxon_signed_rank(&xs, &ys)?;
            out.push(("wilcoxon_statistic", json!(w.statistic)));
            out.push(("wilcoxon_p", json!(w.p_value)));
            out.push(("wilcoxon_n", json!(w.n)));
        }
        match self.format {
            Format::Csv => {
                let header: Vec<&str> = out.iter().map(|(k, _)| *k).collect();
                let row: Vec<String> = out.iter().map(|(_, v)| v.to_string()).collect();
                print(&format!("{}\n{}\n", header.join(","), row.join(",")));
            }
            Format::Json => {
                let map: serde_json::Map<String, serde_json::Value> =
                    out.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
                print(&json_line(&map));
            }
        }
        Ok(())
    }

    fn band(&self, command: BandCommand) -> Result<()> {
        let cfg = &self.config;
        match command {
            BandCommand::Pairs { reference, pred, out } => {
                if reference.len() != pred.len() {
                    return Err(Error::param("--ref and --pred must be given the same number of times"));
                }
                let mut text = String::from("x,r\n");
                for (r, p) in reference.iter().zip(&pred) {
                    let (rec, reference) = read_field_file(r)?;
                    let (_, prediction) = read_field_file(p)?;
                    for pair in residuals(&prediction, &reference, &rec.grid)? {
                        text.push_str(&format!("{},{}\n", pair.x, pair.r));
                    }
                }
                write_text(&out, &text)
            }
            BandCommand::Fit {
                pairs,
                bins,
                levels,
                min_per_bin,
                out,
            } => {
                let band = QuantileBand::fit(
                    &read_pairs(&pairs)?,
                    bins.unwrap_or(cfg.bins),
                    levels.unwrap_or(cfg.levels),
                    min_per_bin.unwrap_or(cfg.min_per_bin),
                )?;
                write_text(&out, &band.to_csv())?;
                self.emit_kv(&[("nodes", band.centers.len().to_string())]);
                Ok(())
            }
            BandCommand::Eval { band, x } => {
                let band = load_band(&band)?;
                let rows: Vec<(f64, f64, f64)> = x
                    .iter()
                    .map(|&v| {
                        let (lo, hi) = band.eval(v);
                        (v, lo, hi)
                    })
                    .collect();
                let csv: Vec<String> = rows.iter().map(|(v, lo, hi)| format!("{v},{lo},{hi}")).collect();
                let json: Vec<_> = rows
                    .iter()
                    .map(|(v, lo, hi)| json!({"x": v, "lower": lo, "upper": hi}))
                    .collect();
                self.emit_rows("x,lower,upper", &csv, &json);
                Ok(())
            }
            BandCommand::Coverage { band, pairs } => {
                let band = load_band(&band)?;
                let pairs = read_pairs(&pairs)?;
                let c = coverage_of_pairs(&band, &pairs)?;
                self.emit_kv(&[("coverage", c.to_string()), ("pairs", pairs.len().to_string())]);
                Ok(())
            }
        }
    }

    fn repro(&self, a: ReproArgs) -> Result<()> {
        let mut cfg = self.config.clone();
        cfg.kind = "trig".into();
        if let Some(s) = a.size {
            cfg.size = s;
        }
        if let Some(s) = a.seed {
            cfg.seed = s;
        }
        let sigma = a.noise.unwrap_or(cfg.noise);
        let output = dataset::generate_dataset(&cfg.dataset(a.count)?)?;
        if let Some(dir) = &a.out {
            write_dataset(&dir.join("dataset"), &output)?;
        }
        let samples: Vec<Solved<'_>> = output
            .records
            .iter()
            .map(|r| Solved {
                id: r.id,
                grid: &r.grid,
                field: &r.field,
                params: r.params,
            })
            .collect();
        let report = noise_study(&samples, sigma, cfg.seed, &self.suite_options())?;
        let out_file = a.out.as_ref().map(|d| d.join("warmstart.csv"));
        self.report(&report, out_file.as_deref())
    }
}

fn load_band(path: &Path) -> Result<QuantileBand> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    QuantileBand::from_csv(&text)
}
