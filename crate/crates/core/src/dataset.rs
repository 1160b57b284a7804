//! Dataset pipeline (generate, filter, simulate, record) and the binary
//! record format.
//!
//! Record layout, all integers and floats little-endian:
//!
//! | offset | size | content                                         |
//! |--------|------|-------------------------------------------------|
//! | 0      | 4    | magic `PFL1`                                    |
//! | 4      | 2    | version (u16)                                   |
//! | 6      | 2    | L (u16)                                         |
//! | 8      | 4    | flags (u32), bit 0 = velocity planes present    |
//! | 12     | 4    | porosity (f32)                                  |
//! | 16     | 32   | τ, g_x, g_y, tolerance (4 × f64)                |
//! | 48     | ⌈L²/8⌉ | occupancy, row-major, LSB first, 1 = solid    |
//! | …      | 4 L² | u_x plane (f32, row-major), if flagged          |
//! | …      | 4 L² | u_y plane (f32, row-major), if flagged          |
//! | end−4  | 4    | CRC-32 of every preceding byte                  |

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::{Rng, RngCore, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    add_pipe_walls, gen_shapes, gen_trig_field, percolates, threshold_to_porosity, Axis,
    ShapeParams, StructureGrid, WaveSource,
};
use crate::lbm::{solve, LbmParams, VelocityField};
use crate::properties::{summary, MacroProperties};

pub const MAGIC: [u8; 4] = *b"PFL1";
pub const FORMAT_VERSION: u16 = 1;
pub const FLAG_HAS_FIELD: u32 = 1;
pub const HEADER_LEN: usize = 48;
pub const CHECKSUM_LEN: usize = 4;
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const PROVENANCE_FILE: &str = "provenance.csv";
pub const FAILURES_FILE: &str = "failures.csv";

/// Contents of one record file.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordFile {
    pub grid: StructureGrid,
    /// Only τ, force and tolerance are stored; the rest read back as defaults.
    pub params: LbmParams,
    pub field: Option<VelocityField>,
}

pub fn mask_bytes(size: usize) -> usize {
    (size * size).div_ceil(8)
}

pub fn encoded_len(size: usize, has_field: bool) -> usize {
    let planes = if has_field { 2 * 4 * size * size } else { 0 };
    HEADER_LEN + mask_bytes(size) + planes + CHECKSUM_LEN
}

pub fn encode(record: &RecordFile) -> Result<Vec<u8>> {
    let size = record.grid.size();
    let size16 = u16::try_from(size).map_err(|_| Error::param(format!("grid size {size} exceeds u16")))?;
    let p = &record.params;
    for (name, v) in [("tau", p.tau), ("force_x", p.force[0]), ("force_y", p.force[1]), ("tol", p.tol)] {
        if !v.is_finite() {
            return Err(Error::data(format!("parameter {name} is not finite")));
        }
    }
    let flags = if record.field.is_some() { FLAG_HAS_FIELD } else { 0 };
    let mut out = Vec::with_capacity(encoded_len(size, record.field.is_some()));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&size16.to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&(record.grid.porosity() as f32).to_le_bytes());
    for v in [p.tau, p.force[0], p.force[1], p.tol] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut mask = vec![0u8; mask_bytes(size)];
    for (i, &s) in record.grid.solid().iter().enumerate() {
        if s {
            mask[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&mask);
    if let Some(field) = &record.field {
        field.check_size(size, "record")?;
        for plane in [field.ux(), field.uy()] {
            for &v in plane {
                let single = v as f32;
                if !single.is_finite() {
                    return Err(Error::data("velocity field contains non-finite values"));
                }
                out.extend_from_slice(&single.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn le_f32(b: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn le_f64(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

pub fn decode(bytes: &[u8]) -> Result<RecordFile> {
    if bytes.len() < MAGIC.len() {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    if bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = le_u16(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let size = le_u16(bytes, 6) as usize;
    let flags = le_u32(bytes, 8);
    let has_field = flags & FLAG_HAS_FIELD != 0;
    let expected = encoded_len(size, has_field);
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::data(format!(
            "record has {} trailing bytes",
            bytes.len() - expected
        )));
    }
    let body = &bytes[..expected - CHECKSUM_LEN];
    let stored = le_u32(bytes, expected - CHECKSUM_LEN);
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    if flags & !FLAG_HAS_FIELD != 0 {
        return Err(Error::data(format!("unknown flag bits {flags:#x}")));
    }

    let porosity = le_f32(bytes, 12);
    let params = LbmParams {
        tau: le_f64(bytes, 16),
        force: [le_f64(bytes, 24), le_f64(bytes, 32)],
        tol: le_f64(bytes, 40),
        ..LbmParams::default()
    };
    let mask = &bytes[HEADER_LEN..HEADER_LEN + mask_bytes(size)];
    let solid = (0..size * size).map(|i| mask[i / 8] >> (i % 8) & 1 == 1).collect();
    let grid = StructureGrid::from_solid(size, solid)?;
    if grid.porosity() as f32 != porosity {
        return Err(Error::data(format!(
            "header porosity {porosity} disagrees with occupancy ({})",
            grid.porosity()
        )));
    }
    let field = if has_field {
        let n = size * size;
        let start = HEADER_LEN + mask_bytes(size);
        let plane = |k: usize| -> Vec<f64> {
            (0..n)
                .map(|i| le_f32(bytes, start + 4 * (k * n + i)) as f64)
                .collect()
        };
        let field = VelocityField::new(size, plane(0), plane(1))?;
        if !field.is_finite() {
            return Err(Error::data("velocity planes contain non-finite values"));
        }
        Some(field)
    } else {
        None
    };
    Ok(RecordFile { grid, params, field })
}

pub fn write_record(path: &Path, record: &RecordFile) -> Result<()> {
    let bytes = encode(record)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_record(path: &Path) -> Result<RecordFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Rounds every component to the f32 precision used on disk.
pub fn to_storage_precision(field: &VelocityField) -> VelocityField {
    let round = |p: &[f64]| p.iter().map(|v| *v as f32 as f64).collect::<Vec<_>>();
    VelocityField::new(field.size(), round(field.ux()), round(field.uy())).expect("same size")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GeneratorKind {
    Trig,
    Shapes { p_circle: f64 },
    Pipe { thickness: usize, central: bool },
}

impl GeneratorKind {
    pub fn name(&self) -> &'static str {
        match self {
            GeneratorKind::Trig => "trig",
            GeneratorKind::Shapes { .. } => "shapes",
            GeneratorKind::Pipe { .. } => "pipe",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: GeneratorKind,
    /// Seed the structure was generated from (after any retries).
    pub seed: u64,
    /// Number of rejected (non-percolating) draws before this one.
    pub attempt: u32,
    /// Porosity drawn for the structure (before pipe walls, if any).
    pub target_porosity: f64,
}

#[derive(Debug, Clone)]
pub struct DatasetRecord {
    pub id: u64,
    pub grid: StructureGrid,
    /// Converged solution, rounded to storage precision.
    pub field: VelocityField,
    pub properties: MacroProperties,
    pub provenance: Provenance,
    pub iterations: u64,
    pub params: LbmParams,
}

impl DatasetRecord {
    pub fn file_name(&self) -> String {
        record_file_name(self.id)
    }

    pub fn to_file(&self) -> RecordFile {
        RecordFile {
            grid: self.grid.clone(),
            params: self.params,
            field: Some(self.field.clone()),
        }
    }
}

pub fn record_file_name(id: u64) -> String {
    format!("record_{id:05}.pfl")
}

#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub count: usize,
    pub size: usize,
    pub porosity_range: (f64, f64),
    pub kind: GeneratorKind,
    pub master_seed: u64,
    pub params: LbmParams,
    /// Non-percolating draws tolerated per record before giving up.
    pub max_retries: u32,
}

impl DatasetConfig {
    pub fn new(count: usize, size: usize, kind: GeneratorKind, master_seed: u64) -> Self {
        Self {
            count,
            size,
            porosity_range: (0.70, 0.95),
            kind,
            master_seed,
            params: LbmParams::default(),
            max_retries: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.porosity_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::param(format!("porosity range [{lo}, {hi}] invalid")));
        }
        if self.size < 8 || self.size > u16::MAX as usize {
            return Err(Error::param(format!("size {} outside [8, 65535]", self.size)));
        }
        self.params.validate()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of draw `attempt` for record `index`:
/// `splitmix64(splitmix64(splitmix64(master) ^ index) ^ attempt)`.
///
/// Depends only on its arguments, so records can be generated in any order.
pub fn derive_seed(master: u64, index: u64, attempt: u32) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ index) ^ attempt as u64)
}

/// Structure for one seed: the seed fixes the target porosity (uniform in
/// `range`, returned alongside) and every random choice of the generator.
pub fn generate_structure(
    kind: GeneratorKind,
    seed: u64,
    size: usize,
    range: (f64, f64),
) -> Result<(StructureGrid, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = if range.0 == range.1 {
        range.0
    } else {
        rng.random_range(range.0..=range.1)
    };
    let inner_seed = rng.next_u64();
    let grid = match kind {
        GeneratorKind::Trig => {
            let field = gen_trig_field(inner_seed, &WaveSource::Sample, size)?;
            threshold_to_porosity(&field, target)
        }
        GeneratorKind::Shapes { p_circle } => {
            gen_shapes(inner_seed, &ShapeParams::new(target, p_circle), size)
        }
        GeneratorKind::Pipe { thickness, central } => {
            let field = gen_trig_field(inner_seed, &WaveSource::Sample, size)?;
            add_pipe_walls(&threshold_to_porosity(&field, target)?, thickness, central)
        }
    }?;
    Ok((grid, target))
}

/// First percolating structure in the record's retry sequence.
pub fn percolating_structure(config: &DatasetConfig, index: u64) -> Result<(StructureGrid, Provenance)> {
    for attempt in 0..=config.max_retries {
        let seed = derive_seed(config.master_seed, index, attempt);
        let (grid, target_porosity) =
            generate_structure(config.kind, seed, config.size, config.porosity_range)?;
        if percolates(&grid, Axis::X) {
            return Ok((
                grid,
                Provenance {
                    kind: config.kind,
                    seed,
                    attempt,
                    target_porosity,
                },
            ));
        }
    }
    Err(Error::NotPercolating)
}

/// Rebuilds a record from its structure: simulate, round to storage
/// precision, then measure.
pub fn simulate_record(
    id: u64,
    grid: StructureGrid,
    provenance: Provenance,
    params: &LbmParams,
) -> Result<DatasetRecord> {
    let converged = solve(&grid, params)?;
    let mut field = to_storage_precision(&converged.field);
    field.mask_solids(&grid);
    let properties = summary(&field, &grid, params)?;
    Ok(DatasetRecord {
        id,
        grid,
        field,
        properties,
        provenance,
        iterations: converged.iterations,
        params: *params,
    })
}

#[derive(Debug, Clone)]
pub struct SampleFailure {
    pub index: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct DatasetOutput {
    pub records: Vec<DatasetRecord>,
    pub failures: Vec<SampleFailure>,
}

/// Generates `count` records in parallel (current rayon pool); results are
/// gathered in index order. Samples whose simulation fails are logged and
/// reported in `failures`.
pub fn generate_dataset(config: &DatasetConfig) -> Result<DatasetOutput> {
    config.validate()?;
    let outcomes: Vec<(u64, Result<DatasetRecord>)> = (0..config.count as u64)
        .into_par_iter()
        .map(|index| {
            let result = percolating_structure(config, index)
                .and_then(|(grid, prov)| simulate_record(index, grid, prov, &config.params));
            (index, result)
        })
        .collect();
    let mut out = DatasetOutput::default();
    for (index, result) in outcomes {
        match result {
            Ok(record) => out.records.push(record),
            Err(e) => {
                warn!("sample {index} skipped: {e}");
                out.failures.push(SampleFailure {
                    index,
                    reason: e.to_string(),
                });
            }
        }
    }
    info!(
        "generated {} records ({} skipped)",
        out.records.len(),
        out.failures.len()
    );
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub const MANIFEST_HEADER: &str = "id,file,phi,tau,k,iterations";

/// Writes one file per record, then the manifest, provenance and failure
/// lists.
pub fn write_dataset(dir: &Path, output: &DatasetOutput) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    output
        .records
        .par_iter()
        .try_for_each(|r| write_record(&dir.join(r.file_name()), &r.to_file()))?;

    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    let mut provenance = String::from("id,kind,seed,attempt,target_porosity\n");
    for r in &output.records {
        let p = &r.properties;
        manifest.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.id,
            r.file_name(),
            p.porosity,
            p.tortuosity,
            p.permeability,
            r.iterations
        ));
        provenance.push_str(&format!(
            "{},{},{},{},{}\n",
            r.id,
            r.provenance.kind.name(),
            r.provenance.seed,
            r.provenance.attempt,
            r.provenance.target_porosity
        ));
    }
    write_text(&dir.join(MANIFEST_FILE), &manifest)?;
    write_text(&dir.join(PROVENANCE_FILE), &provenance)?;
    let mut failures = String::from("index,reason\n");
    for f in &output.failures {
        failures.push_str(&format!("{},\"{}\"\n", f.index, f.reason.replace('"', "'")));
    }
    write_text(&dir.join(FAILURES_FILE), &failures)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: u64,
    pub file: PathBuf,
    pub porosity: f64,
    pub tortuosity: f64,
    pub permeability: f64,
    pub iterations: u64,
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == MANIFEST_HEADER => {}
        _ => return Err(Error::data(format!("{}: unexpected manifest header", path.display()))),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let cols: Vec<&str> = line.split(',').collect();
            let bad = || Error::data(format!("malformed manifest line: {line}"));
            if cols.len() != 6 {
                return Err(bad());
            }
            Ok(ManifestEntry {
                id: cols[0].parse().map_err(|_| bad())?,
                file: dir.join(cols[1]),
                porosity: cols[2].parse().map_err(|_| bad())?,
                tortuosity: cols[3].parse().map_err(|_| bad())?,
                permeability: cols[4].parse().map_err(|_| bad())?,
                iterations: cols[5].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Split {
    pub train: Vec<u64>,
    pub validation: Vec<u64>,
    pub test: Vec<u64>,
}

pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.70, 0.15, 0.15);

/// Seeded shuffle, then consecutive slices of rounded sizes (the test part
/// takes the remainder).
pub fn split(ids: &[u64], seed: u64, fractions: (f64, f64, f64)) -> Result<Split> {
    if ids.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::param(format!("split fractions ({a}, {b}, {c}) must be in [0,1] and sum to 1")));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = shuffled.len();
    let n_train = ((a * n as f64).round() as usize).min(n);
    let n_val = ((b * n as f64).round() as usize).min(n - n_train);
    let test = shuffled.split_off(n_train + n_val);
    let validation = shuffled.split_off(n_train);
    Ok(Split {
        train: shuffled,
        validation,
        test,
    })
}
