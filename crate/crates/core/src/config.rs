//! Flat `key = value` run configuration shared by all subcommands.
//!
//! Lines are `key = value`; blank lines and `#` comments are ignored and
//! unknown keys are rejected. [`Config::to_text`] writes every key, so a
//! written file parses back to the same configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataset::{DatasetConfig, GeneratorKind};
use crate::error::{Error, Result};
use crate::lbm::LbmParams;
use crate::losses::LossWeights;
use crate::uncertainty::{DEFAULT_BINS, DEFAULT_LEVELS, DEFAULT_MIN_PER_BIN};
use crate::augment::{DEFAULT_FLIP_PROBABILITY, DEFAULT_MAX_ROLL_FRACTION};
use crate::warmstart::WarmInit;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub weights: LossWeights,
    pub lbm: LbmParams,
    pub size: usize,
    pub porosity_min: f64,
    pub porosity_max: f64,
    /// `trig`, `shapes` or `pipe`.
    pub kind: String,
    pub p_circle: f64,
    pub pipe_thickness: usize,
    pub pipe_central: bool,
    pub max_retries: u32,
    pub seed: u64,
    pub split_seed: u64,
    pub p_flip: f64,
    pub max_frac: f64,
    pub noise: f64,
    pub warm_init: WarmInit,
    pub bins: usize,
    pub levels: (f64, f64),
    pub min_per_bin: usize,
    pub bootstrap_resamples: usize,
    pub ci_level: f64,
    pub output_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            lbm: LbmParams::default(),
            size: 64,
            porosity_min: 0.70,
            porosity_max: 0.95,
            kind: "trig".into(),
            p_circle: 0.5,
            pipe_thickness: 2,
            pipe_central: false,
            max_retries: 1000,
            seed: 0,
            split_seed: 0,
            p_flip: DEFAULT_FLIP_PROBABILITY,
            max_frac: DEFAULT_MAX_ROLL_FRACTION,
            noise: 0.1,
            warm_init: WarmInit::default(),
            bins: DEFAULT_BINS,
            levels: DEFAULT_LEVELS,
            min_per_bin: DEFAULT_MIN_PER_BIN,
            bootstrap_resamples: 10_000,
            ci_level: 0.95,
            output_dir: PathBuf::from("out"),
        }
    }
}

pub const KEYS: &[&str] = &[
    "alpha",
    "beta",
    "gamma",
    "delta",
    "tau",
    "force_x",
    "force_y",
    "rho0",
    "tol",
    "check_interval",
    "max_iters",
    "size",
    "porosity_min",
    "porosity_max",
    "kind",
    "p_circle",
    "pipe_thickness",
    "pipe_central",
    "max_retries",
    "seed",
    "split_seed",
    "p_flip",
    "max_frac",
    "noise",
    "warm_init",
    "bins",
    "level_lo",
    "level_hi",
    "min_per_bin",
    "bootstrap_resamples",
    "ci_level",
    "output_dir",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::param(format!("config key `{key}`: cannot parse `{value}`")))
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "alpha" => self.weights.alpha = parse(key, value)?,
            "beta" => self.weights.beta = parse(key, value)?,
            "gamma" => self.weights.gamma = parse(key, value)?,
            "delta" => self.weights.delta = parse(key, value)?,
            "tau" => self.lbm.tau = parse(key, value)?,
            "force_x" => self.lbm.force[0] = parse(key, value)?,
            "force_y" => self.lbm.force[1] = parse(key, value)?,
            "rho0" => self.lbm.rho0 = parse(key, value)?,
            "tol" => self.lbm.tol = parse(key, value)?,
            "check_interval" => self.lbm.check_interval = parse(key, value)?,
            "max_iters" => self.lbm.max_iters = parse(key, value)?,
            "size" => self.size = parse(key, value)?,
            "porosity_min" => self.porosity_min = parse(key, value)?,
            "porosity_max" => self.porosity_max = parse(key, value)?,
            "kind" => self.kind = value.to_string(),
            "p_circle" => self.p_circle = parse(key, value)?,
            "pipe_thickness" => self.pipe_thickness = parse(key, value)?,
            "pipe_central" => self.pipe_central = parse(key, value)?,
            "max_retries" => self.max_retries = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "split_seed" => self.split_seed = parse(key, value)?,
            "p_flip" => self.p_flip = parse(key, value)?,
            "max_frac" => self.max_frac = parse(key, value)?,
            "noise" => self.noise = parse(key, value)?,
            "warm_init" => self.warm_init = WarmInit::parse(value)?,
            "bins" => self.bins = parse(key, value)?,
            "level_lo" => self.levels.0 = parse(key, value)?,
            "level_hi" => self.levels.1 = parse(key, value)?,
            "min_per_bin" => self.min_per_bin = parse(key, value)?,
            "bootstrap_resamples" => self.bootstrap_resamples = parse(key, value)?,
            "ci_level" => self.ci_level = parse(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            _ => return Err(Error::param(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "alpha" => self.weights.alpha.to_string(),
            "beta" => self.weights.beta.to_string(),
            "gamma" => self.weights.gamma.to_string(),
            "delta" => self.weights.delta.to_string(),
            "tau" => self.lbm.tau.to_string(),
            "force_x" => self.lbm.force[0].to_string(),
            "force_y" => self.lbm.force[1].to_string(),
            "rho0" => self.lbm.rho0.to_string(),
            "tol" => self.lbm.tol.to_string(),
            "check_interval" => self.lbm.check_interval.to_string(),
            "max_iters" => self.lbm.max_iters.to_string(),
            "size" => self.size.to_string(),
            "porosity_min" => self.porosity_min.to_string(),
            "porosity_max" => self.porosity_max.to_string(),
            "kind" => self.kind.clone(),
            "p_circle" => self.p_circle.to_string(),
            "pipe_thickness" => self.pipe_thickness.to_string(),
            "pipe_central" => self.pipe_central.to_string(),
            "max_retries" => self.max_retries.to_string(),
            "seed" => self.seed.to_string(),
            "split_seed" => self.split_seed.to_string(),
            "p_flip" => self.p_flip.to_string(),
            "max_frac" => self.max_frac.to_string(),
            "noise" => self.noise.to_string(),
            "warm_init" => self.warm_init.name().to_string(),
            "bins" => self.bins.to_string(),
            "level_lo" => self.levels.0.to_string(),
            "level_hi" => self.levels.1.to_string(),
            "min_per_bin" => self.min_per_bin.to_string(),
            "bootstrap_resamples" => self.bootstrap_resamples.to_string(),
            "ci_level" => self.ci_level.to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            _ => return None,
        })
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::param(format!("config line {}: expected key = value", n + 1)))?;
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text)
    }

    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    pub fn generator(&self) -> Result<GeneratorKind> {
        match self.kind.as_str() {
            "trig" => Ok(GeneratorKind::Trig),
            "shapes" => Ok(GeneratorKind::Shapes {
                p_circle: self.p_circle,
            }),
            "pipe" => Ok(GeneratorKind::Pipe {
                thickness: self.pipe_thickness,
                central: self.pipe_central,
            }),
            other => Err(Error::param(format!("unknown generator kind `{other}`"))),
        }
    }

    pub fn dataset(&self, count: usize) -> Result<DatasetConfig> {
        let mut d = DatasetConfig::new(count, self.size, self.generator()?, self.seed);
        d.porosity_range = (self.porosity_min, self.porosity_max);
        d.params = self.lbm;
        d.max_retries = self.max_retries;
        d.validate()?;
        Ok(d)
    }
}
