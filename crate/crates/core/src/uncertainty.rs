//! Conditional quantile bands for predicted velocities.
//!
//! Residuals `r = |v|_ref - |v|_pred` are binned by predicted magnitude
//! (equal-count bins), empirical quantiles of `r` are taken per bin, and
//! the node values are joined with a monotone cubic Hermite interpolant.
//! The band at predicted value `x` is `[x + s_lo(x), x + s_hi(x)]`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::StructureGrid;
use crate::lbm::VelocityField;
use crate::stats::quantile_sorted;

pub const DEFAULT_BINS: usize = 20;
pub const DEFAULT_MIN_PER_BIN: usize = 20;
pub const DEFAULT_LEVELS: (f64, f64) = (0.05, 0.95);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualPair {
    /// Predicted value (magnitude or component).
    pub x: f64,
    /// Reference minus prediction.
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Magnitude,
    X,
    Y,
}

/// One pair per pore pixel.
pub fn residuals(pred: &VelocityField, reference: &VelocityField, grid: &StructureGrid) -> Result<Vec<ResidualPair>> {
    component_residuals(pred, reference, grid, Component::Magnitude)
}

pub fn component_residuals(
    pred: &VelocityField,
    reference: &VelocityField,
    grid: &StructureGrid,
    component: Component,
) -> Result<Vec<ResidualPair>> {
    pred.check_size(grid.size(), "residuals")?;
    reference.check_size(grid.size(), "residuals")?;
    let value = |f: &VelocityField, i: usize| match component {
        Component::Magnitude => f.speed_at(i),
        Component::X => f.ux()[i],
        Component::Y => f.uy()[i],
    };
    Ok(grid
        .solid()
        .iter()
        .enumerate()
        .filter(|(_, s)| !**s)
        .map(|(i, _)| {
            let x = value(pred, i);
            ResidualPair {
                x,
                r: value(reference, i) - x,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedQuantiles {
    pub centers: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub counts: Vec<usize>,
    pub levels: (f64, f64),
}

fn check_levels(levels: (f64, f64)) -> Result<()> {
    let (lo, hi) = levels;
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
        return Err(Error::param(format!("quantile levels ({lo}, {hi}) invalid")));
    }
    Ok(())
}

/// Equal-count binning over `x`, per-bin quantiles of `r`.
///
/// The bin count drops to `n / min_per_bin` when data are scarce, and bins
/// whose median `x` does not exceed their left neighbour's are merged into
/// it, so centers come out strictly increasing.
pub fn binned_quantiles(
    pairs: &[ResidualPair],
    n_bins: usize,
    levels: (f64, f64),
    min_per_bin: usize,
) -> Result<BinnedQuantiles> {
    check_levels(levels)?;
    if n_bins == 0 || min_per_bin == 0 {
        return Err(Error::param("bin count and minimum population must be positive"));
    }
    if pairs.iter().any(|p| !p.x.is_finite() || !p.r.is_finite()) {
        return Err(Error::data("residual pairs contain non-finite values"));
    }
    let n = pairs.len();
    let bins = n_bins.min(n / min_per_bin);
    if bins < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2 * min_per_bin,
            got: n,
        });
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.x.total_cmp(&b.x));

    let center_of = |range: &(usize, usize)| {
        let xs: Vec<f64> = sorted[range.0..range.1].iter().map(|p| p.x).collect();
        quantile_sorted(&xs, 0.5)
    };
    let mut ranges: Vec<(usize, usize)> = Vec::with_capacity(bins);
    let mut centers: Vec<f64> = Vec::with_capacity(bins);
    for k in 0..bins {
        let mut range = (k * n / bins, (k + 1) * n / bins);
        let mut center = center_of(&range);
        while let Some(&prev) = centers.last() {
            if center > prev {
                break;
            }
            let merged = ranges.pop().unwrap();
            centers.pop();
            range = (merged.0, range.1);
            center = center_of(&range);
        }
        ranges.push(range);
        centers.push(center);
    }
    if ranges.len() < 2 {
        return Err(Error::data("fewer than 2 usable bins (predicted values too concentrated)"));
    }

    let mut lower = Vec::with_capacity(ranges.len());
    let mut upper = Vec::with_capacity(ranges.len());
    for &(a, b) in &ranges {
        let mut rs: Vec<f64> = sorted[a..b].iter().map(|p| p.r).collect();
        rs.sort_by(f64::total_cmp);
        lower.push(quantile_sorted(&rs, levels.0));
        upper.push(quantile_sorted(&rs, levels.1));
    }
    Ok(BinnedQuantiles {
        centers,
        lower,
        upper,
        counts: ranges.iter().map(|(a, b)| b - a).collect(),
        levels,
    })
}

/// Monotone piecewise cubic Hermite interpolant (Fritsch–Carlson).
///
/// Interior slopes are the weighted harmonic mean of adjacent secants (zero
/// at local extrema), end slopes use the shape-preserving three-point
/// formula. Outside the node range the end values are held constant.
#[derive(Debug, Clone, PartialEq)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    slopes: Vec<f64>,
}

impl Pchip {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::data("node arrays differ in length"));
        }
        if x.len() < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                got: x.len(),
            });
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::data("interpolation nodes must be finite"));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::data("interpolation nodes must be strictly increasing"));
        }
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d.fill(delta[0]);
        } else {
            for k in 1..n - 1 {
                if delta[k - 1] * delta[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
                }
            }
            d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Ok(Self {
            x: x.to_vec(),
            y: y.to_vec(),
            slopes: d,
        })
    }

    pub fn nodes(&self) -> (&[f64], &[f64]) {
        (&self.x, &self.y)
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        if t <= self.x[0] {
            return self.y[0];
        }
        if t >= self.x[n - 1] {
            return self.y[n - 1];
        }
        // interval k with x[k] <= t < x[k+1]
        let k = self.x.partition_point(|&xi| xi <= t) - 1;
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        // increment form: a flat segment evaluates to exactly y[k]
        self.y[k] + (self.y[k + 1] - self.y[k]) * h01 + h * (h10 * self.slopes[k] + h11 * self.slopes[k + 1])
    }
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() || d0 == 0.0 {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

pub fn pchip_fit(x: &[f64], y: &[f64]) -> Result<Pchip> {
    Pchip::new(x, y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileBand {
    pub centers: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub levels: (f64, f64),
    s_lo: Pchip,
    s_hi: Pchip,
}

impl QuantileBand {
    pub fn from_nodes(centers: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>, levels: (f64, f64)) -> Result<Self> {
        check_levels(levels)?;
        let s_lo = Pchip::new(&centers, &lower)?;
        let s_hi = Pchip::new(&centers, &upper)?;
        Ok(Self {
            centers,
            lower,
            upper,
            levels,
            s_lo,
            s_hi,
        })
    }

    pub fn fit(pairs: &[ResidualPair], n_bins: usize, levels: (f64, f64), min_per_bin: usize) -> Result<Self> {
        let b = binned_quantiles(pairs, n_bins, levels, min_per_bin)?;
        Self::from_nodes(b.centers, b.lower, b.upper, b.levels)
    }

    /// `(x + s_lo(x), x + s_hi(x))`.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        (x + self.s_lo.eval(x), x + self.s_hi.eval(x))
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# levels {} {}\nx,q_lo,q_hi\n", self.levels.0, self.levels.1);
        for i in 0..self.centers.len() {
            let _ = writeln!(out, "{},{},{}", self.centers[i], self.lower[i], self.upper[i]);
        }
        out
    }

    /// Parses [`QuantileBand::to_csv`] output and refits the interpolants.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut levels = DEFAULT_LEVELS;
        let (mut xs, mut lo, mut hi) = (Vec::new(), Vec::new(), Vec::new());
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(rest) = line.strip_prefix("# levels") {
                let v: Vec<f64> = rest
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| Error::data(format!("bad levels line: {line}"))))
                    .collect::<Result<_>>()?;
                if v.len() != 2 {
                    return Err(Error::data(format!("bad levels line: {line}")));
                }
                levels = (v[0], v[1]);
                continue;
            }
            if line.starts_with('#') || line.starts_with("x,") {
                continue;
            }
            let cols: Vec<f64> = line
                .split(',')
                .map(|t| t.trim().parse().map_err(|_| Error::data(format!("bad band line: {line}"))))
                .collect::<Result<_>>()?;
            if cols.len() != 3 {
                return Err(Error::data(format!("bad band line: {line}")));
            }
            xs.push(cols[0]);
            lo.push(cols[1]);
            hi.push(cols[2]);
        }
        Self::from_nodes(xs, lo, hi, levels)
    }
}

pub fn band_eval(band: &QuantileBand, x: f64) -> (f64, f64) {
    band.eval(x)
}

/// Fraction of pairs whose reference value `x + r` lies inside the band.
pub fn coverage_of_pairs(band: &QuantileBand, pairs: &[ResidualPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let inside = pairs
        .iter()
        .filter(|p| {
            let (lo, hi) = band.eval(p.x);
            let truth = p.x + p.r;
            lo <= truth && truth <= hi
        })
        .count();
    Ok(inside as f64 / pairs.len() as f64)
}

/// Coverage over the pore pixels of an evaluation sample.
pub fn coverage(band: &QuantileBand, pred: &VelocityField, reference: &VelocityField, grid: &StructureGrid) -> Result<f64> {
    coverage_of_pairs(band, &residuals(pred, reference, grid)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_fields_have_zero_residuals() {
        let mut solid = vec![false; 64];
        solid[5] = true;
        let grid = StructureGrid::from_solid(8, solid).unwrap();
        let f = VelocityField::from_fn(8, |x, y| (0.01 * x as f64, 0.02 * y as f64));
        let pairs = residuals(&f, &f, &grid).unwrap();
        assert_eq!(pairs.len(), grid.pore_count());
        assert!(pairs.iter().all(|p| p.r == 0.0));
    }

    #[test]
    fn aligned_scaling_gives_constant_residual() {
        let grid = StructureGrid::empty(8);
        let pred = VelocityField::from_fn(8, |x, y| (0.3 + 0.01 * x as f64, 0.1 + 0.01 * y as f64));
        let c = 0.05;
        let reference = VelocityField::from_fn(8, |x, y| {
            let (a, b) = pred.get(x, y);
            let s = a.hypot(b);
            (a * (s + c) / s, b * (s + c) / s)
        });
        for p in residuals(&pred, &reference, &grid).unwrap() {
            assert!((p.r - c).abs() < 1e-14);
        }
        let xs = component_residuals(&pred, &reference, &grid, Component::X).unwrap();
        assert!(xs.iter().all(|p| p.r > 0.0));
    }

    #[test]
    fn equal_count_bins_balanced() {
        let pairs: Vec<ResidualPair> = (0..1003)
            .map(|i| ResidualPair {
                x: (i as f64 * 0.618).fract(),
                r: 0.0,
            })
            .collect();
        let b = binned_quantiles(&pairs, 20, DEFAULT_LEVELS, 20).unwrap();
        assert_eq!(b.counts.len(), 20);
        let (mn, mx) = (b.counts.iter().min().unwrap(), b.counts.iter().max().unwrap());
        assert!(mx - mn <= 1);
        assert!(b.lower.iter().chain(&b.upper).all(|q| *q == 0.0));
        assert!(b.centers.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn sparse_data_reduce_bin_count() {
        let pairs: Vec<ResidualPair> = (0..70).map(|i| ResidualPair { x: i as f64, r: 1.0 }).collect();
        let b = binned_quantiles(&pairs, 20, DEFAULT_LEVELS, 20).unwrap();
        assert_eq!(b.counts.len(), 3);
        assert!(b.counts.iter().all(|c| *c >= 20));
        assert!(binned_quantiles(&pairs[..30], 20, DEFAULT_LEVELS, 20).is_err());
    }

    #[test]
    fn tied_predictions_merge_bins() {
        let mut pairs: Vec<ResidualPair> = (0..200).map(|_| ResidualPair { x: 0.0, r: 0.0 }).collect();
        pairs.extend((0..100).map(|i| ResidualPair { x: 1.0 + i as f64, r: 0.0 }));
        let b = binned_quantiles(&pairs, 10, DEFAULT_LEVELS, 20).unwrap();
        assert!(b.centers.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(b.counts.iter().sum::<usize>(), 300);
        let flat: Vec<ResidualPair> = (0..100).map(|_| ResidualPair { x: 2.0, r: 0.0 }).collect();
        assert!(binned_quantiles(&flat, 5, DEFAULT_LEVELS, 20).is_err());
    }

    #[test]
    fn pchip_rejects_bad_nodes() {
        assert!(Pchip::new(&[0.0, 0.0, 1.0], &[0.0, 1.0, 2.0]).is_err());
        assert!(Pchip::new(&[0.0], &[0.0]).is_err());
        assert!(Pchip::new(&[1.0, 0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn pchip_flat_run_stays_flat() {
        let p = Pchip::new(&[0.0, 0.7, 1.9, 3.1, 4.0], &[0.1, 1.3, 1.3, 1.3, 2.0]).unwrap();
        let v: Vec<f64> = (0..1000).map(|k| p.eval(4.0 * k as f64 / 999.0)).collect();
        assert!(v.windows(2).all(|w| w[1] >= w[0]));
        assert!((0..100).all(|k| p.eval(0.7 + 2.4 * k as f64 / 99.0) == 1.3));
    }

    #[test]
    fn pchip_constant_extrapolation() {
        let p = Pchip::new(&[0.0, 1.0, 3.0], &[1.0, 2.0, 0.5]).unwrap();
        assert_eq!(p.eval(-5.0), 1.0);
        assert_eq!(p.eval(10.0), 0.5);
        assert_eq!(p.eval(1.0), 2.0);
    }

    #[test]
    fn zero_residual_band_collapses() {
        let pairs: Vec<ResidualPair> = (0..400).map(|i| ResidualPair { x: i as f64 * 1e-4, r: 0.0 }).collect();
        let band = QuantileBand::fit(&pairs, 20, DEFAULT_LEVELS, 20).unwrap();
        for x in [0.0, 0.005, 0.02, 1.0] {
            assert_eq!(band.eval(x), (x, x));
        }
        assert_eq!(coverage_of_pairs(&band, &pairs).unwrap(), 1.0);
        assert!(coverage_of_pairs(&band, &[]).is_err());
    }

    #[test]
    fn band_csv_round_trip() {
        let band = QuantileBand::from_nodes(vec![0.1, 0.2, 0.4], vec![-0.01, -0.02, -0.05], vec![0.01, 0.03, 0.04], (0.05, 0.95)).unwrap();
        let back = QuantileBand::from_csv(&band.to_csv()).unwrap();
        assert_eq!(back, band);
        let (lo, hi) = back.eval(0.2);
        assert!((lo - 0.18).abs() < 1e-15 && (hi - 0.23).abs() < 1e-15);
    }
}
