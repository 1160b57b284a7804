//! Quantiles, percentile-bootstrap CI of the median, and the paired
//! Wilcoxon signed-rank test.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Largest sample (non-zero differences) handled by the exact null distribution.
pub const EXACT_WILCOXON_MAX_N: usize = 25;

fn check_finite(xs: &[f64]) -> Result<()> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::data("sample contains non-finite values"));
    }
    Ok(())
}

/// Type-7 (linear interpolation) quantile of an already sorted sample.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(xs: &[f64], p: f64) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::param(format!("quantile level {p} outside [0, 1]")));
    }
    check_finite(xs)?;
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, p))
}

pub fn median(xs: &[f64]) -> Result<f64> {
    quantile(xs, 0.5)
}

/// Type-7 median without a full sort; reorders `buf`.
fn median_in_place(buf: &mut [f64]) -> f64 {
    let n = buf.len();
    let mid = n / 2;
    let (left, m, _) = buf.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *m;
    if n % 2 == 1 {
        upper
    } else {
        let lower = left.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        lower + 0.5 * (upper - lower)
    }
}

pub const MIN_BOOTSTRAP_SAMPLES: usize = 5;
pub const MIN_BOOTSTRAP_RESAMPLES: usize = 1000;

/// Percentile bootstrap interval for the median.
pub fn bootstrap_ci_median(xs: &[f64], resamples: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    if xs.len() < MIN_BOOTSTRAP_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: MIN_BOOTSTRAP_SAMPLES,
            got: xs.len(),
        });
    }
    if resamples < MIN_BOOTSTRAP_RESAMPLES {
        return Err(Error::param(format!(
            "need at least {MIN_BOOTSTRAP_RESAMPLES} bootstrap resamples, got {resamples}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::param(format!("confidence level {level} outside (0, 1)")));
    }
    check_finite(xs)?;
    if xs.iter().all(|x| *x == xs[0]) {
        return Ok((xs[0], xs[0]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = xs.len();
    let mut buf = vec![0.0; n];
    let mut medians = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        for slot in buf.iter_mut() {
            *slot = xs[rng.random_range(0..n)];
        }
        medians.push(median_in_place(&mut buf));
    }
    medians.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&medians, tail), quantile_sorted(&medians, 1.0 - tail)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WilcoxonMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of positive differences `x - y`.
    pub statistic: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    /// Number of non-zero differences.
    pub n: usize,
    /// Set when every difference is zero; `p_value` is then 1.
    pub degenerate: bool,
    pub method: WilcoxonMethod,
}

/// Average ranks (1-based) of `values`, ties sharing their mean rank.
/// Returned doubled so that every rank is an integer.
pub fn doubled_ranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end, doubled mean = start + 1 + end
        let r2 = (start + 1 + end) as u64;
        for &i in &order[start..end] {
            ranks[i] = r2;
        }
        start = end;
    }
    ranks
}

/// Two-sided paired signed-rank test of `x` against `y`.
///
/// Zero differences are dropped and tied magnitudes get averaged ranks.
/// Up to [`EXACT_WILCOXON_MAX_N`] non-zero differences the p-value comes
/// from the exact permutation distribution of the (tie-adjusted) ranks;
/// beyond that a normal approximation with continuity and tie corrections
/// is used.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonResult> {
    if x.len() != y.len() {
        return Err(Error::data(format!(
            "paired samples differ in length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    check_finite(x)?;
    check_finite(y)?;
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            p_value: 1.0,
            n: 0,
            degenerate: true,
            method: WilcoxonMethod::Exact,
        });
    }
    let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = doubled_ranks(&magnitudes);
    let w2: u64 = ranks
        .iter()
        .zip(&diffs)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| *r)
        .sum();
    let statistic = w2 as f64 / 2.0;

    if n <= EXACT_WILCOXON_MAX_N {
        return Ok(WilcoxonResult {
            statistic,
            p_value: exact_two_sided(&ranks, w2),
            n,
            degenerate: false,
            method: WilcoxonMethod::Exact,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = tie_sizes(&ranks).map(|t| t * t * t - t).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    let z = ((statistic - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let p_value = erfc(z / std::f64::consts::SQRT_2).min(1.0);
    Ok(WilcoxonResult {
        statistic,
        p_value,
        n,
        degenerate: false,
        method: WilcoxonMethod::Normal,
    })
}

fn tie_sizes(ranks: &[u64]) -> impl Iterator<Item = f64> {
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let mut sizes = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        sizes.push((j - i) as f64);
        i = j;
    }
    sizes.into_iter()
}

/// `P(|W - E W| >= |w - E W|)` under random signs, counted exactly.
fn exact_two_sided(doubled: &[u64], observed: u64) -> f64 {
    let total: u64 = doubled.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in doubled {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    // deviations compared in doubled units: |2s - total| vs |2w - total|
    let dev = (2 * observed as i64 - total as i64).abs();
    let extreme: u64 = counts
        .iter()
        .enumerate()
        .filter(|(s, _)| (2 * *s as i64 - total as i64).abs() >= dev)
        .map(|(_, c)| *c)
        .sum();
    extreme as f64 / (1u64 << doubled.len()) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_basics() {
        let xs = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(quantile(&xs, 0.5).unwrap(), 3.0);
        assert_eq!(quantile(&xs, 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&xs, 1.0).unwrap(), 5.0);
        assert_eq!(quantile(&xs, 0.25).unwrap(), 2.0);
        assert!((quantile(&[1.0, 2.0], 0.3).unwrap() - 1.3).abs() < 1e-15);
        assert!(quantile(&[], 0.5).is_err());
        assert!(quantile(&xs, 1.5).is_err());
    }

    #[test]
    fn in_place_median_matches_quantile() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..40 {
            let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut buf = xs.clone();
            assert_eq!(median_in_place(&mut buf), median(&xs).unwrap());
        }
    }

    #[test]
    fn bootstrap_constant_and_errors() {
        assert_eq!(bootstrap_ci_median(&[2.5; 9], 1000, 0.95, 1).unwrap(), (2.5, 2.5));
        assert!(bootstrap_ci_median(&[1.0, 2.0, 3.0], 1000, 0.95, 1).is_err());
        assert!(bootstrap_ci_median(&[1.0, 2.0, 3.0, 4.0, 5.0], 10, 0.95, 1).is_err());
    }

    #[test]
    fn bootstrap_wider_for_higher_level() {
        let xs: Vec<f64> = (0..60).map(|i| ((i * 37) % 17) as f64 * 0.3).collect();
        let (a, b) = bootstrap_ci_median(&xs, 2000, 0.80, 3).unwrap();
        let (c, d) = bootstrap_ci_median(&xs, 2000, 0.95, 3).unwrap();
        assert!(c <= a && d >= b);
        assert_eq!((a, b), bootstrap_ci_median(&xs, 2000, 0.80, 3).unwrap());
    }

    #[test]
    fn doubled_ranks_average_ties() {
        assert_eq!(doubled_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![7, 2, 7, 4]);
    }

    #[test]
    fn identical_samples_are_degenerate() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = wilcoxon_signed_rank(&x, &x).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, 1.0);
        assert!(wilcoxon_signed_rank(&x, &x[..3]).is_err());
    }

    #[test]
    fn textbook_exact_value() {
        // all six differences positive with distinct magnitudes: p = 2 / 64
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y = [0.0; 6];
        let r = wilcoxon_signed_rank(&x, &y).unwrap();
        assert_eq!(r.statistic, 21.0);
        assert_eq!(r.p_value, 2.0 / 64.0);
        assert_eq!(r.method, WilcoxonMethod::Exact);
    }

    #[test]
    fn normal_branch_for_large_samples() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 + 1.0).collect();
        let y = vec![0.0; 40];
        let r = wilcoxon_signed_rank(&x, &y).unwrap();
        assert_eq!(r.method, WilcoxonMethod::Normal);
        assert!(r.p_value > 0.0 && r.p_value < 1e-6);
    }
}
