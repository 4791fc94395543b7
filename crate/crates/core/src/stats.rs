//! Small robust-regression helpers for decay-rate fits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Ordinary least squares `y = slope * x + intercept`. `None` with fewer
/// than two distinct abscissae.
pub fn least_squares(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    Some(if s.len() % 2 == 1 { s[m] } else { 0.5 * (s[m - 1] + s[m]) })
}

/// Theil–Sen: median of pairwise slopes, intercept the median of `y - slope x`.
pub fn theil_sen(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    if x.len() != y.len() {
        return None;
    }
    let mut slopes = Vec::new();
    for i in 0..x.len() {
        for k in i + 1..x.len() {
            if x[k] != x[i] {
                slopes.push((y[k] - y[i]) / (x[k] - x[i]));
            }
        }
    }
    let slope = median(&slopes)?;
    let resid: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - slope * a).collect();
    Some((slope, median(&resid)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub resamples: usize,
}

/// Theil–Sen slope with a percentile bootstrap interval at `level`.
pub fn theil_sen_bootstrap(x: &[f64], y: &[f64], resamples: usize, level: f64, seed: u64) -> Option<SlopeFit> {
    let (slope, intercept) = theil_sen(x, y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.len();
    let mut boot = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        let bx: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
        let by: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        if let Some((s, _)) = theil_sen(&bx, &by) {
            boot.push(s);
        }
    }
    boot.sort_by(f64::total_cmp);
    let (lo, hi) = if boot.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let a = (1.0 - level) / 2.0;
        let pick = |p: f64| boot[((p * (boot.len() - 1) as f64).round() as usize).min(boot.len() - 1)];
        (pick(a), pick(1.0 - a))
    };
    Some(SlopeFit { slope, intercept, ci_low: lo, ci_high: hi, resamples: boot.len() })
}
