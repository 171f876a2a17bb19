//! Spectral and portfolio diagnostics.
//!
//! Annualization uses a 252-day year and a zero risk-free rate. Standard
//! deviations are population (divisor `n`) estimates.

use std::collections::BTreeMap;
use std::hash::Hash;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::EigenSystem;
use crate::portfolio::Weights;

pub const TRADING_DAYS: f64 = 252.0;

/// Inverse participation ratio `1 / Σ_j v_ij⁴` of every eigenvector, in
/// eigenvalue order.
pub fn ipr(eig: &EigenSystem) -> Result<Vec<f64>> {
    eig.vectors
        .column_iter()
        .enumerate()
        .map(|(i, v)| {
            let norm = v.norm();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidInput(format!(
                    "eigenvector {i} has norm {norm}, expected 1"
                )));
            }
            Ok(1.0 / v.iter().map(|x| x.powi(4)).sum::<f64>())
        })
        .collect()
}

/// IPR of a single unit vector.
pub fn ipr_of(v: &[f64]) -> Result<f64> {
    let eig = EigenSystem {
        values: vec![0.0],
        vectors: DMatrix::from_column_slice(v.len(), 1, v),
    };
    Ok(ipr(&eig)?[0])
}

/// Independently permutes each row of `r` (asset by asset).
pub fn shuffled_null_panel(r: &DMatrix<f64>, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = r.clone();
    let mut row = vec![0.0; r.ncols()];
    for i in 0..r.nrows() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = r[(i, j)];
        }
        row.shuffle(&mut rng);
        for (j, &x) in row.iter().enumerate() {
            out[(i, j)] = x;
        }
    }
    out
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn population_sd(xs: &[f64]) -> f64 {
    // Exact zero for constant series, which the mean may not reproduce.
    if xs.iter().all(|&x| x == xs[0]) {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Annualized standard deviation of daily returns.
pub fn realized_volatility(daily: &[f64]) -> Result<f64> {
    if daily.len() < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            actual: daily.len(),
        });
    }
    Ok(population_sd(daily) * TRADING_DAYS.sqrt())
}

/// Annualized moment-based Sharpe ratio `mean / sd · √252`.
///
/// A zero standard deviation gives `±∞` (or NaN for an all-zero series),
/// which report writers emit as missing.
pub fn sharpe_ratio(daily: &[f64]) -> Result<f64> {
    if daily.len() < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            actual: daily.len(),
        });
    }
    let m = mean(daily);
    let sd = population_sd(daily);
    if sd == 0.0 {
        return Ok(if m > 0.0 {
            f64::INFINITY
        } else if m < 0.0 {
            f64::NEG_INFINITY
        } else {
            f64::NAN
        });
    }
    Ok(m / sd * TRADING_DAYS.sqrt())
}

/// `(n_eff, n_90)`: inverse Herfindahl index, and the smallest number of
/// names whose absolute weights reach 90% of `Σ|w|`.
pub fn concentration(w: &Weights) -> (f64, usize) {
    let n_eff = 1.0 / w.values.iter().map(|x| x * x).sum::<f64>();
    let mut abs: Vec<f64> = w.values.iter().map(|x| x.abs()).collect();
    abs.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = abs.iter().sum();
    let target = 0.9 * total;
    let mut cum = 0.0;
    let mut n90 = abs.len();
    for (i, x) in abs.iter().enumerate() {
        cum += x;
        // Relative slack absorbs rounding in the cumulative sum.
        if cum >= target * (1.0 - 1e-12) {
            n90 = i + 1;
            break;
        }
    }
    (n_eff, n90.max(1))
}

/// `Σ|w_i|`.
pub fn gross_leverage(w: &Weights) -> f64 {
    w.values.iter().map(|x| x.abs()).sum()
}

/// Average L1 distance between consecutive snapshots. Each snapshot maps an
/// asset key to its weight; absent assets count as zero.
pub fn turnover_gamma<K: Ord + Hash + Clone>(history: &[BTreeMap<K, f64>]) -> Result<f64> {
    if history.len() < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            actual: history.len(),
        });
    }
    let total: f64 = history.windows(2).map(|pair| l1_distance(&pair[0], &pair[1])).sum();
    Ok(total / (history.len() - 1) as f64)
}

pub fn l1_distance<K: Ord + Clone>(a: &BTreeMap<K, f64>, b: &BTreeMap<K, f64>) -> f64 {
    let mut d = 0.0;
    for (k, x) in a {
        d += (x - b.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, y) in b {
        if !a.contains_key(k) {
            d += y.abs();
        }
    }
    d
}

/// Average dense rank per method.
///
/// `scores[year][method]` holds that year's Sharpe ratio. Within a year the
/// ratios are rounded to two decimals and ranked descending, ties sharing a
/// rank. Non-finite scores are left out of that year.
pub fn yearly_dense_rank<Y: Ord, M: Ord + Clone>(scores: &BTreeMap<Y, BTreeMap<M, f64>>) -> BTreeMap<M, f64> {
    let mut sums: BTreeMap<M, (f64, usize)> = BTreeMap::new();
    for year in scores.values() {
        let rounded: Vec<(M, i64)> = year
            .iter()
            .filter(|(_, s)| s.is_finite())
            .map(|(m, s)| (m.clone(), (s * 100.0).round() as i64))
            .collect();
        let mut distinct: Vec<i64> = rounded.iter().map(|(_, r)| *r).collect();
        distinct.sort_unstable_by(|a, b| b.cmp(a));
        distinct.dedup();
        for (m, r) in rounded {
            let rank = distinct.iter().position(|&d| d == r).expect("present") + 1;
            let e = sums.entry(m).or_insert((0.0, 0));
            e.0 += rank as f64;
            e.1 += 1;
        }
    }
    sums.into_iter().map(|(m, (s, c))| (m, s / c as f64)).collect()
}

/// Empirical CDF of `sample` evaluated at `x`.
pub fn ecdf(sample: &[f64], x: f64) -> f64 {
    sample.iter().filter(|&&v| v <= x).count() as f64 / sample.len() as f64
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut xs: Vec<f64> = a.iter().chain(b).copied().collect();
    xs.sort_by(f64::total_cmp);
    xs.iter()
        .map(|&x| (ecdf(a, x) - ecdf(b, x)).abs())
        .fold(0.0, f64::max)
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sample: &[f64], q: f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    if s.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

pub fn median(sample: &[f64]) -> f64 {
    quantile(sample, 0.5)
}
