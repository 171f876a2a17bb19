//! Bootstrap-averaged recursive hierarchical filtering (k-BAHC).
//!
//! Each replica resamples the dates of the return matrix with replacement,
//! computes its Pearson correlation and filters it with [`k_hcal_orders`].
//! The estimate is the plain average of the filtered replicas; the
//! covariance version rescales it with the sample variances of the
//! original data.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hclust::k_hcal_orders;
use crate::matrix::{sample_covariance, to_correlation, to_covariance, MatrixRole, SymmetricMatrix};

/// Default number of bootstrap replicas.
pub const DEFAULT_REPLICAS: usize = 100;

/// Attempts per replica before a zero-variance resample becomes an error.
pub const MAX_RESAMPLE_ATTEMPTS: usize = 100;

/// Replicas are reduced in fixed-size groups so that peak memory does not
/// grow with `m` and the summation order never depends on thread count.
const REDUCE_CHUNK: usize = 16;

/// Supplies the resampled column indices for replica `b`, attempt `a`.
pub trait Resampler: Sync {
    fn indices(&self, replica: usize, attempt: usize, t: usize) -> Vec<usize>;
}

/// Number of replicas and the seed they are derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BootstrapPlan {
    pub replicas: usize,
    pub base_seed: u64,
}

impl BootstrapPlan {
    pub fn new(replicas: usize, base_seed: u64) -> Self {
        Self { replicas, base_seed }
    }

    /// Random stream for one replica: a ChaCha8 generator keyed by the base
    /// seed, with the replica index as stream id.
    pub fn replica_rng(&self, replica: usize, attempt: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.base_seed);
        rng.set_stream(replica as u64);
        // 2^40 words per attempt; a replica never draws that many.
        rng.set_word_pos((attempt as u128) << 40);
        rng
    }
}

impl Default for BootstrapPlan {
    fn default() -> Self {
        Self::new(DEFAULT_REPLICAS, 0)
    }
}

impl Resampler for BootstrapPlan {
    fn indices(&self, replica: usize, attempt: usize, t: usize) -> Vec<usize> {
        let mut rng = self.replica_rng(replica, attempt);
        (0..t).map(|_| rng.random_range(0..t)).collect()
    }
}

/// Gathers the columns `s` of `r`.
pub fn resample_columns(r: &DMatrix<f64>, s: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(r.nrows(), s.len(), |i, j| r[(i, s[j])])
}

/// Bootstrap copy of `r` for replica `b` (first attempt of its stream).
pub fn bootstrap_columns(r: &DMatrix<f64>, replica: usize, plan: &BootstrapPlan) -> Result<DMatrix<f64>> {
    let t = r.ncols();
    if t < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            actual: t,
        });
    }
    Ok(resample_columns(r, &plan.indices(replica, 0, t)))
}

fn has_constant_row(r: &DMatrix<f64>) -> bool {
    r.row_iter().any(|row| {
        let first = row[0];
        row.iter().all(|&x| x == first)
    })
}

fn replica_filters<S: Resampler>(
    r: &DMatrix<f64>,
    orders: &[usize],
    sampler: &S,
    replica: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let t = r.ncols();
    for attempt in 0..MAX_RESAMPLE_ATTEMPTS {
        let resampled = resample_columns(r, &sampler.indices(replica, attempt, t));
        if has_constant_row(&resampled) {
            continue;
        }
        let corr = to_correlation(&sample_covariance(&resampled)?)?;
        return Ok(k_hcal_orders(&corr, orders)?
            .into_iter()
            .map(|f| f.matrix.into_inner())
            .collect());
    }
    Err(Error::DegenerateBootstrap {
        replica,
        attempts: MAX_RESAMPLE_ATTEMPTS,
    })
}

/// k-BAHC correlation for several filter orders sharing the same replicas.
pub fn kbahc_correlation_orders_with<S: Resampler>(
    r: &DMatrix<f64>,
    orders: &[usize],
    replicas: usize,
    sampler: &S,
) -> Result<Vec<SymmetricMatrix>> {
    let (n, t) = r.shape();
    if t < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            actual: t,
        });
    }
    if replicas == 0 {
        return Err(Error::InvalidInput("number of bootstrap replicas must be >= 1".into()));
    }
    if let Some(&k) = orders.iter().find(|&&k| k < 1) {
        return Err(Error::InvalidInput(format!("filter order must be >= 1, got {k}")));
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    if n == 1 {
        return Ok(orders
            .iter()
            .map(|_| SymmetricMatrix::identity(1, MatrixRole::Correlation))
            .collect());
    }

    let mut sums = vec![DMatrix::<f64>::zeros(n, n); orders.len()];
    let mut start = 0;
    while start < replicas {
        let end = (start + REDUCE_CHUNK).min(replicas);
        let chunk: Vec<Vec<DMatrix<f64>>> = (start..end)
            .into_par_iter()
            .map(|b| replica_filters(r, orders, sampler, b))
            .collect::<Result<_>>()?;
        for filtered in chunk {
            for (acc, m) in sums.iter_mut().zip(filtered) {
                *acc += m;
            }
        }
        start = end;
    }
    let scale = replicas as f64;
    sums.into_iter()
        .map(|s| SymmetricMatrix::from_upper(s / scale, MatrixRole::Correlation))
        .collect()
}

pub fn kbahc_correlation_orders(r: &DMatrix<f64>, orders: &[usize], plan: &BootstrapPlan) -> Result<Vec<SymmetricMatrix>> {
    kbahc_correlation_orders_with(r, orders, plan.replicas, plan)
}

/// Average of the order-`k` filtered correlations of `plan.replicas`
/// bootstrap copies of `r`.
pub fn kbahc_correlation(r: &DMatrix<f64>, k: usize, plan: &BootstrapPlan) -> Result<SymmetricMatrix> {
    Ok(kbahc_correlation_orders(r, &[k], plan)?.remove(0))
}

/// Covariance estimates for several orders; variances come from the original
/// (not resampled) data.
pub fn kbahc_covariance_orders(r: &DMatrix<f64>, orders: &[usize], plan: &BootstrapPlan) -> Result<Vec<SymmetricMatrix>> {
    let variances = sample_covariance(r)?.diagonal();
    if let Some((asset, &v)) = variances.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(Error::DegenerateAsset { asset, variance: v });
    }
    kbahc_correlation_orders(r, orders, plan)?
        .iter()
        .map(|c| to_covariance(c, &variances))
        .collect()
}

pub fn kbahc_covariance(r: &DMatrix<f64>, k: usize, plan: &BootstrapPlan) -> Result<SymmetricMatrix> {
    Ok(kbahc_covariance_orders(r, &[k], plan)?.remove(0))
}
