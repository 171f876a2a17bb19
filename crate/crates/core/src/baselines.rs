//! Comparator covariance estimators.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matrix::{eigendecompose, sample_covariance, MatrixRole, SymmetricMatrix};

pub const DEFAULT_FOLDS: usize = 10;

/// The unfiltered sample covariance.
pub fn sample_estimator(r: &DMatrix<f64>) -> Result<SymmetricMatrix> {
    sample_covariance(r)
}

/// Contiguous fold boundaries: `t` columns split into `folds` nearly equal
/// blocks, earlier blocks taking the remainder.
fn fold_ranges(t: usize, folds: usize) -> Vec<std::ops::Range<usize>> {
    let base = t / folds;
    let extra = t % folds;
    let mut start = 0;
    (0..folds)
        .map(|f| {
            let len = base + usize::from(f < extra);
            let range = start..start + len;
            start += len;
            range
        })
        .collect()
}

/// Cross-validated eigenvalue shrinkage.
///
/// Keeps the sample eigenvectors and replaces eigenvalue `i` by the average,
/// over `folds` contiguous held-out blocks, of the held-out variance along
/// the `i`-th eigenvector of the covariance fitted without that block. The
/// result is floored at `1e-12 · max` and rescaled to the sample trace.
pub fn cv_eigenvalue_shrinkage(r: &DMatrix<f64>, folds: usize) -> Result<SymmetricMatrix> {
    let (n, t) = r.shape();
    if folds < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 folds, got {folds}")));
    }
    if t < 2 * folds {
        return Err(Error::InsufficientData {
            required: 2 * folds,
            actual: t,
        });
    }
    let sample = sample_covariance(r)?;
    let full = eigendecompose(&sample)?;

    let mut cleaned = vec![0.0; n];
    for range in fold_ranges(t, folds) {
        let held_out = r.columns(range.start, range.len()).into_owned();
        let train_cols: Vec<usize> = (0..t).filter(|j| !range.contains(j)).collect();
        let train = DMatrix::from_fn(n, train_cols.len(), |i, j| r[(i, train_cols[j])]);
        let train_eig = eigendecompose(&sample_covariance(&train)?)?;
        let test_cov = sample_covariance(&held_out)?;
        // diag(V' Σ_test V)
        let projected = test_cov.as_matrix() * &train_eig.vectors;
        for (i, slot) in cleaned.iter_mut().enumerate() {
            *slot += train_eig.vectors.column(i).dot(&projected.column(i));
        }
    }
    let scale = folds as f64;
    for v in cleaned.iter_mut() {
        *v /= scale;
    }
    let max = cleaned.iter().copied().fold(0.0_f64, f64::max);
    let floor = 1e-12 * max;
    for v in cleaned.iter_mut() {
        *v = v.max(floor);
    }
    let sample_trace: f64 = sample.diagonal().iter().sum();
    let cleaned_trace: f64 = cleaned.iter().sum();
    if cleaned_trace > 0.0 {
        let s = sample_trace / cleaned_trace;
        for v in cleaned.iter_mut() {
            *v *= s;
        }
    }
    let eig = crate::matrix::EigenSystem {
        values: cleaned,
        vectors: full.vectors,
    };
    SymmetricMatrix::from_upper(eig.reconstruct(), MatrixRole::Covariance)
}
