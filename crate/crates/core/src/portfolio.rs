//! Global minimum variance portfolios.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrix::SymmetricMatrix;

/// Pivots below this fraction of the largest diagonal entry are treated as
/// zero by the factorization.
pub const PIVOT_FLOOR: f64 = 1e-12;

/// Fully invested portfolio weights (fractions of capital).
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub values: Vec<f64>,
}

impl Weights {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn equal(n: usize) -> Self {
        Self::new(vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// `w' Σ w`.
    pub fn variance(&self, cov: &SymmetricMatrix) -> f64 {
        let w = DVector::from_column_slice(&self.values);
        w.dot(&(cov.as_matrix() * &w))
    }
}

/// Cholesky factor `L` with `A = L L'`, failing on pivots below
/// `PIVOT_FLOOR · max_i a_ii`.
fn cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let scale = a.diagonal().iter().copied().fold(0.0_f64, f64::max);
    let floor = PIVOT_FLOOR * scale;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Singular { pivot: scale, floor });
    }
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > floor) {
            return Err(Error::Singular { pivot: d, floor });
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// `x = A⁻¹ 𝟙` by Cholesky.
fn solve_ones(a: &DMatrix<f64>) -> Result<DVector<f64>> {
    let l = cholesky(a)?;
    Ok(cholesky_solve(&l, &DVector::from_element(a.nrows(), 1.0)))
}

/// Unconstrained (long-short) GMV weights `Σ⁻¹𝟙 / 𝟙'Σ⁻¹𝟙`.
pub fn gmv_long_short(cov: &SymmetricMatrix) -> Result<Weights> {
    let n = cov.dim();
    if n == 0 {
        return Err(Error::InvalidInput("empty covariance matrix".into()));
    }
    if !cov.is_finite() {
        return Err(Error::NonFinite);
    }
    let x = solve_ones(cov.as_matrix())?;
    let total: f64 = x.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Singular {
            pivot: total,
            floor: 0.0,
        });
    }
    Ok(Weights::new(x.iter().map(|v| v / total).collect()))
}

/// Long-only GMV weights by a primal active-set method.
///
/// Starts from equal weights. Each iteration solves the budget-constrained
/// problem on the free assets; if that point is infeasible it steps to the
/// first bound hit and pins that asset at zero, otherwise it releases the
/// pinned asset with the most negative multiplier. Pinned weights are
/// exactly zero.
pub fn gmv_long_only(cov: &SymmetricMatrix) -> Result<Weights> {
    let n = cov.dim();
    if n == 0 {
        return Err(Error::InvalidInput("empty covariance matrix".into()));
    }
    if !cov.is_finite() {
        return Err(Error::NonFinite);
    }
    let a = cov.as_matrix();
    let mut w = vec![1.0 / n as f64; n];
    let mut pinned = vec![false; n];
    let max_iter = (n * n).max(10);
    let tol = 1e-12 * a.diagonal().iter().copied().fold(0.0_f64, f64::max).max(f64::MIN_POSITIVE);

    for _ in 0..max_iter {
        let free: Vec<usize> = (0..n).filter(|&i| !pinned[i]).collect();
        let sub = DMatrix::from_fn(free.len(), free.len(), |i, j| a[(free[i], free[j])]);
        let x = solve_ones(&sub)?;
        let total: f64 = x.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Singular {
                pivot: total,
                floor: 0.0,
            });
        }
        let target: Vec<f64> = x.iter().map(|v| v / total).collect();

        if target.iter().all(|&v| v >= 0.0) {
            for (slot, &i) in free.iter().enumerate() {
                w[i] = target[slot];
            }
            // Multipliers of the pinned assets: 2(Σw)_i − μ with μ = 2 / 𝟙'Σ_FF⁻¹𝟙.
            let grad = a * DVector::from_column_slice(&w);
            let mu = 1.0 / total;
            let release = (0..n)
                .filter(|&i| pinned[i])
                .map(|i| (i, grad[i] - mu))
                .filter(|&(_, eta)| eta < -tol)
                .min_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
            match release {
                Some((i, _)) => pinned[i] = false,
                None => return Ok(Weights::new(w)),
            }
        } else {
            // Largest step along target − w that keeps every free weight ≥ 0.
            let mut step = 1.0;
            let mut blocking = None;
            for (slot, &i) in free.iter().enumerate() {
                let d = target[slot] - w[i];
                if d < 0.0 {
                    let s = w[i] / -d;
                    if s < step || (s == step && blocking.is_none()) {
                        step = s;
                        blocking = Some(i);
                    }
                }
            }
            for (slot, &i) in free.iter().enumerate() {
                w[i] += step * (target[slot] - w[i]);
            }
            if let Some(i) = blocking {
                w[i] = 0.0;
                pinned[i] = true;
            }
            for &i in &free {
                if w[i] < 0.0 {
                    w[i] = 0.0;
                }
            }
            let s: f64 = w.iter().sum();
            for v in w.iter_mut() {
                *v /= s;
            }
        }
    }
    Err(Error::NoConvergence { iterations: max_iter })
}

/// Residual of the long-only optimality conditions
/// `2Σw − μ𝟙 − η = 0`, `η ≥ 0`, `η_i w_i = 0`, `Σw = 1`, `w ≥ 0`,
/// relative to the largest diagonal entry of `Σ`.
pub fn long_only_kkt_residual(cov: &SymmetricMatrix, w: &Weights) -> f64 {
    let a = cov.as_matrix();
    let wv = DVector::from_column_slice(&w.values);
    let grad = (a * &wv) * 2.0;
    let free: Vec<usize> = (0..w.len()).filter(|&i| w.values[i] > 0.0).collect();
    if free.is_empty() {
        return f64::INFINITY;
    }
    let mu = free.iter().map(|&i| grad[i]).sum::<f64>() / free.len() as f64;
    let scale = a.diagonal().iter().copied().fold(0.0_f64, f64::max).max(f64::MIN_POSITIVE);
    let mut res = (w.sum() - 1.0).abs();
    for i in 0..w.len() {
        let eta = grad[i] - mu;
        if w.values[i] > 0.0 {
            res = res.max(eta.abs() / scale);
        } else {
            res = res.max((-eta).max(0.0) / scale);
        }
        res = res.max((-w.values[i]).max(0.0));
    }
    res
}

/// Writes `date,asset,weight` rows.
pub fn write_weights_csv<W: Write>(writer: W, rows: &[(String, String, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "asset", "weight"])
        .map_err(crate::matrix::csv_write_err)?;
    for (date, asset, weight) in rows {
        w.write_record([date.as_str(), asset.as_str(), &format!("{weight}")])
            .map_err(crate::matrix::csv_write_err)?;
    }
    w.flush().map_err(|e| Error::io("<weights csv>", e))?;
    Ok(())
}
