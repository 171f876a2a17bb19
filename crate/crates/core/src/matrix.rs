//! Sample moments, symmetric eigendecomposition and PSD projection.
//!
//! Return matrices are `n × t` with one row per asset and one column per
//! date. All covariance estimates use the `1/t` divisor.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// What a [`SymmetricMatrix`] represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixRole {
    Covariance,
    Correlation,
    Residue,
    Generic,
}

/// Dense symmetric matrix with a role tag.
///
/// Storage is exactly symmetric: every constructor mirrors the upper
/// triangle onto the lower one.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    data: DMatrix<f64>,
    role: MatrixRole,
}

impl SymmetricMatrix {
    /// Builds from a square matrix, copying the upper triangle onto the lower.
    pub fn from_upper(mut data: DMatrix<f64>, role: MatrixRole) -> Result<Self> {
        if !data.is_square() {
            return Err(Error::DimensionMismatch {
                expected: data.nrows(),
                actual: data.ncols(),
            });
        }
        mirror_upper(&mut data);
        Ok(Self { data, role })
    }

    /// Builds from a square matrix whose two triangles must agree to `tol`.
    pub fn from_checked(data: DMatrix<f64>, role: MatrixRole, tol: f64) -> Result<Self> {
        if !data.is_square() {
            return Err(Error::DimensionMismatch {
                expected: data.nrows(),
                actual: data.ncols(),
            });
        }
        let n = data.nrows();
        for j in 0..n {
            for i in 0..j {
                let (a, b) = (data[(i, j)], data[(j, i)]);
                if (a - b).abs() > tol * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::InvalidInput(format!(
                        "matrix not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
            }
        }
        Self::from_upper(data, role)
    }

    pub fn identity(n: usize, role: MatrixRole) -> Self {
        Self {
            data: DMatrix::identity(n, n),
            role,
        }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn role(&self) -> MatrixRole {
        self.role
    }

    pub fn with_role(mut self, role: MatrixRole) -> Self {
        self.role = role;
        self
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.data.diagonal().iter().copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute deviation of the diagonal from one.
    pub fn unit_diagonal_deviation(&self) -> f64 {
        self.data
            .diagonal()
            .iter()
            .map(|d| (d - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Symmetric permutation `P M P'`, where `perm[new] = old`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.dim();
        assert_eq!(perm.len(), n);
        let data = DMatrix::from_fn(n, n, |i, j| self.data[(perm[i], perm[j])]);
        Self {
            data,
            role: self.role,
        }
    }

    /// Principal submatrix on `idx`, in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let k = idx.len();
        let data = DMatrix::from_fn(k, k, |i, j| self.data[(idx[i], idx[j])]);
        Self {
            data,
            role: self.role,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            data: &self.data * factor,
            role: self.role,
        }
    }
}

pub(crate) fn mirror_upper(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            m[(i, j)] = m[(j, i)];
        }
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order.
///
/// Column `i` of `vectors` is the unit eigenvector for `values[i]`.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigenSystem {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(f64::NAN)
    }

    pub fn max_value(&self) -> f64 {
        self.values.first().copied().unwrap_or(f64::NAN)
    }

    /// `Σ f(λ_i) v_i v_i'`, exactly symmetric.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.vectors.nrows(), self.vectors.ncols(), |i, j| {
            self.vectors[(i, j)] * f(self.values[j])
        });
        let mut out = scaled * self.vectors.transpose();
        mirror_upper(&mut out);
        out
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.reconstruct_with(|l| l)
    }
}

/// Sample covariance with divisor `t` of an `n × t` return matrix.
pub fn sample_covariance(returns: &DMatrix<f64>) -> Result<SymmetricMatrix> {
    let t = returns.ncols();
    if t < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            actual: t,
        });
    }
    if returns.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let centered = center_rows(returns);
    let mut cov = &centered * centered.transpose();
    cov /= t as f64;
    SymmetricMatrix::from_upper(cov, MatrixRole::Covariance)
}

pub(crate) fn center_rows(returns: &DMatrix<f64>) -> DMatrix<f64> {
    let t = returns.ncols() as f64;
    let means: DVector<f64> = returns.column_sum() / t;
    let mut centered = returns.clone();
    for mut col in centered.column_iter_mut() {
        col -= &means;
    }
    centered
}

/// Pearson correlation from a covariance matrix; unit diagonal is exact.
pub fn to_correlation(cov: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    let n = cov.dim();
    let sd: Vec<f64> = cov.diagonal().iter().map(|v| v.sqrt()).collect();
    for (asset, &v) in cov.diagonal().iter().enumerate() {
        if !(v > 0.0) {
            return Err(Error::DegenerateAsset { asset, variance: v });
        }
    }
    let m = cov.as_matrix();
    let mut c = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            m[(i, j)] / (sd[i] * sd[j])
        }
    });
    mirror_upper(&mut c);
    Ok(SymmetricMatrix {
        data: c,
        role: MatrixRole::Correlation,
    })
}

/// Covariance `σ_ij = c_ij √σ_ii √σ_jj`; the diagonal is set to `variances`.
pub fn to_covariance(corr: &SymmetricMatrix, variances: &[f64]) -> Result<SymmetricMatrix> {
    let n = corr.dim();
    if variances.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: variances.len(),
        });
    }
    for (asset, &v) in variances.iter().enumerate() {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::DegenerateAsset { asset, variance: v });
        }
    }
    let sd: Vec<f64> = variances.iter().map(|v| v.sqrt()).collect();
    let c = corr.as_matrix();
    let mut cov = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            variances[i]
        } else {
            c[(i, j)] * sd[i] * sd[j]
        }
    });
    mirror_upper(&mut cov);
    Ok(SymmetricMatrix {
        data: cov,
        role: MatrixRole::Covariance,
    })
}

/// Symmetric eigendecomposition, sorted descending with ties broken by the
/// solver's index. Each eigenvector's largest-magnitude component is made
/// positive so that output is reproducible.
pub fn eigendecompose(m: &SymmetricMatrix) -> Result<EigenSystem> {
    if !m.is_finite() {
        return Err(Error::NonFinite);
    }
    let n = m.dim();
    if n == 0 {
        return Ok(EigenSystem {
            values: Vec::new(),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    let eig = SymmetricEigen::new(m.as_matrix().clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let pivot = col
            .iter()
            .copied()
            .fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        vectors.set_column(dst, &(col * sign));
    }
    Ok(EigenSystem { values, vectors })
}

/// Result of [`clip_negative_eigenvalues`].
#[derive(Debug, Clone)]
pub struct Clipped {
    pub matrix: SymmetricMatrix,
    /// Whether any negative eigenvalue was set to zero.
    pub clipped: bool,
}

/// Replaces negative eigenvalues by zero. PSD inputs are returned unchanged.
/// The diagonal is not renormalized.
pub fn clip_negative_eigenvalues(m: &SymmetricMatrix) -> Result<Clipped> {
    // A successful Cholesky factorization proves definiteness cheaply.
    if m.is_finite() && nalgebra::Cholesky::new(m.data.clone()).is_some() {
        return Ok(Clipped {
            matrix: m.clone(),
            clipped: false,
        });
    }
    let eig = eigendecompose(m)?;
    if eig.values.iter().all(|&l| l >= 0.0) {
        return Ok(Clipped {
            matrix: m.clone(),
            clipped: false,
        });
    }
    let data = eig.reconstruct_with(|l| l.max(0.0));
    Ok(Clipped {
        matrix: SymmetricMatrix {
            data,
            role: m.role,
        },
        clipped: true,
    })
}

/// Writes a labeled square matrix: header `id,<labels...>`, then one row per
/// label. Values use the shortest round-trip decimal representation.
pub fn write_matrix_csv<W: Write>(writer: W, labels: &[String], m: &SymmetricMatrix) -> Result<()> {
    if labels.len() != m.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            actual: labels.len(),
        });
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header).map_err(csv_write_err)?;
    for (i, label) in labels.iter().enumerate() {
        let mut row = vec![label.clone()];
        row.extend((0..m.dim()).map(|j| format!("{}", m.get(i, j))));
        w.write_record(&row).map_err(csv_write_err)?;
    }
    w.flush().map_err(|e| Error::io("<matrix csv>", e))?;
    Ok(())
}

pub fn save_matrix_csv(path: &Path, labels: &[String], m: &SymmetricMatrix) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_matrix_csv(std::io::BufWriter::new(file), labels, m)
}

/// Reads a matrix written by [`write_matrix_csv`]; symmetry is checked to 1e-9.
pub fn read_matrix_csv<R: Read>(reader: R, role: MatrixRole) -> Result<(Vec<String>, SymmetricMatrix)> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = r.headers().map_err(|e| csv_read_err(e, 1))?.clone();
    let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let n = labels.len();
    let mut data = DMatrix::zeros(n, n);
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_read_err(e, i + 2))?;
        if i >= n {
            return Err(Error::Parse {
                row: i + 2,
                column: 1,
                message: format!("more rows than the {n} columns in the header"),
            });
        }
        if rec.get(0) != Some(labels[i].as_str()) {
            return Err(Error::Parse {
                row: i + 2,
                column: 1,
                message: format!("row label {:?} does not match column label {:?}", rec.get(0), labels[i]),
            });
        }
        for j in 0..n {
            let cell = rec.get(j + 1).unwrap_or("");
            data[(i, j)] = cell.trim().parse::<f64>().map_err(|_| Error::Parse {
                row: i + 2,
                column: j + 2,
                message: format!("not a number: {cell:?}"),
            })?;
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: rows,
        });
    }
    let m = SymmetricMatrix::from_checked(data, role, 1e-9)?;
    Ok((labels, m))
}

pub fn load_matrix_csv(path: &Path, role: MatrixRole) -> Result<(Vec<String>, SymmetricMatrix)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_matrix_csv(file, role)
}

pub(crate) fn csv_write_err(e: csv::Error) -> Error {
    Error::io("<csv>", std::io::Error::other(e.to_string()))
}

pub(crate) fn csv_read_err(e: csv::Error, row: usize) -> Error {
    let row = e.position().map(|p| p.line() as usize).unwrap_or(row);
    Error::Parse {
        row,
        column: 0,
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sym(rows: &[&[f64]]) -> SymmetricMatrix {
        let n = rows.len();
        SymmetricMatrix::from_upper(DMatrix::from_fn(n, n, |i, j| rows[i][j]), MatrixRole::Generic).unwrap()
    }

    #[test]
    fn sample_covariance_hand_example() {
        let r = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        let s = sample_covariance(&r).unwrap();
        assert_abs_diff_eq!(s.get(0, 0), 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.get(0, 1), 4.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.get(1, 0), 4.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.get(1, 1), 8.0 / 3.0, epsilon = 1e-15);
        assert_eq!(s.role(), MatrixRole::Covariance);
    }

    #[test]
    fn sample_covariance_constant_row_and_single_asset() {
        let r = DMatrix::from_row_slice(2, 3, &[5.0, 5.0, 5.0, 1.0, 2.0, 4.0]);
        let s = sample_covariance(&r).unwrap();
        assert_eq!(s.get(0, 0), 0.0);
        assert_eq!(s.get(0, 1), 0.0);
        let single = sample_covariance(&DMatrix::from_row_slice(1, 2, &[0.0, 1.0])).unwrap();
        assert_abs_diff_eq!(single.get(0, 0), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn sample_covariance_needs_two_columns() {
        let r = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        assert!(matches!(sample_covariance(&r), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn correlation_of_collinear_rows_is_all_ones() {
        let r = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        let c = to_correlation(&sample_covariance(&r).unwrap()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(c.get(i, j), 1.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn correlation_of_diagonal_is_identity_and_zero_variance_fails() {
        let d = sym(&[&[4.0, 0.0], &[0.0, 9.0]]);
        assert_eq!(to_correlation(&d).unwrap().as_matrix(), &DMatrix::identity(2, 2));
        let bad = sym(&[&[0.0, 0.0], &[0.0, 1.0]]);
        assert!(matches!(to_correlation(&bad), Err(Error::DegenerateAsset { asset: 0, .. })));
    }

    #[test]
    fn covariance_from_correlation() {
        let c = SymmetricMatrix::identity(2, MatrixRole::Correlation);
        let s = to_covariance(&c, &[4.0, 9.0]).unwrap();
        assert_eq!(s.as_matrix(), &DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]));
        let c = sym(&[&[1.0, 0.5], &[0.5, 1.0]]);
        let s = to_covariance(&c, &[4.0, 9.0]).unwrap();
        assert_abs_diff_eq!(s.get(0, 1), 3.0, epsilon = 1e-15);
        assert!(to_covariance(&c, &[4.0, 0.0]).is_err());
    }

    #[test]
    fn eigen_closed_forms() {
        let id = SymmetricMatrix::identity(4, MatrixRole::Generic);
        assert!(eigendecompose(&id).unwrap().values.iter().all(|&l| (l - 1.0).abs() < 1e-14));

        let rho = 0.3;
        let e = eigendecompose(&sym(&[&[1.0, rho], &[rho, 1.0]])).unwrap();
        assert_abs_diff_eq!(e.values[0], 1.0 + rho, epsilon = 1e-14);
        assert_abs_diff_eq!(e.values[1], 1.0 - rho, epsilon = 1e-14);

        let v = DVector::from_vec(vec![1.0, 2.0, -2.0]);
        let rank1 = SymmetricMatrix::from_upper(&v * v.transpose(), MatrixRole::Generic).unwrap();
        let e = eigendecompose(&rank1).unwrap();
        assert_abs_diff_eq!(e.values[0], 9.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.values[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.values[2], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn eigen_rejects_nan() {
        let m = sym(&[&[1.0, f64::NAN], &[f64::NAN, 1.0]]);
        assert!(matches!(eigendecompose(&m), Err(Error::NonFinite)));
    }

    #[test]
    fn clip_examples() {
        let psd = sym(&[&[2.0, 0.5], &[0.5, 1.0]]);
        let out = clip_negative_eigenvalues(&psd).unwrap();
        assert!(!out.clipped);
        assert_eq!(out.matrix, psd);

        let d = sym(&[&[1.0, 0.0], &[0.0, -0.5]]);
        let out = clip_negative_eigenvalues(&d).unwrap();
        assert!(out.clipped);
        assert_abs_diff_eq!(out.matrix.get(0, 0), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(out.matrix.get(1, 1), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(out.matrix.get(0, 1), 0.0, epsilon = 1e-14);

        let m = sym(&[&[1.0, 1.2], &[1.2, 1.0]]);
        let out = clip_negative_eigenvalues(&m).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(out.matrix.get(i, j), 1.1, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn matrix_csv_round_trip() {
        let m = sym(&[&[1.0, 0.1 + 0.2], &[0.0, 1.0 / 3.0]]);
        let labels = vec!["A".to_string(), "B".to_string()];
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, &labels, &m).unwrap();
        let (l2, m2) = read_matrix_csv(buf.as_slice(), MatrixRole::Generic).unwrap();
        assert_eq!(l2, labels);
        assert_eq!(m2, m);
    }

    #[test]
    fn matrix_csv_rejects_asymmetry() {
        let text = "id,A,B\nA,1,0.5\nB,0.4,1\n";
        assert!(read_matrix_csv(text.as_bytes(), MatrixRole::Generic).is_err());
    }
}
