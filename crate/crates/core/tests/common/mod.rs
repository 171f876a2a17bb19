#![allow(dead_code)]

use kbahc::matrix::{sample_covariance, to_correlation};
use kbahc::{MatrixRole, SymmetricMatrix};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(n: usize, t: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng(seed);
    DMatrix::from_fn(n, t, |_, _| StandardNormal.sample(&mut rng))
}

/// Returns with a common factor of strength `beta` on top of unit noise.
pub fn one_factor(n: usize, t: usize, beta: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = rng(seed);
    let f: Vec<f64> = (0..t).map(|_| StandardNormal.sample(&mut rng)).collect();
    DMatrix::from_fn(n, t, |_, j| beta * f[j] + { let e: f64 = StandardNormal.sample(&mut rng); e })
}

/// Pearson correlation of Gaussian data.
pub fn wishart_correlation(n: usize, t: usize, seed: u64) -> SymmetricMatrix {
    to_correlation(&sample_covariance(&gaussian(n, t, seed)).unwrap()).unwrap()
}

pub fn max_abs_diff(a: &SymmetricMatrix, b: &SymmetricMatrix) -> f64 {
    (a.as_matrix() - b.as_matrix()).abs().max()
}

pub fn min_eigenvalue(m: &SymmetricMatrix) -> f64 {
    nalgebra::SymmetricEigen::new(m.as_matrix().clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Random covariance `A A' / k + eps I`.
pub fn random_covariance(n: usize, seed: u64, eps: f64) -> SymmetricMatrix {
    let a = gaussian(n, n + 2, seed);
    let m = &a * a.transpose() / (n + 2) as f64 + DMatrix::identity(n, n) * eps;
    SymmetricMatrix::from_upper(m, MatrixRole::Covariance).unwrap()
}
