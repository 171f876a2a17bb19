mod common;

use common::{gaussian, max_abs_diff, min_eigenvalue, random_covariance};
use kbahc::matrix::{
    clip_negative_eigenvalues, eigendecompose, read_matrix_csv, sample_covariance, to_correlation, to_covariance,
    write_matrix_csv,
};
use kbahc::{MatrixRole, SymmetricMatrix};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn indefinite(n: usize, seed: u64) -> SymmetricMatrix {
    let a = gaussian(n, n, seed);
    SymmetricMatrix::from_upper((&a + a.transpose()) * 0.5, MatrixRole::Generic).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covariance_ignores_row_shifts(n in 1usize..8, t in 2usize..40, shift in -5.0f64..5.0, seed in any::<u64>()) {
        let r = gaussian(n, t, seed);
        let mut shifted = r.clone();
        shifted.row_mut(0).add_scalar_mut(shift);
        let a = sample_covariance(&r).unwrap();
        let b = sample_covariance(&shifted).unwrap();
        prop_assert!(max_abs_diff(&a, &b) < 1e-12 * (1.0 + shift.abs()) * 10.0);
    }

    #[test]
    fn correlation_ignores_row_scale(n in 2usize..8, scale in 1e-3f64..1e3, seed in any::<u64>()) {
        let r = gaussian(n, 30, seed);
        let mut scaled = r.clone();
        scaled.row_mut(1).scale_mut(scale);
        let a = to_correlation(&sample_covariance(&r).unwrap()).unwrap();
        let b = to_correlation(&sample_covariance(&scaled).unwrap()).unwrap();
        prop_assert!(max_abs_diff(&a, &b) < 1e-12);
        prop_assert_eq!(b.unit_diagonal_deviation(), 0.0);
    }

    #[test]
    fn correlation_round_trip(n in 1usize..10, seed in any::<u64>()) {
        let s = random_covariance(n, seed, 0.1);
        let back = to_covariance(&to_correlation(&s).unwrap(), &s.diagonal()).unwrap();
        prop_assert!(max_abs_diff(&s, &back) < 1e-12 * s.as_matrix().abs().max());
        prop_assert_eq!(back.diagonal(), s.diagonal());
    }

    #[test]
    fn eigen_system_is_orthonormal_and_reconstructs(n in 1usize..20, seed in any::<u64>()) {
        let m = indefinite(n, seed);
        let e = eigendecompose(&m).unwrap();
        prop_assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        let gram = e.vectors.transpose() * &e.vectors;
        prop_assert!((gram - DMatrix::<f64>::identity(n, n)).abs().max() <= 1e-10);
        let norm = m.as_matrix().norm();
        prop_assert!((e.reconstruct() - m.as_matrix()).norm() <= 1e-8 * norm.max(1.0));
        for (i, &l) in e.values.iter().enumerate() {
            let v = e.vectors.column(i);
            prop_assert!((m.as_matrix() * v - v * l).abs().max() <= 1e-8 * norm.max(1.0));
        }
    }

    #[test]
    fn clipping_is_psd_and_idempotent(n in 1usize..15, seed in any::<u64>()) {
        let m = indefinite(n, seed);
        let once = clip_negative_eigenvalues(&m).unwrap();
        prop_assert!(min_eigenvalue(&once.matrix) >= -1e-10);
        let twice = clip_negative_eigenvalues(&once.matrix).unwrap();
        prop_assert!(max_abs_diff(&once.matrix, &twice.matrix) <= 1e-10);

        let psd = random_covariance(n, seed, 0.0);
        let kept = clip_negative_eigenvalues(&psd).unwrap();
        prop_assert!(max_abs_diff(&psd, &kept.matrix) <= 1e-10);
    }

    #[test]
    fn matrix_csv_round_trip(n in 1usize..8, seed in any::<u64>()) {
        let s = random_covariance(n, seed, 0.5);
        let labels: Vec<String> = (0..n).map(|i| format!("a{i}")).collect();
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, &labels, &s).unwrap();
        let (l2, back) = read_matrix_csv(buf.as_slice(), MatrixRole::Covariance).unwrap();
        prop_assert_eq!(l2, labels);
        prop_assert_eq!(back.as_matrix(), s.as_matrix());
    }
}
