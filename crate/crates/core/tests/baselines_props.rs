mod common;

use common::{gaussian, min_eigenvalue};
use kbahc::baselines::{cv_eigenvalue_shrinkage, sample_estimator};
use kbahc::matrix::eigendecompose;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn msd_from_one(values: &[f64]) -> f64 {
    values.iter().map(|l| (l - 1.0) * (l - 1.0)).sum::<f64>() / values.len() as f64
}

#[test]
fn cv_beats_sample_against_identity_truth() {
    let mut wins = 0;
    for seed in 0..100u64 {
        let r = gaussian(20, 200, 5000 + seed);
        let sample = eigendecompose(&sample_estimator(&r).unwrap()).unwrap();
        let cv = eigendecompose(&cv_eigenvalue_shrinkage(&r, 10).unwrap()).unwrap();
        if msd_from_one(&cv.values) < msd_from_one(&sample.values) {
            wins += 1;
        }
    }
    assert!(wins >= 90, "CV won {wins}/100");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cv_is_psd_and_trace_preserving(n in 2usize..25, folds in 2usize..8, seed in any::<u64>()) {
        let t = folds * 2 + n;
        let r = gaussian(n, t, seed);
        let s = sample_estimator(&r).unwrap();
        let cv = cv_eigenvalue_shrinkage(&r, folds).unwrap();
        let tr = |m: &kbahc::SymmetricMatrix| m.as_matrix().trace();
        prop_assert!((tr(&cv) - tr(&s)).abs() <= 1e-10 * tr(&s));
        prop_assert!(min_eigenvalue(&cv) >= -1e-12 * tr(&s));
    }

    #[test]
    fn cv_independent_of_fold_order(n in 2usize..10, seed in any::<u64>()) {
        // Rotating the columns by one fold length permutes the folds only.
        let (folds, len) = (5, 8);
        let r = gaussian(n, folds * len, seed);
        let rotated = DMatrix::from_fn(n, folds * len, |i, j| r[(i, (j + len) % (folds * len))]);
        let a = cv_eigenvalue_shrinkage(&r, folds).unwrap();
        let b = cv_eigenvalue_shrinkage(&rotated, folds).unwrap();
        prop_assert!((a.as_matrix() - b.as_matrix()).abs().max() <= 1e-10 * a.as_matrix().abs().max());
    }
}
