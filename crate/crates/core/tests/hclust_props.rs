mod common;

use common::{max_abs_diff, min_eigenvalue, rng, wishart_correlation};
use kbahc::hclust::{average_linkage, hcal, hcal_with_dendrogram, k_hcal, k_hcal_orders, similarity_distance};
use kbahc::{MatrixRole, SymmetricMatrix};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

/// Average linkage recomputed from scratch at every step: cluster distance
/// is the mean of all member pair distances. Returns `(height, members)`.
fn naive_linkage(d: &DMatrix<f64>) -> Vec<(f64, Vec<usize>)> {
    let mut clusters: Vec<Vec<usize>> = (0..d.nrows()).map(|i| vec![i]).collect();
    let mut out = Vec::new();
    while clusters.len() > 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut s = 0.0;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        s += d[(i, j)];
                    }
                }
                let avg = s / (clusters[a].len() * clusters[b].len()) as f64;
                if avg < best.0 {
                    best = (avg, a, b);
                }
            }
        }
        let (h, a, b) = best;
        let right = clusters.remove(b);
        let mut merged = clusters.remove(a);
        merged.extend(right);
        merged.sort_unstable();
        out.push((h, merged.clone()));
        clusters.push(merged);
    }
    out
}

/// Entry-wise filter from the naive linkage: every pair gets `1 − ρ` of the
/// first merge containing both.
fn naive_hcal(c: &SymmetricMatrix) -> DMatrix<f64> {
    let n = c.dim();
    let d = DMatrix::from_fn(n, n, |i, j| 1.0 - c.get(i, j));
    let merges = naive_linkage(&d);
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            return c.get(i, i);
        }
        let (h, _) = merges
            .iter()
            .find(|(_, m)| m.contains(&i) && m.contains(&j))
            .expect("root contains every pair");
        1.0 - h
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linkage_matches_naive_oracle(n in 2usize..16, seed in any::<u64>()) {
        let c = wishart_correlation(n, 40, seed);
        let dendro = average_linkage(&similarity_distance(&c)).unwrap();
        let d = DMatrix::from_fn(n, n, |i, j| 1.0 - c.get(i, j));
        let oracle = naive_linkage(&d);
        prop_assert_eq!(dendro.merges.len(), n - 1);
        for (m, (h, members)) in dendro.merges.iter().zip(&oracle) {
            prop_assert!((m.height - h).abs() < 1e-12);
            prop_assert_eq!(&m.members(), members);
        }
        let filtered = hcal(&c).unwrap();
        prop_assert!((filtered.as_matrix() - naive_hcal(&c)).abs().max() < 1e-12);
    }

    #[test]
    fn heights_monotone_and_root_complete(n in 2usize..20, seed in any::<u64>()) {
        let c = wishart_correlation(n, 30, seed);
        let dendro = average_linkage(&similarity_distance(&c)).unwrap();
        let h = dendro.heights();
        prop_assert!(h.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        prop_assert_eq!(dendro.merges.last().unwrap().members(), (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn hcal_is_idempotent(n in 3usize..16, seed in any::<u64>()) {
        let c = wishart_correlation(n, 40, seed);
        let (once, d1) = hcal_with_dendrogram(&c).unwrap();
        let (twice, d2) = hcal_with_dendrogram(&once).unwrap();
        prop_assert!(max_abs_diff(&once, &twice) < 1e-12);
        prop_assert_eq!(d1.structure(), d2.structure());
    }

    #[test]
    fn first_order_is_ultrametric(n in 3usize..16, seed in any::<u64>()) {
        let c = wishart_correlation(n, 40, seed);
        let f = k_hcal(&c, 1).unwrap().matrix;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let dij = 1.0 - f.get(i, j);
                    let bound = (1.0 - f.get(i, k)).max(1.0 - f.get(j, k));
                    prop_assert!(dij <= bound + 1e-12);
                }
            }
        }
    }

    #[test]
    fn permutation_equivariance(n in 3usize..14, k in 1usize..3, seed in any::<u64>()) {
        // Deeper residues contain exact ties, where the index tie-break decides.
        let c = wishart_correlation(n, 40, seed);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng(seed ^ 0xABCD));
        let direct = k_hcal(&c.permuted(&perm), k).unwrap().matrix;
        let moved = k_hcal(&c, k).unwrap().matrix.permuted(&perm);
        prop_assert!(max_abs_diff(&direct, &moved) < 1e-10);
    }

    #[test]
    fn unclipped_orders_keep_unit_diagonal(n in 3usize..14, seed in any::<u64>()) {
        let c = wishart_correlation(n, 40, seed);
        for f in k_hcal_orders(&c, &[1, 2, 3, 5, 8]).unwrap() {
            if !f.clipped {
                prop_assert!(f.matrix.unit_diagonal_deviation() < 1e-9);
            } else {
                prop_assert!(min_eigenvalue(&f.matrix) >= -1e-9);
            }
        }
    }
}

#[test]
fn first_order_psd_when_global_mode_dominates() {
    for seed in 0..200u64 {
        let mut r = rng(seed);
        let n = r.random_range(4..30);
        let rho: f64 = r.random_range(0.37..0.9);
        let noise = 0.1 * (1.0 - rho);
        let mut m = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0
            } else {
                rho + noise * r.random_range(-1.0..1.0)
            }
        });
        m = (&m + m.transpose()) * 0.5;
        m.fill_diagonal(1.0);
        let c = SymmetricMatrix::from_upper(m, MatrixRole::Correlation).unwrap();
        let mean_corr = (c.as_matrix().sum() - n as f64) / (n * (n - 1)) as f64;
        assert!(mean_corr >= 0.3);
        let f = hcal(&c).unwrap();
        assert!(min_eigenvalue(&f) >= -1e-10, "seed {seed}: {}", min_eigenvalue(&f));
    }
}

#[test]
fn residue_norm_shrinks_with_order() {
    let mut wins = 0;
    let (mut e1, mut e5, mut e20) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..100u64 {
        let c = wishart_correlation(10, 30, 1000 + seed);
        let out = k_hcal_orders(&c, &[1, 5, 20]).unwrap();
        let err: Vec<f64> = out
            .iter()
            .map(|f| (c.as_matrix() - f.matrix.as_matrix()).norm())
            .collect();
        if err[2] < err[0] {
            wins += 1;
        }
        e1.push(err[0]);
        e5.push(err[1]);
        e20.push(err[2]);
    }
    assert!(wins >= 95, "k=20 beat k=1 in {wins}/100");
    let med = |v: &[f64]| kbahc::metrics::median(v);
    assert!(med(&e1) > med(&e5) && med(&e5) > med(&e20));
}
