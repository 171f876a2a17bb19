mod common;

use std::collections::BTreeMap;

use chrono::NaiveDate;
use common::{gaussian, rng};
use kbahc::data_io::{read_panel, write_panel};
use kbahc::metrics::{concentration, ipr_of, shuffled_null_panel, turnover_gamma};
use kbahc::{InputKind, ReturnPanel, Weights};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn dates(t: usize) -> Vec<NaiveDate> {
    let start = NaiveDate::from_ymd_opt(2015, 3, 2).unwrap();
    (0..t).map(|i| start + chrono::Days::new(i as u64)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn returns_panel_round_trips(n in 1usize..6, t in 1usize..30, seed in any::<u64>()) {
        let mut r = rng(seed);
        let values = DMatrix::from_fn(n, t, |_, _| r.random_range(-0.2..0.2) * 10f64.powi(r.random_range(-6..2)));
        let available = DMatrix::from_fn(n, t, |_, _| r.random_bool(0.85));
        let assets = (0..n).map(|i| format!("X{i}")).collect();
        let panel = ReturnPanel::new(dates(t), assets, values, available).unwrap();
        let mut buf = Vec::new();
        write_panel(&mut buf, &panel).unwrap();
        let back = read_panel(buf.as_slice(), InputKind::Returns).unwrap();
        prop_assert_eq!(back.available(), panel.available());
        for i in 0..n {
            for j in 0..t {
                if panel.is_available(i, j) {
                    prop_assert_eq!(back.values()[(i, j)].to_bits(), panel.values()[(i, j)].to_bits());
                }
            }
        }
    }

    #[test]
    fn prices_reconstruct_from_returns(t in 2usize..60, seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut prices = vec![r.random_range(1.0..500.0)];
        for _ in 1..t {
            let last = *prices.last().unwrap();
            prices.push(last * (1.0 + r.random_range(-0.1..0.1)));
        }
        let mut text = String::from("date,P\n");
        for (d, p) in dates(t).iter().zip(&prices) {
            text.push_str(&format!("{d},{p}\n"));
        }
        let panel = read_panel(text.as_bytes(), InputKind::Prices).unwrap();
        let mut p = prices[0];
        for (j, &expected) in prices.iter().enumerate().skip(1) {
            p *= 1.0 + panel.values()[(0, j - 1)];
            prop_assert!((p - expected).abs() <= 1e-12 * expected);
        }
    }

    #[test]
    fn ipr_ignores_sign_and_order(n in 1usize..30, seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut v: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-6);
        v.iter_mut().for_each(|x| *x /= norm);
        let base = ipr_of(&v).unwrap();
        prop_assert!((1.0 - 1e-12..=n as f64 * (1.0 + 1e-12)).contains(&base));
        let mut w: Vec<f64> = v.iter().map(|x| -x).collect();
        w.shuffle(&mut r);
        prop_assert!((ipr_of(&w).unwrap() - base).abs() <= 1e-12 * base);
    }

    #[test]
    fn n90_never_grows_when_mass_concentrates(n in 2usize..20, seed in any::<u64>()) {
        let mut r = rng(seed);
        let w: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        let total: f64 = w.iter().sum();
        let w: Vec<f64> = w.iter().map(|x| x / total).collect();
        let (_, before) = concentration(&Weights::new(w.clone()));
        prop_assert!((1..=n).contains(&before));
        // Move half of the smallest weight onto the largest.
        let (lo, _) = w.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        let (hi, _) = w.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        let mut c = w.clone();
        let moved = c[lo] / 2.0;
        c[lo] -= moved;
        c[hi] += moved;
        let (_, after) = concentration(&Weights::new(c));
        prop_assert!(after <= before);
    }

    #[test]
    fn gamma_is_symmetric_and_zero_only_when_static(len in 2usize..6, n in 1usize..5, seed in any::<u64>()) {
        let mut r = rng(seed);
        let snaps: Vec<BTreeMap<usize, f64>> = (0..len)
            .map(|_| {
                let mut snap = BTreeMap::new();
                for i in 0..n {
                    if r.random_bool(0.8) {
                        snap.insert(i, r.random_range(-1.0..1.0));
                    }
                }
                snap
            })
            .collect();
        let forward = turnover_gamma(&snaps).unwrap();
        let reversed: Vec<_> = snaps.iter().rev().cloned().collect();
        prop_assert!((forward - turnover_gamma(&reversed).unwrap()).abs() <= 1e-12);
        prop_assert!(forward >= 0.0);
        prop_assert_eq!(forward == 0.0, snaps.windows(2).all(|p| p[0] == p[1]));
        let frozen = vec![snaps[0].clone(); len];
        prop_assert_eq!(turnover_gamma(&frozen).unwrap(), 0.0);
    }
}

#[test]
fn shuffled_panel_decorrelates_assets() {
    let t = 4000;
    let common = gaussian(1, t, 8);
    let noise = gaussian(6, t, 9);
    let r = DMatrix::from_fn(6, t, |i, j| common[(0, j)] + 0.5 * noise[(i, j)]);
    let s = shuffled_null_panel(&r, 3);
    let c = kbahc::matrix::to_correlation(&kbahc::matrix::sample_covariance(&s).unwrap()).unwrap();
    for i in 0..6 {
        for j in 0..i {
            assert!(c.get(i, j).abs() < 4.0 / (t as f64).sqrt(), "({i},{j}) = {}", c.get(i, j));
        }
    }
}
