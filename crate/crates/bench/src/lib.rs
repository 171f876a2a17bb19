//! Fixtures shared by the benchmarks in `benches/`.

use kbahc::synth::{hierarchical_truth, sample_returns, vol_profile, FactorModelSpec, HierarchyLevel};
use nalgebra::DMatrix;

/// `n × t` returns from a two-level block model; `n` must be divisible by 10.
pub fn hierarchical_returns(n: usize, t: usize, seed: u64) -> DMatrix<f64> {
    let spec = FactorModelSpec::new(
        n,
        0.2,
        vec![HierarchyLevel::uniform(n, 2, 0.35), HierarchyLevel::uniform(n, 10, 0.55)],
    )
    .expect("valid block model");
    let truth = hierarchical_truth(&spec).expect("valid block model");
    sample_returns(&truth, t, &vol_profile(n, 0.01, 0.03), seed).expect("positive definite truth")
}
