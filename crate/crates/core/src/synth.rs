//! Synthetic ground truths and Gaussian return panels.
//!
//! Truths are nested block correlation matrices generated by a hierarchical
//! factor model: one global factor, plus one factor per block at each level.
//! With `levels` ordered from coarse to fine, two assets whose finest common
//! block sits at level `l` have correlation `levels[l].correlation`; assets
//! sharing no block have correlation `global`.

use chrono::{Datelike, NaiveDate, Weekday};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::data_io::ReturnPanel;
use crate::error::{Error, Result};
use crate::matrix::{eigendecompose, to_correlation, MatrixRole, SymmetricMatrix};

/// One level of the block hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyLevel {
    /// Consecutive block sizes; they must sum to the number of assets.
    pub block_sizes: Vec<usize>,
    /// Correlation between two assets in the same block at this level.
    pub correlation: f64,
}

impl HierarchyLevel {
    /// `blocks` blocks of equal size `n / blocks`.
    pub fn uniform(n: usize, blocks: usize, correlation: f64) -> Self {
        Self {
            block_sizes: vec![n / blocks.max(1); blocks],
            correlation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorModelSpec {
    pub n: usize,
    /// Correlation carried by the global mode (squared global loading).
    pub global: f64,
    /// Levels from coarse to fine. Finer blocks must nest inside coarser
    /// ones and correlations must not decrease with depth.
    pub levels: Vec<HierarchyLevel>,
}

impl FactorModelSpec {
    pub fn new(n: usize, global: f64, levels: Vec<HierarchyLevel>) -> Result<Self> {
        let spec = Self { n, global, levels };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks block sums, nesting and monotone correlations, which together
    /// guarantee a valid factor model and therefore a PSD truth.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidInput("factor model needs at least one asset".into()));
        }
        let mut prev_corr = self.global;
        if !(0.0..=1.0).contains(&prev_corr) {
            return Err(Error::InvalidInput(format!(
                "global correlation must lie in [0, 1], got {prev_corr}"
            )));
        }
        let mut prev_bounds: Vec<usize> = vec![0, self.n];
        for (l, level) in self.levels.iter().enumerate() {
            let total: usize = level.block_sizes.iter().sum();
            if total != self.n || level.block_sizes.contains(&0) {
                return Err(Error::InvalidInput(format!(
                    "level {l}: block sizes {:?} must be positive and sum to {}",
                    level.block_sizes, self.n
                )));
            }
            if !(level.correlation >= prev_corr && level.correlation <= 1.0) {
                return Err(Error::InvalidInput(format!(
                    "level {l}: correlation {} must lie in [{prev_corr}, 1]",
                    level.correlation
                )));
            }
            let bounds = boundaries(&level.block_sizes);
            if let Some(b) = prev_bounds.iter().find(|b| !bounds.contains(b)) {
                return Err(Error::InvalidInput(format!(
                    "level {l} does not nest in the level above: boundary {b} is split"
                )));
            }
            prev_bounds = bounds;
            prev_corr = level.correlation;
        }
        Ok(())
    }

    /// Index of the finest level at which `i` and `j` share a block.
    fn common_level(&self, i: usize, j: usize) -> Option<usize> {
        self.levels
            .iter()
            .rposition(|level| block_of(&level.block_sizes, i) == block_of(&level.block_sizes, j))
    }

    fn pair_correlation(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 1.0;
        }
        self.common_level(i, j)
            .map_or(self.global, |l| self.levels[l].correlation)
    }

    fn finest_correlation(&self) -> f64 {
        self.levels.last().map_or(self.global, |l| l.correlation)
    }
}

fn boundaries(sizes: &[usize]) -> Vec<usize> {
    let mut out = vec![0];
    let mut acc = 0;
    for s in sizes {
        acc += s;
        out.push(acc);
    }
    out
}

fn block_of(sizes: &[usize], i: usize) -> usize {
    let mut acc = 0;
    for (b, s) in sizes.iter().enumerate() {
        acc += s;
        if i < acc {
            return b;
        }
    }
    sizes.len()
}

/// Nested block-constant correlation matrix of `spec`.
pub fn hierarchical_truth(spec: &FactorModelSpec) -> Result<SymmetricMatrix> {
    spec.validate()?;
    let data = DMatrix::from_fn(spec.n, spec.n, |i, j| spec.pair_correlation(i, j));
    SymmetricMatrix::from_upper(data, MatrixRole::Correlation)
}

/// Correlation of the same factor model with each loading multiplied by
/// `1 + dispersion · u`, `u ~ U[−1, 1]` drawn per asset and factor. The
/// idiosyncratic variance stays `1 − ρ_finest`, so the result is PSD but no
/// longer block-constant.
pub fn dispersed_truth(spec: &FactorModelSpec, dispersion: f64, seed: u64) -> Result<SymmetricMatrix> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&dispersion) {
        return Err(Error::InvalidInput(format!("dispersion must lie in [0, 1], got {dispersion}")));
    }
    let n = spec.n;
    let mut factors: Vec<(f64, Vec<usize>)> = vec![(spec.global, vec![0; n])];
    let mut prev = spec.global;
    for level in &spec.levels {
        factors.push((
            level.correlation - prev,
            (0..n).map(|i| block_of(&level.block_sizes, i)).collect(),
        ));
        prev = level.correlation;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    let mut cov = DMatrix::<f64>::zeros(n, n);
    for (var, blocks) in &factors {
        let scale = var.sqrt();
        let loadings: Vec<f64> = (0..n).map(|_| scale * (1.0 + dispersion * u.sample(&mut rng))).collect();
        for i in 0..n {
            for j in 0..n {
                if blocks[i] == blocks[j] {
                    cov[(i, j)] += loadings[i] * loadings[j];
                }
            }
        }
    }
    let idio = 1.0 - spec.finest_correlation();
    for i in 0..n {
        cov[(i, i)] += idio;
    }
    to_correlation(&SymmetricMatrix::from_upper(cov, MatrixRole::Covariance)?)
}

/// Daily volatilities spread linearly from `lo` to `hi`.
pub fn vol_profile(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    if n <= 1 {
        return vec![lo; n];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Square-root factor `A` with `A A' = m`: Cholesky when it succeeds,
/// otherwise the symmetric square root with negative eigenvalues dropped.
fn square_root(m: &SymmetricMatrix) -> Result<DMatrix<f64>> {
    if let Some(ch) = nalgebra::Cholesky::new(m.as_matrix().clone()) {
        return Ok(ch.l());
    }
    let eig = eigendecompose(m)?;
    let mut a = eig.vectors.clone();
    for (j, &l) in eig.values.iter().enumerate() {
        a.column_mut(j).scale_mut(l.max(0.0).sqrt());
    }
    Ok(a)
}

/// `n × t` i.i.d. Gaussian returns with correlation `truth` and daily
/// volatilities `vols`.
pub fn sample_returns(truth: &SymmetricMatrix, t: usize, vols: &[f64], seed: u64) -> Result<DMatrix<f64>> {
    let n = truth.dim();
    if vols.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: vols.len(),
        });
    }
    if let Some(v) = vols.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::InvalidInput(format!("volatilities must be positive, got {v}")));
    }
    if !truth.is_finite() {
        return Err(Error::NonFinite);
    }
    let a = square_root(truth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DMatrix::<f64>::from_fn(n, t, |_, _| StandardNormal.sample(&mut rng));
    let mut x = a * z;
    for (i, v) in vols.iter().enumerate() {
        x.row_mut(i).scale_mut(*v);
    }
    Ok(x)
}

/// Wraps returns into a fully available panel dated on consecutive
/// weekdays from `start`, with asset ids `S000`, `S001`, ...
pub fn synthetic_panel(returns: DMatrix<f64>, start: NaiveDate) -> Result<ReturnPanel> {
    let (n, t) = returns.shape();
    let mut dates = Vec::with_capacity(t);
    let mut d = start;
    while dates.len() < t {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            dates.push(d);
        }
        d = d.succ_opt().ok_or_else(|| Error::InvalidInput("date overflow".into()))?;
    }
    let width = n.saturating_sub(1).to_string().len().max(3);
    let assets = (0..n).map(|i| format!("S{i:0width$}")).collect();
    ReturnPanel::from_dense(dates, assets, returns)
}
