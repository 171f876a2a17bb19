//! Rolling-window minimum-variance backtests and randomized experiments.
//!
//! Windows and repetitions are estimated in parallel; everything that
//! depends on ordering (cost accounting, aggregation) runs sequentially in
//! window order, so reports do not depend on the thread count.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data_io::{slice, universe_at, ReturnPanel, WindowSpec};
use crate::error::{Error, Result};
use crate::estimator::{estimate_all, EstimatorSpec};
use crate::matrix::{csv_write_err, eigendecompose, sample_covariance, SymmetricMatrix};
use crate::metrics::{
    concentration, gross_leverage, ipr, l1_distance, median, realized_volatility, sharpe_ratio,
    shuffled_null_panel, turnover_gamma, yearly_dense_rank,
};
use crate::portfolio::{gmv_long_only, gmv_long_short, Weights};
use crate::seed::derive_seed;

pub const DEFAULT_DT_OUT: usize = 21;
pub const DEFAULT_COST_BPS: f64 = 2.0;
pub const DEFAULT_K_GRID: [usize; 8] = [1, 2, 3, 4, 7, 11, 18, 30];
pub const DEFAULT_REPS: usize = 200;
pub const DEFAULT_SUBSET: usize = 100;
pub const DEFAULT_BOOTSTRAP_SAMPLES: usize = 1000;

/// Draws per repetition before it is skipped.
pub const MAX_REDRAWS: usize = 100;

/// A portfolio construction rule: equal weights or GMV on an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Equal,
    Gmv(EstimatorSpec),
}

impl Strategy {
    pub fn label(&self) -> String {
        self.to_string()
    }

    pub fn order(&self) -> Option<usize> {
        match self {
            Strategy::Gmv(spec) => spec.order(),
            Strategy::Equal => None,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Equal => write!(f, "EQ"),
            Strategy::Gmv(spec) => spec.fmt(f),
        }
    }
}

/// `eq`, or anything accepted by [`EstimatorSpec`].
impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("eq") {
            Ok(Strategy::Equal)
        } else {
            s.parse().map(Strategy::Gmv)
        }
    }
}

/// Weights of every strategy on one calibration matrix. k-BAHC seeds are
/// re-derived from `base` and `path` so that windows draw independent
/// replicas.
fn strategy_weights(
    strategies: &[Strategy],
    r_in: &DMatrix<f64>,
    long_only: bool,
    base: u64,
    path: &[u64],
) -> Vec<Result<Weights>> {
    let specs: Vec<EstimatorSpec> = strategies
        .iter()
        .filter_map(|s| match s {
            Strategy::Gmv(spec @ EstimatorSpec::KBahc { seed, .. }) => {
                let mut p = vec![*seed];
                p.extend_from_slice(path);
                Some(spec.with_seed(derive_seed(base, &p)))
            }
            Strategy::Gmv(spec) => Some(*spec),
            Strategy::Equal => None,
        })
        .collect();
    let mut estimates = estimate_all(&specs, r_in).into_iter();
    strategies
        .iter()
        .map(|s| match s {
            Strategy::Equal => Ok(Weights::equal(r_in.nrows())),
            Strategy::Gmv(_) => {
                let cov = estimates.next().expect("one estimate per GMV strategy")?;
                if long_only {
                    gmv_long_only(&cov)
                } else {
                    gmv_long_short(&cov)
                }
            }
        })
        .collect()
}

/// Daily portfolio returns `w' r_t` with weights held fixed.
fn portfolio_returns(w: &Weights, r_out: &DMatrix<f64>) -> Vec<f64> {
    (0..r_out.ncols())
        .map(|d| w.values.iter().zip(r_out.column(d).iter()).map(|(a, b)| a * b).sum())
        .collect()
}

/// Transaction cost, as a fraction of wealth, of moving from `prev` (already
/// drifted to the rebalance instant) to `new`:
/// `cost_bps / 10⁴ · Σ_i |new_i − prev_i|`. Absent assets count as zero.
pub fn apply_costs(prev: &BTreeMap<usize, f64>, new: &BTreeMap<usize, f64>, cost_bps: f64) -> f64 {
    cost_bps / 1e4 * l1_distance(prev, new)
}

/// Allocation `w` after each asset compounds its `returns` row, renormalized
/// to the portfolio value. `assets[i]` labels row `i` of `returns`.
pub fn drift_weights(w: &Weights, assets: &[usize], returns: &DMatrix<f64>) -> BTreeMap<usize, f64> {
    let grown: Vec<f64> = w
        .values
        .iter()
        .enumerate()
        .map(|(i, wi)| wi * returns.row(i).iter().map(|r| 1.0 + r).product::<f64>())
        .collect();
    let total: f64 = grown.iter().sum();
    let norm = if total.abs() > f64::EPSILON { total } else { 1.0 };
    assets
        .iter()
        .zip(grown)
        .filter(|(_, g)| *g != 0.0)
        .map(|(&a, g)| (a, g / norm))
        .collect()
}

fn to_map(w: &Weights, assets: &[usize]) -> BTreeMap<usize, f64> {
    assets
        .iter()
        .zip(&w.values)
        .filter(|(_, v)| **v != 0.0)
        .map(|(&a, &v)| (a, v))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestConfig {
    pub dt_in: usize,
    pub dt_out: usize,
    pub cost_bps: f64,
    pub long_only: bool,
    /// Strategies to run; equal weights are added if missing.
    pub strategies: Vec<Strategy>,
    /// First test date (calibration may use earlier data).
    pub start: Option<NaiveDate>,
    /// Last date of the last test window.
    pub end: Option<NaiveDate>,
    pub seed: u64,
}

impl BacktestConfig {
    pub fn new(dt_in: usize, strategies: Vec<Strategy>) -> Self {
        Self {
            dt_in,
            dt_out: DEFAULT_DT_OUT,
            cost_bps: DEFAULT_COST_BPS,
            long_only: false,
            strategies,
            start: None,
            end: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dt_in < 2 {
            return Err(Error::InvalidInput(format!("dt_in must be >= 2, got {}", self.dt_in)));
        }
        if self.dt_out < 1 {
            return Err(Error::InvalidInput("dt_out must be >= 1".into()));
        }
        if !(self.cost_bps >= 0.0 && self.cost_bps.is_finite()) {
            return Err(Error::InvalidInput(format!("cost_bps must be >= 0, got {}", self.cost_bps)));
        }
        for s in &self.strategies {
            if let Strategy::Gmv(spec) = s {
                spec.validate()?;
            }
        }
        Ok(())
    }

    fn resolved_strategies(&self) -> Vec<Strategy> {
        let mut out = Vec::with_capacity(self.strategies.len() + 1);
        if !self.strategies.contains(&Strategy::Equal) {
            out.push(Strategy::Equal);
        }
        for s in &self.strategies {
            if !out.contains(s) {
                out.push(*s);
            }
        }
        out
    }
}

/// One strategy over one test window.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyWindow {
    /// Weights aligned with [`WindowRecord::assets`]; `None` when the window
    /// is a gap or estimation failed.
    pub weights: Option<Weights>,
    pub error: Option<String>,
    /// Cost charged at the rebalance, as a fraction of wealth.
    pub cost: f64,
    pub gross: Vec<f64>,
    pub net: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowRecord {
    /// Date index of the rebalance (first test day).
    pub t_end: usize,
    pub date: NaiveDate,
    pub assets: Vec<usize>,
    /// No asset was eligible; every strategy held cash.
    pub gap: bool,
    pub strategies: Vec<StrategyWindow>,
}

/// One line of the metric tables. Missing values are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub dt_in: usize,
    pub estimator: String,
    pub realized_vol: f64,
    pub sharpe: f64,
    pub n_eff: f64,
    pub n_90: f64,
    pub gross_leverage: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub dt_in: usize,
    pub strategies: Vec<Strategy>,
    pub asset_ids: Vec<String>,
    /// Test dates of all windows, in order.
    pub dates: Vec<NaiveDate>,
    pub windows: Vec<WindowRecord>,
    pub metrics: Vec<MetricRow>,
    /// `year → label → annualized Sharpe ratio` of net returns.
    pub yearly_sharpe: BTreeMap<i32, BTreeMap<String, f64>>,
}

impl BacktestReport {
    pub fn strategy_index(&self, label: &str) -> Option<usize> {
        self.strategies.iter().position(|s| s.label() == label)
    }

    pub fn gross_returns(&self, s: usize) -> Vec<f64> {
        self.windows.iter().flat_map(|w| w.strategies[s].gross.iter().copied()).collect()
    }

    pub fn net_returns(&self, s: usize) -> Vec<f64> {
        self.windows.iter().flat_map(|w| w.strategies[s].net.iter().copied()).collect()
    }

    /// True if strategy `s` failed to produce weights in some non-gap window.
    pub fn failed(&self, s: usize) -> bool {
        self.windows.iter().any(|w| w.strategies[s].error.is_some())
    }
}

fn cumulative(returns: &[f64]) -> Vec<f64> {
    let mut w = 1.0;
    returns
        .iter()
        .map(|r| {
            w *= 1.0 + r;
            w
        })
        .collect()
}

struct Estimated {
    t_end: usize,
    assets: Vec<usize>,
    r_out: DMatrix<f64>,
    weights: Vec<Result<Weights>>,
}

/// Rebalances every `dt_out` days, from the first test date until the last
/// complete test window.
pub fn run_backtest(panel: &ReturnPanel, cfg: &BacktestConfig) -> Result<BacktestReport> {
    cfg.validate()?;
    let strategies = cfg.resolved_strategies();
    let first = cfg.dt_in.max(cfg.start.map_or(0, |d| panel.date_index(d)));
    let stop = cfg
        .end
        .map_or(panel.n_dates(), |d| panel.dates().partition_point(|x| *x <= d));
    if stop < first + cfg.dt_out {
        return Err(Error::InsufficientData {
            required: first + cfg.dt_out,
            actual: stop,
        });
    }
    let n_windows = (stop - first) / cfg.dt_out;

    let estimated: Vec<Estimated> = (0..n_windows)
        .into_par_iter()
        .map(|h| {
            let t_end = first + h * cfg.dt_out;
            let w = WindowSpec::new(t_end, cfg.dt_in, cfg.dt_out);
            let assets = match universe_at(panel, &w) {
                Ok(a) => a,
                Err(Error::EmptyUniverse) => Vec::new(),
                Err(e) => return Err(e),
            };
            if assets.is_empty() {
                return Ok(Estimated {
                    t_end,
                    assets,
                    r_out: DMatrix::zeros(0, cfg.dt_out),
                    weights: Vec::new(),
                });
            }
            let (r_in, r_out) = slice(panel, &w, &assets)?;
            let weights = strategy_weights(&strategies, &r_in, cfg.long_only, cfg.seed, &[h as u64]);
            Ok(Estimated {
                t_end,
                assets,
                r_out,
                weights,
            })
        })
        .collect::<Result<_>>()?;

    let mut prev: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); strategies.len()];
    let mut windows = Vec::with_capacity(n_windows);
    for est in estimated {
        let gap = est.assets.is_empty();
        if gap {
            log::warn!("empty universe at {}; holding cash", panel.dates()[est.t_end]);
        }
        let mut records = Vec::with_capacity(strategies.len());
        for (s, slot) in prev.iter_mut().enumerate() {
            let (weights, error) = match est.weights.get(s) {
                Some(Ok(w)) => (Some(w.clone()), None),
                Some(Err(e)) => (None, Some(e.to_string())),
                None => (None, None),
            };
            let target = weights.as_ref().map_or_else(BTreeMap::new, |w| to_map(w, &est.assets));
            let cost = apply_costs(slot, &target, cfg.cost_bps);
            let gross = match &weights {
                Some(w) => portfolio_returns(w, &est.r_out),
                None => vec![0.0; cfg.dt_out],
            };
            let mut net = gross.clone();
            net[0] = gross[0] - cost * (1.0 + gross[0]);
            *slot = match &weights {
                Some(w) => drift_weights(w, &est.assets, &est.r_out),
                None => BTreeMap::new(),
            };
            records.push(StrategyWindow {
                weights,
                error,
                cost,
                gross,
                net,
            });
        }
        windows.push(WindowRecord {
            t_end: est.t_end,
            date: panel.dates()[est.t_end],
            assets: est.assets,
            gap,
            strategies: records,
        });
    }

    let dates: Vec<NaiveDate> = windows
        .iter()
        .flat_map(|w| panel.dates()[w.t_end..w.t_end + cfg.dt_out].iter().copied())
        .collect();
    let mut report = BacktestReport {
        dt_in: cfg.dt_in,
        strategies,
        asset_ids: panel.assets().to_vec(),
        dates,
        windows,
        metrics: Vec::new(),
        yearly_sharpe: BTreeMap::new(),
    };
    report.metrics = (0..report.strategies.len()).map(|s| metric_row(&report, s)).collect();
    report.yearly_sharpe = yearly_sharpe(&report);
    Ok(report)
}

fn mean_or_nan(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn metric_row(report: &BacktestReport, s: usize) -> MetricRow {
    let label = report.strategies[s].label();
    if report.failed(s) {
        return MetricRow {
            dt_in: report.dt_in,
            estimator: label,
            realized_vol: f64::NAN,
            sharpe: f64::NAN,
            n_eff: f64::NAN,
            n_90: f64::NAN,
            gross_leverage: f64::NAN,
            gamma: f64::NAN,
        };
    }
    let net = report.net_returns(s);
    let held: Vec<&Weights> = report
        .windows
        .iter()
        .filter_map(|w| w.strategies[s].weights.as_ref())
        .collect();
    let conc: Vec<(f64, usize)> = held.iter().map(|w| concentration(w)).collect();
    let snapshots: Vec<BTreeMap<usize, f64>> = report
        .windows
        .iter()
        .map(|w| {
            w.strategies[s]
                .weights
                .as_ref()
                .map_or_else(BTreeMap::new, |x| to_map(x, &w.assets))
        })
        .collect();
    MetricRow {
        dt_in: report.dt_in,
        estimator: label,
        realized_vol: realized_volatility(&net).unwrap_or(f64::NAN),
        sharpe: sharpe_ratio(&net).unwrap_or(f64::NAN),
        n_eff: mean_or_nan(&conc.iter().map(|c| c.0).collect::<Vec<_>>()),
        n_90: mean_or_nan(&conc.iter().map(|c| c.1 as f64).collect::<Vec<_>>()),
        gross_leverage: mean_or_nan(&held.iter().map(|w| gross_leverage(w)).collect::<Vec<_>>()),
        gamma: turnover_gamma(&snapshots).unwrap_or(f64::NAN),
    }
}

fn yearly_sharpe(report: &BacktestReport) -> BTreeMap<i32, BTreeMap<String, f64>> {
    let mut out: BTreeMap<i32, BTreeMap<String, f64>> = BTreeMap::new();
    for (s, strategy) in report.strategies.iter().enumerate() {
        let failed = report.failed(s);
        let net = report.net_returns(s);
        let mut by_year: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
        for (d, r) in report.dates.iter().zip(net) {
            by_year.entry(d.year()).or_default().push(r);
        }
        for (year, rs) in by_year {
            let sr = if failed {
                f64::NAN
            } else {
                sharpe_ratio(&rs).unwrap_or(f64::NAN)
            };
            out.entry(year).or_default().insert(strategy.label(), sr);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankRow {
    pub estimator: String,
    /// `None` for equal weights, which is ranked once.
    pub dt_in: Option<usize>,
    pub mean_rank: f64,
}

/// Average yearly dense rank of every (estimator, `dt_in`) combination
/// across `reports`. Equal weights enter once, from the first report.
pub fn rank_table(reports: &[BacktestReport]) -> Vec<RankRow> {
    let mut scores: BTreeMap<i32, BTreeMap<(String, Option<usize>), f64>> = BTreeMap::new();
    for (r, report) in reports.iter().enumerate() {
        for (year, row) in &report.yearly_sharpe {
            for (label, sr) in row {
                let key = if label == "EQ" {
                    if r > 0 {
                        continue;
                    }
                    (label.clone(), None)
                } else {
                    (label.clone(), Some(report.dt_in))
                };
                scores.entry(*year).or_default().insert(key, *sr);
            }
        }
    }
    let mut rows: Vec<RankRow> = yearly_dense_rank(&scores)
        .into_iter()
        .map(|((estimator, dt_in), mean_rank)| RankRow {
            estimator,
            dt_in,
            mean_rank,
        })
        .collect();
    rows.sort_by(|a, b| a.mean_rank.total_cmp(&b.mean_rank));
    rows
}

/// Finite values as shortest round-trip decimals, everything else as `NaN`.
pub fn fmt_value(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        "NaN".to_string()
    }
}

fn csv_writer<W: Write>(writer: W, header: &[&str]) -> Result<csv::Writer<W>> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header).map_err(csv_write_err)?;
    Ok(w)
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|e| Error::io("<report csv>", e))
}

/// Columns `dt_in,estimator,realized_vol,sr_moment,n_eff,n_90,gross_leverage,gamma`.
pub fn write_metrics_csv<W: Write>(writer: W, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv_writer(
        writer,
        &["dt_in", "estimator", "realized_vol", "sr_moment", "n_eff", "n_90", "gross_leverage", "gamma"],
    )?;
    for r in rows {
        w.write_record([
            r.dt_in.to_string(),
            r.estimator.clone(),
            fmt_value(r.realized_vol),
            fmt_value(r.sharpe),
            fmt_value(r.n_eff),
            fmt_value(r.n_90),
            fmt_value(r.gross_leverage),
            fmt_value(r.gamma),
        ])
        .map_err(csv_write_err)?;
    }
    finish(w)
}

/// Columns `estimator,dt_in,mean_rank`; `dt_in` is `-` for equal weights.
pub fn write_ranks_csv<W: Write>(writer: W, rows: &[RankRow]) -> Result<()> {
    let mut w = csv_writer(writer, &["estimator", "dt_in", "mean_rank"])?;
    for r in rows {
        let dt = r.dt_in.map_or_else(|| "-".to_string(), |d| d.to_string());
        w.write_record([r.estimator.clone(), dt, fmt_value(r.mean_rank)])
            .map_err(csv_write_err)?;
    }
    finish(w)
}

/// Columns `dt_in,date,estimator,wealth,gross_wealth`, starting from 1.
pub fn write_wealth_csv<W: Write>(writer: W, reports: &[BacktestReport]) -> Result<()> {
    let mut w = csv_writer(writer, &["dt_in", "date", "estimator", "wealth", "gross_wealth"])?;
    for report in reports {
        for (s, strategy) in report.strategies.iter().enumerate() {
            let label = strategy.label();
            let net = cumulative(&report.net_returns(s));
            let gross = cumulative(&report.gross_returns(s));
            for ((d, n), g) in report.dates.iter().zip(net).zip(gross) {
                w.write_record([
                    report.dt_in.to_string(),
                    d.to_string(),
                    label.clone(),
                    fmt_value(n),
                    fmt_value(g),
                ])
                .map_err(csv_write_err)?;
            }
        }
    }
    finish(w)
}

/// Columns `dt_in,date,estimator,asset,weight`, one row per held asset at
/// each rebalance.
pub fn write_rebalance_weights_csv<W: Write>(writer: W, reports: &[BacktestReport]) -> Result<()> {
    let mut w = csv_writer(writer, &["dt_in", "date", "estimator", "asset", "weight"])?;
    for report in reports {
        for window in &report.windows {
            for (s, strategy) in report.strategies.iter().enumerate() {
                let Some(weights) = &window.strategies[s].weights else {
                    continue;
                };
                for (&a, &x) in window.assets.iter().zip(&weights.values) {
                    w.write_record([
                        report.dt_in.to_string(),
                        window.date.to_string(),
                        strategy.label(),
                        report.asset_ids[a].clone(),
                        fmt_value(x),
                    ])
                    .map_err(csv_write_err)?;
                }
            }
        }
    }
    finish(w)
}

/// Columns `dt_in,year,estimator,sr_moment`.
pub fn write_yearly_sharpe_csv<W: Write>(writer: W, reports: &[BacktestReport]) -> Result<()> {
    let mut w = csv_writer(writer, &["dt_in", "year", "estimator", "sr_moment"])?;
    for report in reports {
        for (year, row) in &report.yearly_sharpe {
            for strategy in &report.strategies {
                let label = strategy.label();
                let sr = row.get(&label).copied().unwrap_or(f64::NAN);
                w.write_record([report.dt_in.to_string(), year.to_string(), label, fmt_value(sr)])
                    .map_err(csv_write_err)?;
            }
        }
    }
    finish(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dt_in_grid: Vec<usize>,
    pub dt_out: usize,
    pub reps: usize,
    /// Assets drawn per repetition.
    pub n_assets: usize,
    pub strategies: Vec<Strategy>,
    pub long_only: bool,
    pub seed: u64,
    /// Bounds on the random rebalance index `t`, inclusive.
    pub t_min: Option<usize>,
    pub t_max: Option<usize>,
    pub bootstrap_samples: usize,
}

impl ExperimentConfig {
    pub fn new(dt_in_grid: Vec<usize>, strategies: Vec<Strategy>) -> Self {
        Self {
            dt_in_grid,
            dt_out: DEFAULT_DT_OUT,
            reps: DEFAULT_REPS,
            n_assets: DEFAULT_SUBSET,
            strategies,
            long_only: false,
            seed: 0,
            t_min: None,
            t_max: None,
            bootstrap_samples: DEFAULT_BOOTSTRAP_SAMPLES,
        }
    }

    fn t_range(&self, panel: &ReturnPanel, dt_in: usize) -> Result<(usize, usize)> {
        let lo = dt_in.max(self.t_min.unwrap_or(0));
        let hi = panel
            .n_dates()
            .checked_sub(self.dt_out)
            .ok_or(Error::InsufficientData {
                required: self.dt_out,
                actual: panel.n_dates(),
            })?
            .min(self.t_max.unwrap_or(usize::MAX));
        if lo > hi {
            return Err(Error::InsufficientData {
                required: lo + self.dt_out,
                actual: panel.n_dates(),
            });
        }
        Ok((lo, hi))
    }

    pub fn validate(&self) -> Result<()> {
        if self.dt_in_grid.is_empty() || self.dt_in_grid.iter().any(|&d| d < 2) {
            return Err(Error::InvalidInput("dt_in grid must be non-empty with values >= 2".into()));
        }
        if self.dt_out < 2 {
            return Err(Error::InvalidInput("dt_out must be >= 2 to measure realized risk".into()));
        }
        if self.n_assets == 0 || self.strategies.is_empty() {
            return Err(Error::InvalidInput("need at least one asset and one strategy".into()));
        }
        for s in &self.strategies {
            if let Strategy::Gmv(spec) = s {
                spec.validate()?;
            }
        }
        Ok(())
    }
}

/// One repetition: realized annualized risk per strategy (NaN on failure).
#[derive(Debug, Clone, PartialEq)]
pub struct RepOutcome {
    pub dt_in: usize,
    pub rep: usize,
    /// `None` when no eligible draw was found.
    pub t_end: Option<usize>,
    pub risks: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskRow {
    pub dt_in: usize,
    pub estimator: String,
    /// Median over successful repetitions; NaN if there were none.
    pub median_risk: f64,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalKRow {
    pub dt_in: usize,
    pub mean_k: f64,
    /// Standard deviation of the mean over bootstrap resamples of repetitions.
    pub sd_k: f64,
    pub reps_used: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub strategies: Vec<Strategy>,
    pub reps: Vec<RepOutcome>,
    pub risk: Vec<RiskRow>,
    pub optimal_k: Vec<OptimalKRow>,
}

impl ExperimentReport {
    pub fn median_risk(&self, dt_in: usize, label: &str) -> Option<f64> {
        self.risk
            .iter()
            .find(|r| r.dt_in == dt_in && r.estimator == label)
            .map(|r| r.median_risk)
    }

    /// The k-BAHC order with the lowest median realized risk at `dt_in`.
    pub fn best_k_by_median(&self, dt_in: usize) -> Option<usize> {
        self.strategies
            .iter()
            .filter_map(|s| Some((s.order()?, self.median_risk(dt_in, &s.label())?)))
            .filter(|(_, r)| r.is_finite())
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(k, _)| k)
    }
}

fn run_rep(panel: &ReturnPanel, cfg: &ExperimentConfig, dt_in: usize, rep: usize) -> Result<RepOutcome> {
    let (lo, hi) = cfg.t_range(panel, dt_in)?;
    let path = [dt_in as u64, rep as u64];
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &path));
    for _ in 0..MAX_REDRAWS {
        let t_end = rng.random_range(lo..=hi);
        let w = WindowSpec::new(t_end, dt_in, cfg.dt_out);
        let universe = match universe_at(panel, &w) {
            Ok(u) => u,
            Err(Error::EmptyUniverse) => continue,
            Err(e) => return Err(e),
        };
        if universe.len() < cfg.n_assets {
            continue;
        }
        let mut picks = rand::seq::index::sample(&mut rng, universe.len(), cfg.n_assets).into_vec();
        picks.sort_unstable();
        let assets: Vec<usize> = picks.into_iter().map(|i| universe[i]).collect();
        let (r_in, r_out) = slice(panel, &w, &assets)?;
        let risks = strategy_weights(&cfg.strategies, &r_in, cfg.long_only, cfg.seed, &path)
            .into_iter()
            .map(|w| match w {
                Ok(w) => realized_volatility(&portfolio_returns(&w, &r_out)).unwrap_or(f64::NAN),
                Err(_) => f64::NAN,
            })
            .collect();
        return Ok(RepOutcome {
            dt_in,
            rep,
            t_end: Some(t_end),
            risks,
        });
    }
    log::warn!("dt_in {dt_in}, repetition {rep}: no date with {} eligible assets; skipped", cfg.n_assets);
    Ok(RepOutcome {
        dt_in,
        rep,
        t_end: None,
        risks: vec![f64::NAN; cfg.strategies.len()],
    })
}

/// Random calibration dates and random asset subsets: for each `dt_in` and
/// repetition, draw `t` uniformly, draw `n_assets` eligible assets, fit
/// every strategy on `[t − dt_in, t)` and measure the annualized volatility
/// of its portfolio over `[t, t + dt_out)`.
pub fn random_experiment(panel: &ReturnPanel, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    for &dt_in in &cfg.dt_in_grid {
        cfg.t_range(panel, dt_in)?;
    }
    let units: Vec<(usize, usize)> = cfg
        .dt_in_grid
        .iter()
        .flat_map(|&d| (0..cfg.reps).map(move |r| (d, r)))
        .collect();
    let reps: Vec<RepOutcome> = units
        .par_iter()
        .map(|&(d, r)| run_rep(panel, cfg, d, r))
        .collect::<Result<_>>()?;

    let mut risk = Vec::new();
    let mut optimal_k = Vec::new();
    for &dt_in in &cfg.dt_in_grid {
        let rows: Vec<&RepOutcome> = reps.iter().filter(|r| r.dt_in == dt_in).collect();
        for (s, strategy) in cfg.strategies.iter().enumerate() {
            let ok: Vec<f64> = rows.iter().map(|r| r.risks[s]).filter(|x| x.is_finite()).collect();
            risk.push(RiskRow {
                dt_in,
                estimator: strategy.label(),
                median_risk: if ok.is_empty() { f64::NAN } else { median(&ok) },
                successes: ok.len(),
                failures: rows.len() - ok.len(),
            });
        }
        if let Some(row) = optimal_k_row(cfg, dt_in, &rows) {
            optimal_k.push(row);
        }
    }
    Ok(ExperimentReport {
        strategies: cfg.strategies.clone(),
        reps,
        risk,
        optimal_k,
    })
}

fn optimal_k_row(cfg: &ExperimentConfig, dt_in: usize, rows: &[&RepOutcome]) -> Option<OptimalKRow> {
    let mut ks: Vec<(usize, usize)> = cfg
        .strategies
        .iter()
        .enumerate()
        .filter_map(|(s, st)| Some((st.order()?, s)))
        .collect();
    if ks.is_empty() {
        return None;
    }
    ks.sort_unstable();
    let best: Vec<f64> = rows
        .iter()
        .filter(|r| ks.iter().all(|&(_, s)| r.risks[s].is_finite()))
        .map(|r| {
            let mut arg = ks[0];
            for &(k, s) in &ks[1..] {
                if r.risks[s] < r.risks[arg.1] {
                    arg = (k, s);
                }
            }
            arg.0 as f64
        })
        .collect();
    if best.is_empty() {
        return Some(OptimalKRow {
            dt_in,
            mean_k: f64::NAN,
            sd_k: f64::NAN,
            reps_used: 0,
        });
    }
    let mean = best.iter().sum::<f64>() / best.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[u64::MAX, dt_in as u64]));
    let boots: Vec<f64> = (0..cfg.bootstrap_samples)
        .map(|_| (0..best.len()).map(|_| best[rng.random_range(0..best.len())]).sum::<f64>() / best.len() as f64)
        .collect();
    let sd = if boots.len() < 2 {
        f64::NAN
    } else {
        let m = boots.iter().sum::<f64>() / boots.len() as f64;
        (boots.iter().map(|b| (b - m) * (b - m)).sum::<f64>() / (boots.len() - 1) as f64).sqrt()
    };
    Some(OptimalKRow {
        dt_in,
        mean_k: mean,
        sd_k: sd,
        reps_used: best.len(),
    })
}

/// Columns `dt_in,estimator,median_risk,successes,failures`.
pub fn write_risk_csv<W: Write>(writer: W, rows: &[RiskRow]) -> Result<()> {
    let mut w = csv_writer(writer, &["dt_in", "estimator", "median_risk", "successes", "failures"])?;
    for r in rows {
        w.write_record([
            r.dt_in.to_string(),
            r.estimator.clone(),
            fmt_value(r.median_risk),
            r.successes.to_string(),
            r.failures.to_string(),
        ])
        .map_err(csv_write_err)?;
    }
    finish(w)
}

/// Columns `dt_in,mean_k,sd_k,reps_used`.
pub fn write_optimal_k_csv<W: Write>(writer: W, rows: &[OptimalKRow]) -> Result<()> {
    let mut w = csv_writer(writer, &["dt_in", "mean_k", "sd_k", "reps_used"])?;
    for r in rows {
        w.write_record([
            r.dt_in.to_string(),
            fmt_value(r.mean_k),
            fmt_value(r.sd_k),
            r.reps_used.to_string(),
        ])
        .map_err(csv_write_err)?;
    }
    finish(w)
}

/// Columns `dt_in,rep,t_end,<strategy labels...>`.
pub fn write_reps_csv<W: Write>(writer: W, report: &ExperimentReport) -> Result<()> {
    let mut header = vec!["dt_in".to_string(), "rep".to_string(), "t_end".to_string()];
    header.extend(report.strategies.iter().map(|s| s.label()));
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(&header).map_err(csv_write_err)?;
    for r in &report.reps {
        let mut rec = vec![
            r.dt_in.to_string(),
            r.rep.to_string(),
            r.t_end.map_or_else(String::new, |t| t.to_string()),
        ];
        rec.extend(r.risks.iter().map(|&x| fmt_value(x)));
        w.write_record(&rec).map_err(csv_write_err)?;
    }
    finish(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectraConfig {
    pub dt_in: usize,
    /// Number of calibration windows, spread evenly and ending at the last
    /// date.
    pub windows: usize,
    /// Random asset subset per window; all eligible assets when `None`.
    pub n_assets: Option<usize>,
    pub estimators: Vec<EstimatorSpec>,
    pub seed: u64,
}

impl SpectraConfig {
    pub fn new(dt_in: usize, estimators: Vec<EstimatorSpec>) -> Self {
        Self {
            dt_in,
            windows: 1,
            n_assets: None,
            estimators,
            seed: 0,
        }
    }

    fn window_ends(&self, n_dates: usize) -> Result<Vec<usize>> {
        if self.dt_in < 2 || self.windows == 0 {
            return Err(Error::InvalidInput("need dt_in >= 2 and at least one window".into()));
        }
        if n_dates < self.dt_in {
            return Err(Error::InsufficientData {
                required: self.dt_in,
                actual: n_dates,
            });
        }
        let span = n_dates - self.dt_in;
        if self.windows == 1 {
            return Ok(vec![n_dates]);
        }
        Ok((0..self.windows)
            .map(|h| self.dt_in + span * h / (self.windows - 1))
            .collect())
    }
}

/// One eigenpair of one estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumPoint {
    /// Index into [`SpectraReport::labels`].
    pub estimator: usize,
    pub window: usize,
    pub index: usize,
    pub lambda: f64,
    pub ipr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectraReport {
    /// Estimator labels, followed by `null`.
    pub labels: Vec<String>,
    pub points: Vec<SpectrumPoint>,
}

impl SpectraReport {
    /// Pooled IPR values of one estimator across windows.
    pub fn ipr_values(&self, label: &str) -> Vec<f64> {
        let Some(e) = self.labels.iter().position(|l| l == label) else {
            return Vec::new();
        };
        self.points.iter().filter(|p| p.estimator == e).map(|p| p.ipr).collect()
    }
}

fn spectrum(cov: &SymmetricMatrix) -> Result<Vec<(f64, f64)>> {
    let eig = eigendecompose(cov)?;
    let iprs = ipr(&eig)?;
    Ok(eig.values.iter().copied().zip(iprs).collect())
}

/// Eigenvalues and eigenvector IPRs of each estimate, and of the sample
/// covariance of asset-by-asset shuffled returns (`null`), over one or more
/// calibration windows.
pub fn spectra_experiment(panel: &ReturnPanel, cfg: &SpectraConfig) -> Result<SpectraReport> {
    for spec in &cfg.estimators {
        spec.validate()?;
    }
    let ends = cfg.window_ends(panel.n_dates())?;
    let mut labels: Vec<String> = cfg.estimators.iter().map(|e| e.label()).collect();
    labels.push("null".to_string());

    let per_window: Vec<Vec<SpectrumPoint>> = ends
        .par_iter()
        .enumerate()
        .map(|(h, &t_end)| -> Result<Vec<SpectrumPoint>> {
            let from = t_end - cfg.dt_in;
            let mut assets = panel.available_assets(from, t_end);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[h as u64]));
            if let Some(n) = cfg.n_assets {
                if assets.len() < n {
                    log::warn!("window ending {}: only {} eligible assets; skipped", t_end, assets.len());
                    return Ok(Vec::new());
                }
                let mut picks = rand::seq::index::sample(&mut rng, assets.len(), n).into_vec();
                picks.sort_unstable();
                assets = picks.into_iter().map(|i| assets[i]).collect();
            }
            if assets.len() < 2 {
                return Err(Error::EmptyUniverse);
            }
            let r = crate::data_io::dense_block(panel, &assets, from..t_end)?;
            let specs: Vec<EstimatorSpec> = cfg
                .estimators
                .iter()
                .map(|s| match s {
                    EstimatorSpec::KBahc { seed, .. } => s.with_seed(derive_seed(cfg.seed, &[*seed, h as u64])),
                    other => *other,
                })
                .collect();
            let mut covs = estimate_all(&specs, &r)
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            covs.push(sample_covariance(&shuffled_null_panel(&r, rng.random()))?);
            let mut points = Vec::new();
            for (e, cov) in covs.iter().enumerate() {
                for (index, (lambda, ipr)) in spectrum(cov)?.into_iter().enumerate() {
                    points.push(SpectrumPoint {
                        estimator: e,
                        window: h,
                        index,
                        lambda,
                        ipr,
                    });
                }
            }
            Ok(points)
        })
        .collect::<Result<_>>()?;
    Ok(SpectraReport {
        labels,
        points: per_window.into_iter().flatten().collect(),
    })
}

/// Columns `estimator,window,index,lambda,ipr`.
pub fn write_spectra_csv<W: Write>(writer: W, report: &SpectraReport) -> Result<()> {
    let mut w = csv_writer(writer, &["estimator", "window", "index", "lambda", "ipr"])?;
    for p in &report.points {
        w.write_record([
            report.labels[p.estimator].clone(),
            p.window.to_string(),
            p.index.to_string(),
            fmt_value(p.lambda),
            fmt_value(p.ipr),
        ])
        .map_err(csv_write_err)?;
    }
    finish(w)
}

/// Empirical CDFs of the pooled IPR values on a grid of `points` values
/// spanning `[1, max IPR]`. Columns `ipr,<labels...>`.
pub fn write_ipr_cdf_csv<W: Write>(writer: W, report: &SpectraReport, points: usize) -> Result<()> {
    let mut header = vec!["ipr".to_string()];
    header.extend(report.labels.iter().cloned());
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(&header).map_err(csv_write_err)?;
    let samples: Vec<Vec<f64>> = report.labels.iter().map(|l| report.ipr_values(l)).collect();
    let top = report.points.iter().map(|p| p.ipr).fold(1.0, f64::max);
    let steps = points.max(2) - 1;
    for g in 0..=steps {
        let x = 1.0 + (top - 1.0) * g as f64 / steps as f64;
        let mut rec = vec![fmt_value(x)];
        rec.extend(samples.iter().map(|s| {
            if s.is_empty() {
                fmt_value(f64::NAN)
            } else {
                fmt_value(crate::metrics::ecdf(s, x))
            }
        }));
        w.write_record(&rec).map_err(csv_write_err)?;
    }
    finish(w)
}
