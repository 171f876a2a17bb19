//! Covariance cleaning by bootstrapped hierarchical filtering, with
//! baseline estimators, minimum-variance portfolios and backtests.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backtest;
pub mod baselines;
pub mod data_io;
pub mod error;
pub mod estimator;
pub mod hclust;
pub mod kbahc;
pub mod matrix;
pub mod metrics;
pub mod portfolio;
pub mod seed;
pub mod synth;

pub use backtest::{BacktestConfig, BacktestReport, MetricRow, Strategy};
pub use data_io::{InputKind, ReturnPanel, WindowSpec};
pub use error::{Error, Result};
pub use estimator::EstimatorSpec;
pub use hclust::{Dendrogram, FilteredCorrelation, Merge};
pub use kbahc::BootstrapPlan;
pub use matrix::{EigenSystem, MatrixRole, SymmetricMatrix};
pub use portfolio::Weights;
