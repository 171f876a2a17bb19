//! Flat run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use kbahc::backtest::{DEFAULT_COST_BPS, DEFAULT_DT_OUT, DEFAULT_K_GRID, DEFAULT_REPS, DEFAULT_SUBSET};
use kbahc::kbahc::DEFAULT_REPLICAS;
use kbahc::{EstimatorSpec, InputKind, Strategy};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Every key may come from the config file or a flag; flags win. After
/// [`RunConfig::resolve`] all keys relevant to the command are filled in,
/// and the serialized form reproduces the run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimators: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_in: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_out: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_bps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub long_only: Option<bool>,
    /// Never echoed: results do not depend on it.
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<NaiveDate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub end: Option<NaiveDate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_assets: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_min: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub windows: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Clean,
    Backtest,
    Experiment,
    Spectra,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Keys set in `flags` replace those in `self`.
    pub fn merge(mut self, flags: RunConfig) -> Self {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if flags.$field.is_some() { self.$field = flags.$field; })*
            };
        }
        take!(
            input, input_kind, out, estimators, k, m, seed, dt_in, dt_out, cost_bps, long_only, threads, start,
            end, reps, n_assets, t_min, t_max, bootstrap_samples, windows
        );
        self
    }

    /// Fills defaults for `command` and checks that required keys are set.
    pub fn resolve(mut self, command: Command) -> Result<Self, CliError> {
        if self.input.is_none() {
            return Err(CliError::Config("no input panel given (--input or `input`)".into()));
        }
        if self.out.is_none() {
            return Err(CliError::Config("no output directory given (--out or `out`)".into()));
        }
        self.input_kind.get_or_insert_with(|| "returns".into());
        self.input_kind()?;
        self.seed.get_or_insert(0);
        self.m.get_or_insert(DEFAULT_REPLICAS);
        let (estimators, k): (&[&str], &[usize]) = match command {
            Command::Clean => (&["kbahc"], &[1]),
            Command::Spectra => (&["sample", "kbahc"], &[1]),
            Command::Backtest | Command::Experiment => (&["sample", "cv", "kbahc"], &DEFAULT_K_GRID),
        };
        self.estimators
            .get_or_insert_with(|| estimators.iter().map(|s| s.to_string()).collect());
        self.k.get_or_insert_with(|| k.to_vec());
        match command {
            Command::Clean => {}
            Command::Backtest => {
                self.dt_in.get_or_insert_with(|| vec![250]);
                self.dt_out.get_or_insert(DEFAULT_DT_OUT);
                self.cost_bps.get_or_insert(DEFAULT_COST_BPS);
                self.long_only.get_or_insert(false);
            }
            Command::Experiment => {
                self.dt_in.get_or_insert_with(|| vec![60, 250, 500]);
                self.dt_out.get_or_insert(DEFAULT_DT_OUT);
                self.long_only.get_or_insert(false);
                self.reps.get_or_insert(DEFAULT_REPS);
                self.n_assets.get_or_insert(DEFAULT_SUBSET);
                self.bootstrap_samples
                    .get_or_insert(kbahc::backtest::DEFAULT_BOOTSTRAP_SAMPLES);
            }
            Command::Spectra => {
                self.dt_in.get_or_insert_with(|| vec![250]);
                self.windows.get_or_insert(1);
            }
        }
        if matches!(command, Command::Clean | Command::Spectra) && self.dt_in.as_ref().is_some_and(|d| d.len() > 1) {
            return Err(CliError::Config("this command takes a single dt_in".into()));
        }
        self.estimator_specs(command != Command::Clean && command != Command::Spectra)?;
        Ok(self)
    }

    pub fn input_kind(&self) -> Result<InputKind, CliError> {
        match self.input_kind.as_deref().unwrap_or("returns") {
            "returns" => Ok(InputKind::Returns),
            "prices" => Ok(InputKind::Prices),
            other => Err(CliError::Config(format!("input_kind must be prices or returns, got {other:?}"))),
        }
    }

    /// Expands the estimator list. A bare `kbahc` yields one spec per order
    /// in `k`; `kbahc:K` takes `m` and `seed` from the config. `eq` is only
    /// accepted where strategies are expected.
    pub fn strategies(&self, allow_eq: bool) -> Result<Vec<Strategy>, CliError> {
        let m = self.m.unwrap_or(DEFAULT_REPLICAS);
        let seed = self.seed.unwrap_or(0);
        let mut out = Vec::new();
        let mut push = |s: Strategy| {
            if !out.contains(&s) {
                out.push(s);
            }
        };
        for name in self.estimators.iter().flatten() {
            let lower = name.trim().to_ascii_lowercase();
            let parts: Vec<&str> = lower.split(':').collect();
            match parts.as_slice() {
                ["eq"] if allow_eq => push(Strategy::Equal),
                ["kbahc"] => {
                    for &k in self.k.iter().flatten() {
                        push(Strategy::Gmv(checked(EstimatorSpec::KBahc { k, m, seed })?));
                    }
                }
                ["kbahc", k] => {
                    let k = k
                        .parse()
                        .map_err(|_| CliError::Config(format!("bad k-BAHC order in {name:?}")))?;
                    push(Strategy::Gmv(checked(EstimatorSpec::KBahc { k, m, seed })?));
                }
                _ => {
                    let spec: EstimatorSpec = name.parse().map_err(|e| CliError::Config(format!("{e}")))?;
                    push(Strategy::Gmv(spec));
                }
            }
        }
        if out.is_empty() {
            return Err(CliError::Config("empty estimator list".into()));
        }
        Ok(out)
    }

    pub fn estimator_specs(&self, allow_eq: bool) -> Result<Vec<EstimatorSpec>, CliError> {
        Ok(self
            .strategies(allow_eq)?
            .into_iter()
            .filter_map(|s| match s {
                Strategy::Gmv(spec) => Some(spec),
                Strategy::Equal => None,
            })
            .collect())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }
}

fn checked(spec: EstimatorSpec) -> Result<EstimatorSpec, CliError> {
    spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(spec)
}
