//! Subcommand drivers. Each one loads the panel, runs the computation and
//! writes its CSV outputs plus `config.toml` into the output directory.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use kbahc::backtest::{
    random_experiment, rank_table, run_backtest, spectra_experiment, write_ipr_cdf_csv, write_metrics_csv,
    write_optimal_k_csv, write_ranks_csv, write_rebalance_weights_csv, write_reps_csv, write_risk_csv,
    write_spectra_csv, write_wealth_csv, write_yearly_sharpe_csv, BacktestConfig, ExperimentConfig, SpectraConfig,
};
use kbahc::data_io::{dense_block, load_panel};
use kbahc::matrix::write_matrix_csv;
use kbahc::{Error, ReturnPanel};
use log::info;

use crate::config::{Command, RunConfig};
use crate::error::CliError;

/// Grid resolution of the IPR CDF table.
const IPR_CDF_POINTS: usize = 200;

/// Runs `command` with a resolved configuration and returns the paths
/// written, `config.toml` first.
pub fn run(command: Command, cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let out = cfg.out.clone().expect("resolved config has an output directory");
    let input = cfg.input.clone().expect("resolved config has an input");
    let panel = load_panel(&input, cfg.input_kind()?)?;
    info!(
        "loaded {} assets x {} dates from {}",
        panel.n_assets(),
        panel.n_dates(),
        input.display()
    );
    std::fs::create_dir_all(&out).map_err(|source| Error::Io {
        path: out.clone(),
        source,
    })?;
    let config_path = out.join("config.toml");
    std::fs::write(&config_path, cfg.to_toml()).map_err(|source| Error::Io {
        path: config_path.clone(),
        source,
    })?;
    let mut written = vec![config_path];
    match command {
        Command::Clean => clean(&panel, cfg, &out, &mut written)?,
        Command::Backtest => backtest(&panel, cfg, &out, &mut written)?,
        Command::Experiment => experiment(&panel, cfg, &out, &mut written)?,
        Command::Spectra => spectra(&panel, cfg, &out, &mut written)?,
    }
    Ok(written)
}

fn create(dir: &Path, name: &str, written: &mut Vec<PathBuf>) -> Result<BufWriter<File>, CliError> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    written.push(path);
    Ok(BufWriter::new(file))
}

fn config_error(e: Error) -> CliError {
    CliError::Config(e.to_string())
}

fn clean(panel: &ReturnPanel, cfg: &RunConfig, out: &Path, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let specs = cfg.estimator_specs(false)?;
    let [spec] = specs.as_slice() else {
        return Err(CliError::Config(format!(
            "clean takes exactly one estimator, got {}",
            specs.len()
        )));
    };
    let panel = panel.between(cfg.start, cfg.end)?;
    let n_dates = panel.n_dates();
    let dt_in = cfg.dt_in.as_ref().and_then(|d| d.first().copied()).unwrap_or(n_dates);
    if dt_in > n_dates {
        return Err(Error::InsufficientData {
            required: dt_in,
            actual: n_dates,
        }
        .into());
    }
    let from = n_dates - dt_in;
    let assets = panel.available_assets(from, n_dates);
    if assets.is_empty() {
        return Err(Error::EmptyUniverse.into());
    }
    let r = dense_block(&panel, &assets, from..n_dates)?;
    let matrix = spec.estimate(&r)?;
    let labels: Vec<String> = assets.iter().map(|&i| panel.assets()[i].clone()).collect();
    info!("{spec} on {} assets x {dt_in} dates", assets.len());
    write_matrix_csv(create(out, "matrix.csv", written)?, &labels, &matrix)?;
    Ok(())
}

fn backtest(panel: &ReturnPanel, cfg: &RunConfig, out: &Path, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let strategies = cfg.strategies(true)?;
    let mut reports = Vec::new();
    for &dt_in in cfg.dt_in.iter().flatten() {
        let bc = BacktestConfig {
            dt_out: cfg.dt_out.expect("resolved"),
            cost_bps: cfg.cost_bps.expect("resolved"),
            long_only: cfg.long_only.expect("resolved"),
            start: cfg.start,
            end: cfg.end,
            seed: cfg.seed.expect("resolved"),
            ..BacktestConfig::new(dt_in, strategies.clone())
        };
        bc.validate().map_err(config_error)?;
        let report = run_backtest(panel, &bc)?;
        info!("dt_in = {dt_in}: {} rebalances", report.windows.len());
        reports.push(report);
    }
    let metrics: Vec<_> = reports.iter().flat_map(|r| r.metrics.iter().cloned()).collect();
    write_metrics_csv(create(out, "metrics.csv", written)?, &metrics)?;
    write_ranks_csv(create(out, "ranks.csv", written)?, &rank_table(&reports))?;
    write_wealth_csv(create(out, "wealth.csv", written)?, &reports)?;
    write_rebalance_weights_csv(create(out, "weights.csv", written)?, &reports)?;
    write_yearly_sharpe_csv(create(out, "yearly_sharpe.csv", written)?, &reports)?;
    Ok(())
}

fn experiment(panel: &ReturnPanel, cfg: &RunConfig, out: &Path, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let panel = panel.between(cfg.start, cfg.end)?;
    let ec = ExperimentConfig {
        dt_out: cfg.dt_out.expect("resolved"),
        reps: cfg.reps.expect("resolved"),
        n_assets: cfg.n_assets.expect("resolved"),
        long_only: cfg.long_only.expect("resolved"),
        seed: cfg.seed.expect("resolved"),
        t_min: cfg.t_min,
        t_max: cfg.t_max,
        bootstrap_samples: cfg.bootstrap_samples.expect("resolved"),
        ..ExperimentConfig::new(cfg.dt_in.clone().expect("resolved"), cfg.strategies(true)?)
    };
    ec.validate().map_err(config_error)?;
    let report = random_experiment(&panel, &ec)?;
    write_risk_csv(create(out, "realized_risk.csv", written)?, &report.risk)?;
    write_optimal_k_csv(create(out, "optimal_k.csv", written)?, &report.optimal_k)?;
    write_reps_csv(create(out, "reps.csv", written)?, &report)?;
    Ok(())
}

fn spectra(panel: &ReturnPanel, cfg: &RunConfig, out: &Path, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let panel = panel.between(cfg.start, cfg.end)?;
    let sc = SpectraConfig {
        windows: cfg.windows.expect("resolved"),
        n_assets: cfg.n_assets,
        seed: cfg.seed.expect("resolved"),
        ..SpectraConfig::new(cfg.dt_in.as_ref().expect("resolved")[0], cfg.estimator_specs(false)?)
    };
    let report = spectra_experiment(&panel, &sc)?;
    write_spectra_csv(create(out, "spectra.csv", written)?, &report)?;
    write_ipr_cdf_csv(create(out, "ipr_cdf.csv", written)?, &report, IPR_CDF_POINTS)?;
    Ok(())
}
