use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::NaiveDate;
use kbahc::data_io::save_panel;
use kbahc::hclust::k_hcal;
use kbahc::kbahc::{bootstrap_columns, kbahc_covariance};
use kbahc::matrix::{load_matrix_csv, sample_covariance, to_correlation, to_covariance};
use kbahc::synth::{sample_returns, synthetic_panel, vol_profile};
use kbahc::{BootstrapPlan, MatrixRole, SymmetricMatrix};
use nalgebra::DMatrix;
use tempfile::TempDir;

fn kbahc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kbahc"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = kbahc(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn one_factor_returns(n: usize, t: usize, seed: u64) -> DMatrix<f64> {
    let truth = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.4 });
    let truth = SymmetricMatrix::from_upper(truth, MatrixRole::Correlation).unwrap();
    sample_returns(&truth, t, &vol_profile(n, 0.01, 0.02), seed).unwrap()
}

fn write_panel(dir: &Path, r: DMatrix<f64>) -> PathBuf {
    let path = dir.join("panel.csv");
    let panel = synthetic_panel(r, NaiveDate::from_ymd_opt(2016, 1, 4).unwrap()).unwrap();
    save_panel(&path, &panel).unwrap();
    path
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

/// Echoed config without the output directory line.
fn config_sans_out(dir: &Path) -> String {
    read(&dir.join("config.toml"))
        .lines()
        .filter(|l| !l.starts_with("out = "))
        .collect::<Vec<_>>()
        .join("\n")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn clean_sample_matches_hand_values() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("r.csv");
    std::fs::write(&input, "date,A,B\n2020-01-02,1,2\n2020-01-03,2,4\n2020-01-06,3,6\n").unwrap();
    let out = dir.path().join("out");
    ok(&["clean", "--input", s(&input), "--estimators", "sample", "--out", s(&out)]);
    let (labels, m) = load_matrix_csv(&out.join("matrix.csv"), MatrixRole::Covariance).unwrap();
    assert_eq!(labels, ["A", "B"]);
    let expected = [[2.0 / 3.0, 4.0 / 3.0], [4.0 / 3.0, 8.0 / 3.0]];
    for i in 0..2 {
        for j in 0..2 {
            assert!((m.get(i, j) - expected[i][j]).abs() < 1e-15);
        }
    }
    assert!(read(&out.join("config.toml")).contains("estimators = [\"sample\"]"));
}

#[test]
fn clean_single_replica_is_filtered_replica_correlation() {
    let dir = TempDir::new().unwrap();
    let r = one_factor_returns(6, 40, 1);
    let input = write_panel(dir.path(), r.clone());
    let out = dir.path().join("out");
    ok(&["clean", "--input", s(&input), "--estimators", "kbahc:1", "--m", "1", "--seed", "7", "--out", s(&out)]);
    let (_, m) = load_matrix_csv(&out.join("matrix.csv"), MatrixRole::Covariance).unwrap();

    let plan = BootstrapPlan::new(1, 7);
    let replica = bootstrap_columns(&r, 0, &plan).unwrap();
    let filtered = k_hcal(&to_correlation(&sample_covariance(&replica).unwrap()).unwrap(), 1).unwrap();
    let by_hand = to_covariance(&filtered.matrix, &sample_covariance(&r).unwrap().diagonal()).unwrap();
    let library = kbahc_covariance(&r, 1, &plan).unwrap();
    for i in 0..6 {
        for j in 0..6 {
            assert_eq!(m.get(i, j), library.get(i, j));
            assert!((m.get(i, j) - by_hand.get(i, j)).abs() < 1e-15);
        }
    }
}

#[test]
fn exit_codes_separate_failure_kinds() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let missing = dir.path().join("nope.csv");
    let res = kbahc(&["clean", "--input", s(&missing), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("nope.csv"));

    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "seeds = 3\n").unwrap();
    assert_eq!(kbahc(&["clean", "--config", s(&config)]).status.code(), Some(2));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "date,A\n2020-01-02,x\n").unwrap();
    assert_eq!(kbahc(&["clean", "--input", s(&bad), "--out", s(&out)]).status.code(), Some(3));

    let flat = dir.path().join("flat.csv");
    std::fs::write(&flat, "date,A,B\n2020-01-02,1,1\n2020-01-03,1,2\n2020-01-06,1,4\n").unwrap();
    assert_eq!(kbahc(&["clean", "--input", s(&flat), "--out", s(&out)]).status.code(), Some(4));
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = TempDir::new().unwrap();
    let input = write_panel(dir.path(), one_factor_returns(5, 60, 2));
    let out = dir.path().join("out");
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        format!("input = {:?}\nestimators = [\"cv\"]\nseed = 1\ndt_in = [30]\n", s(&input)),
    )
    .unwrap();
    ok(&["clean", "--config", s(&config), "--seed", "9", "--out", s(&out)]);
    let echoed = read(&out.join("config.toml"));
    assert!(echoed.contains("seed = 9"), "{echoed}");
    assert!(echoed.contains("dt_in = [30]"), "{echoed}");

    // The echoed config reproduces the run.
    let again = dir.path().join("again");
    std::fs::copy(out.join("config.toml"), dir.path().join("echo.toml")).unwrap();
    ok(&["clean", "--config", s(&dir.path().join("echo.toml")), "--out", s(&again)]);
    assert_eq!(read(&out.join("matrix.csv")), read(&again.join("matrix.csv")));
}

const BACKTEST_FILES: [&str; 5] = [
    "metrics.csv",
    "ranks.csv",
    "wealth.csv",
    "weights.csv",
    "yearly_sharpe.csv",
];

#[test]
fn backtest_zero_cost_and_reruns() {
    let dir = TempDir::new().unwrap();
    let input = write_panel(dir.path(), one_factor_returns(8, 300, 3));
    let args = |out: &Path| -> Vec<String> {
        [
            "backtest", "--input", s(&input), "--dt-in", "60,120", "--k", "1,2", "--m", "10",
            "--estimators", "sample,cv,kbahc", "--cost-bps", "0", "--out", s(out),
        ]
        .iter()
        .map(|a| a.to_string())
        .collect()
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&args(&a).iter().map(String::as_str).collect::<Vec<_>>());
    ok(&args(&b).iter().map(String::as_str).collect::<Vec<_>>());
    for f in BACKTEST_FILES {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(config_sans_out(&a), config_sans_out(&b));

    let wealth = read(&a.join("wealth.csv"));
    let mut lines = wealth.lines();
    assert_eq!(lines.next().unwrap(), "dt_in,date,estimator,wealth,gross_wealth");
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[3], cells[4], "{line}");
    }

    // EQ, Sample, CV and two k-BAHC rows for each calibration length.
    let metrics = read(&a.join("metrics.csv"));
    for dt_in in ["60", "120"] {
        let rows: Vec<&str> = metrics.lines().filter(|l| l.starts_with(&format!("{dt_in},"))).collect();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows.iter().filter(|l| l.contains("-BAHC")).count(), 2);
    }
}

#[test]
fn experiment_outputs() {
    let dir = TempDir::new().unwrap();
    let input = write_panel(dir.path(), one_factor_returns(30, 300, 4));
    let run = |out: &Path| {
        ok(&[
            "experiment", "--input", s(&input), "--dt-in", "40,80", "--k", "1,2", "--m", "10",
            "--estimators", "eq,sample,kbahc", "--reps", "1", "--n-assets", "10", "--seed", "5", "--out", s(out),
        ])
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run(&a);
    run(&b);
    for f in ["realized_risk.csv", "optimal_k.csv", "reps.csv"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
    let risk = read(&a.join("realized_risk.csv"));
    for est in ["EQ", "Sample", "1-BAHC", "2-BAHC"] {
        assert_eq!(risk.lines().filter(|l| l.split(',').any(|c| c == est)).count(), 2, "{est}");
    }
}

#[test]
fn spectra_outputs() {
    let dir = TempDir::new().unwrap();
    let input = write_panel(dir.path(), one_factor_returns(10, 120, 5));
    let out = dir.path().join("out");
    ok(&["spectra", "--input", s(&input), "--dt-in", "60", "--k", "1,3", "--m", "10", "--out", s(&out)]);
    let cdf = read(&out.join("ipr_cdf.csv"));
    assert_eq!(cdf.lines().next().unwrap(), "ipr,Sample,1-BAHC,3-BAHC,null");
    let spectra = read(&out.join("spectra.csv"));
    assert_eq!(spectra.lines().filter(|l| l.starts_with("null,")).count(), 10);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = TempDir::new().unwrap();
    let input = write_panel(dir.path(), one_factor_returns(8, 200, 6));
    let run = |threads: &str| {
        let out = dir.path().join(format!("t{threads}"));
        ok(&[
            "backtest", "--input", s(&input), "--dt-in", "50", "--k", "1,3", "--m", "20", "--seed", "3",
            "--threads", threads, "--out", s(&out),
        ]);
        out
    };
    let a = run("1");
    let b = run("4");
    for f in BACKTEST_FILES {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(config_sans_out(&a), config_sans_out(&b));
}
