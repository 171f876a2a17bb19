//! Return panels: CSV ingestion, windows and universe selection.
//!
//! Input files are wide CSV: a header row `date,<asset ids...>`, then one row
//! per ISO-8601 date. Empty cells are missing observations. Price files are
//! turned into close-to-close simple returns `p_t / p_{t-1} − 1`.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matrix::csv_write_err;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Prices,
    Returns,
}

impl std::str::FromStr for InputKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prices" => Ok(InputKind::Prices),
            "returns" => Ok(InputKind::Returns),
            other => Err(Error::InvalidInput(format!(
                "unknown input kind {other:?} (expected prices or returns)"
            ))),
        }
    }
}

/// Dated `n_assets × n_dates` panel of daily returns.
///
/// Unavailable entries hold NaN in `values` and `false` in `available`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    dates: Vec<NaiveDate>,
    assets: Vec<String>,
    values: DMatrix<f64>,
    available: DMatrix<bool>,
}

impl ReturnPanel {
    /// Builds a panel from its parts, checking every invariant.
    pub fn new(
        dates: Vec<NaiveDate>,
        assets: Vec<String>,
        mut values: DMatrix<f64>,
        available: DMatrix<bool>,
    ) -> Result<Self> {
        if values.shape() != (assets.len(), dates.len()) {
            return Err(Error::InvalidInput(format!(
                "values are {:?}, expected {} assets × {} dates",
                values.shape(),
                assets.len(),
                dates.len()
            )));
        }
        if available.shape() != values.shape() {
            return Err(Error::InvalidInput("availability mask shape differs from values".into()));
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(format!(
                "dates must be strictly increasing: {} then {}",
                w[0], w[1]
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = assets.iter().find(|a| !seen.insert(a.as_str())) {
            return Err(Error::InvalidInput(format!("duplicate asset id {dup:?}")));
        }
        for ((v, &ok), idx) in values.iter_mut().zip(available.iter()).zip(0..) {
            if ok && !v.is_finite() {
                let (asset, date) = (idx % assets.len(), idx / assets.len());
                return Err(Error::InvalidInput(format!(
                    "non-finite value for asset {} on {}",
                    assets[asset], dates[date]
                )));
            }
            if !ok {
                *v = f64::NAN;
            }
        }
        Ok(Self {
            dates,
            assets,
            values,
            available,
        })
    }

    /// Panel with every entry available.
    pub fn from_dense(dates: Vec<NaiveDate>, assets: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        let available = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Self::new(dates, assets, values, available)
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn available(&self) -> &DMatrix<bool> {
        &self.available
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn is_available(&self, asset: usize, date: usize) -> bool {
        self.available[(asset, date)]
    }

    /// Index of the first date `>= date`.
    pub fn date_index(&self, date: NaiveDate) -> usize {
        self.dates.partition_point(|d| *d < date)
    }

    /// Sub-panel restricted to dates in `[from, to]`.
    pub fn between(&self, from: Option<NaiveDate>, to: Option<NaiveDate>) -> Result<Self> {
        let start = from.map_or(0, |d| self.date_index(d));
        let end = to.map_or(self.n_dates(), |d| self.dates.partition_point(|x| *x <= d));
        if start >= end {
            return Err(Error::InvalidInput("date range selects no observations".into()));
        }
        let len = end - start;
        Ok(Self {
            dates: self.dates[start..end].to_vec(),
            assets: self.assets.clone(),
            values: self.values.columns(start, len).into_owned(),
            available: self.available.columns(start, len).into_owned(),
        })
    }

    /// Assets fully available on every date in `[from, to)`.
    pub fn available_assets(&self, from: usize, to: usize) -> Vec<usize> {
        (0..self.n_assets())
            .filter(|&i| (from..to).all(|j| self.available[(i, j)]))
            .collect()
    }
}

/// Calibration window `[t_end − dt_in, t_end)` followed by the test window
/// `[t_end, t_end + dt_out)`, in date indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub t_end: usize,
    pub dt_in: usize,
    pub dt_out: usize,
}

impl WindowSpec {
    pub fn new(t_end: usize, dt_in: usize, dt_out: usize) -> Self {
        Self { t_end, dt_in, dt_out }
    }

    pub fn validate(&self, panel: &ReturnPanel) -> Result<()> {
        if self.dt_in < 2 {
            return Err(Error::InvalidInput(format!("dt_in must be >= 2, got {}", self.dt_in)));
        }
        if self.dt_out < 1 {
            return Err(Error::InvalidInput("dt_out must be >= 1".into()));
        }
        if self.t_end < self.dt_in || self.t_end + self.dt_out > panel.n_dates() {
            return Err(Error::InvalidInput(format!(
                "window [{}, {}) does not fit in a panel of {} dates",
                self.t_end as i64 - self.dt_in as i64,
                self.t_end + self.dt_out,
                panel.n_dates()
            )));
        }
        Ok(())
    }

    pub fn in_sample(&self) -> std::ops::Range<usize> {
        self.t_end - self.dt_in..self.t_end
    }

    pub fn out_sample(&self) -> std::ops::Range<usize> {
        self.t_end..self.t_end + self.dt_out
    }
}

/// Assets with complete data over both the calibration and the test window.
pub fn universe_at(panel: &ReturnPanel, w: &WindowSpec) -> Result<Vec<usize>> {
    w.validate(panel)?;
    let assets = panel.available_assets(w.t_end - w.dt_in, w.t_end + w.dt_out);
    if assets.is_empty() {
        return Err(Error::EmptyUniverse);
    }
    Ok(assets)
}

/// Dense block of `values` for `assets` over date range `dates`.
pub fn dense_block(panel: &ReturnPanel, assets: &[usize], dates: std::ops::Range<usize>) -> Result<DMatrix<f64>> {
    for &a in assets {
        if a >= panel.n_assets() {
            return Err(Error::InvalidInput(format!("asset index {a} out of range")));
        }
        if let Some(d) = dates.clone().find(|&d| !panel.available[(a, d)]) {
            return Err(Error::MissingObservation { asset: a, date: d });
        }
    }
    let start = dates.start;
    Ok(DMatrix::from_fn(assets.len(), dates.len(), |i, j| {
        panel.values[(assets[i], start + j)]
    }))
}

/// `(in_sample, out_sample)` matrices for `assets`, in the given order.
pub fn slice(panel: &ReturnPanel, w: &WindowSpec, assets: &[usize]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    w.validate(panel)?;
    Ok((
        dense_block(panel, assets, w.in_sample())?,
        dense_block(panel, assets, w.out_sample())?,
    ))
}

fn parse_date(s: &str, row: usize) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| Error::Parse {
        row,
        column: 1,
        message: format!("invalid ISO-8601 date {s:?}: {e}"),
    })
}

/// Reads a wide CSV panel.
pub fn read_panel<R: Read>(reader: R, kind: InputKind) -> Result<ReturnPanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| crate::matrix::csv_read_err(e, 1))?
        .clone();
    if header.len() < 2 {
        return Err(Error::Parse {
            row: 1,
            column: 1,
            message: "header must contain a date column and at least one asset".into(),
        });
    }
    let assets: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut seen = HashSet::new();
    for (j, a) in assets.iter().enumerate() {
        if a.is_empty() {
            return Err(Error::Parse {
                row: 1,
                column: j + 2,
                message: "empty asset id".into(),
            });
        }
        if !seen.insert(a.as_str()) {
            return Err(Error::Parse {
                row: 1,
                column: j + 2,
                message: format!("duplicate asset id {a:?}"),
            });
        }
    }

    let n = assets.len();
    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut cells: Vec<Option<f64>> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 2;
        let rec = rec.map_err(|e| crate::matrix::csv_read_err(e, row))?;
        let date = parse_date(rec.get(0).unwrap_or(""), row)?;
        if let Some(&prev) = dates.last() {
            if date == prev {
                return Err(Error::Parse {
                    row,
                    column: 1,
                    message: format!("duplicate date {date}"),
                });
            }
            if date < prev {
                return Err(Error::Parse {
                    row,
                    column: 1,
                    message: format!("date {date} is earlier than the preceding {prev}"),
                });
            }
        }
        dates.push(date);
        for j in 0..n {
            let cell = rec.get(j + 1).unwrap_or("").trim();
            if cell.is_empty() {
                cells.push(None);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: j + 2,
                message: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: j + 2,
                    message: format!("non-finite value {cell:?}"),
                });
            }
            if kind == InputKind::Prices && v <= 0.0 {
                return Err(Error::Parse {
                    row,
                    column: j + 2,
                    message: format!("price must be positive, got {v}"),
                });
            }
            cells.push(Some(v));
        }
    }
    let t = dates.len();
    let cell = |asset: usize, date: usize| cells[date * n + asset];

    match kind {
        InputKind::Returns => {
            let values = DMatrix::from_fn(n, t, |i, j| cell(i, j).unwrap_or(f64::NAN));
            let available = DMatrix::from_fn(n, t, |i, j| cell(i, j).is_some());
            ReturnPanel::new(dates, assets, values, available)
        }
        InputKind::Prices => {
            if t < 2 {
                return Err(Error::InsufficientData {
                    required: 2,
                    actual: t,
                });
            }
            let values = DMatrix::from_fn(n, t - 1, |i, j| match (cell(i, j), cell(i, j + 1)) {
                (Some(p0), Some(p1)) => p1 / p0 - 1.0,
                _ => f64::NAN,
            });
            let available = DMatrix::from_fn(n, t - 1, |i, j| cell(i, j).is_some() && cell(i, j + 1).is_some());
            ReturnPanel::new(dates[1..].to_vec(), assets, values, available)
        }
    }
}

pub fn load_panel(path: &Path, kind: InputKind) -> Result<ReturnPanel> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_panel(std::io::BufReader::new(file), kind)
}

/// Writes a returns panel in the same wide layout; values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_panel<W: Write>(writer: W, panel: &ReturnPanel) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string()];
    header.extend(panel.assets.iter().cloned());
    w.write_record(&header).map_err(csv_write_err)?;
    for (j, d) in panel.dates.iter().enumerate() {
        let mut row = vec![d.format("%Y-%m-%d").to_string()];
        for i in 0..panel.n_assets() {
            row.push(if panel.available[(i, j)] {
                format!("{}", panel.values[(i, j)])
            } else {
                String::new()
            });
        }
        w.write_record(&row).map_err(csv_write_err)?;
    }
    w.flush().map_err(|e| Error::io("<panel csv>", e))?;
    Ok(())
}

pub fn save_panel(path: &Path, panel: &ReturnPanel) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_panel(std::io::BufWriter::new(file), panel)
}
