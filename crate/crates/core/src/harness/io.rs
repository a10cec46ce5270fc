//! CSV series and tables.
//!
//! Series files have one header row of variable names and one row per time
//! point, oldest first. Numbers use `.` as the decimal separator and are
//! written in Rust's shortest round-trip form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::var_process::TimeSeries;

fn data_error(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Data(format!("{}: {msg}", path.display()))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!(),
        },
        _ => data_error(path, e),
    }
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<TimeSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| data_error(path, e))?;
    parse_series(file, path)
}

/// Parses series CSV text from any reader; `origin` only labels errors.
pub fn parse_series<R: std::io::Read>(reader: R, origin: &Path) -> Result<TimeSeries> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).trim(csv::Trim::All).from_reader(reader);
    let names: Vec<String> = rdr.headers().map_err(|e| csv_error(origin, e))?.iter().map(str::to_string).collect();
    if names.is_empty() || names.iter().all(|n| n.is_empty()) {
        return Err(data_error(origin, "missing header row"));
    }
    let n = names.len();
    let mut values: Vec<f64> = Vec::new();
    let mut rows = 0;
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { len, .. } => {
                data_error(origin, format!("row {} has {len} fields, expected {n}", idx + 2))
            }
            _ => csv_error(origin, e),
        })?;
        for (col, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                data_error(origin, format!("row {}, column `{}`: `{cell}` is not a number", idx + 2, names[col]))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(data_error(origin, "no data rows"));
    }
    let m = Mat::from_row_slice(rows, n, &values);
    TimeSeries::new(m, Some(names)).map_err(|e| data_error(origin, e))
}

fn column_names(ts: &TimeSeries) -> Vec<String> {
    match &ts.names {
        Some(n) => n.clone(),
        None => (1..=ts.n_vars()).map(|j| format!("y{j}")).collect(),
    }
}

pub fn write_series(ts: &TimeSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(column_names(ts)).map_err(|e| csv_error(path, e))?;
    for row in ts.values.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// A rectangular table of text cells with a header row.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::Argument(format!("row has {} cells, table has {} columns", row.len(), self.header.len())));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Data(e.to_string());
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
    }
}

pub fn write_csv(table: &Table, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, table.to_csv_string()?)?;
    Ok(())
}

/// Column means and sample standard deviations (denominator `T − 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vector,
    pub sds: Vector,
}

impl Standardization {
    pub fn apply(&self, ts: &TimeSeries) -> Result<TimeSeries> {
        self.check(ts.n_vars())?;
        let mut v = ts.values.clone();
        for (j, mut col) in v.column_iter_mut().enumerate() {
            col.add_scalar_mut(-self.means[j]);
            col /= self.sds[j];
        }
        TimeSeries::new(v, ts.names.clone())
    }

    /// Maps standardized values (rows of a series or a single forecast)
    /// back to the original scale.
    pub fn invert(&self, ts: &TimeSeries) -> Result<TimeSeries> {
        self.check(ts.n_vars())?;
        let mut v = ts.values.clone();
        for (j, mut col) in v.column_iter_mut().enumerate() {
            col *= self.sds[j];
            col.add_scalar_mut(self.means[j]);
        }
        TimeSeries::new(v, ts.names.clone())
    }

    pub fn invert_vector(&self, x: &Vector) -> Result<Vector> {
        self.check(x.len())?;
        Ok(x.component_mul(&self.sds) + &self.means)
    }

    fn check(&self, n: usize) -> Result<()> {
        if n != self.means.len() {
            return Err(Error::Data(format!("transform has {} columns, data has {n}", self.means.len())));
        }
        Ok(())
    }
}

/// Zero mean and unit sample variance per column.
pub fn standardize(ts: &TimeSeries) -> Result<(TimeSeries, Standardization)> {
    let t = ts.len();
    if t < 2 {
        return Err(Error::Data("standardizing needs at least two observations".into()));
    }
    let names = column_names(ts);
    let n = ts.n_vars();
    let mut means = Vector::zeros(n);
    let mut sds = Vector::zeros(n);
    for (j, col) in ts.values.column_iter().enumerate() {
        let m = col.mean();
        let var = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (t - 1) as f64;
        if !(var > 0.0) {
            return Err(Error::Data(format!("column `{}` has zero variance", names[j])));
        }
        means[j] = m;
        sds[j] = var.sqrt();
    }
    let tr = Standardization { means, sds };
    Ok((tr.apply(ts)?, tr))
}
