//! Rolling one-step-ahead forecast evaluation.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::FitConfig;
use super::io::Table;
use super::report::fit_estimator;
use crate::error::{Error, Result};
use crate::factor::dfm_forecast;
use crate::linalg::Vector;
use crate::var_process::TimeSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingSpec {
    /// Each entry `e` fits on rows `0..e` and forecasts row `e`.
    pub window_ends: Vec<usize>,
    /// One configuration per VAR estimator, labelled by its estimator.
    pub methods: Vec<FitConfig>,
    /// Two-step dynamic factor forecast with `(r, var_order)`.
    pub dfm: Option<(usize, usize)>,
}

impl RollingSpec {
    /// Windows ending at `first_end, first_end + 1, …, T − 1`.
    pub fn expanding(first_end: usize, t: usize, methods: Vec<FitConfig>, dfm: Option<(usize, usize)>) -> Self {
        RollingSpec { window_ends: (first_end..t).collect(), methods, dfm }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingRow {
    pub method: String,
    /// `ℓ₂` norm of all stacked forecast errors.
    pub l2: f64,
    /// Largest absolute forecast error.
    pub linf: f64,
    pub windows: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingResult {
    pub rows: Vec<RollingRow>,
    /// Forecast errors `y_e − ŷ_e` per method, `None` for skipped windows.
    pub errors: Vec<(String, Vec<Option<Vector>>)>,
}

impl RollingResult {
    pub fn row(&self, method: &str) -> Option<&RollingRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&["method", "l2", "linf", "windows", "skipped"]);
        for r in &self.rows {
            t.push(vec![r.method.clone(), r.l2.to_string(), r.linf.to_string(), r.windows.to_string(), r.skipped.to_string()])
                .expect("five columns");
        }
        t
    }
}

fn method_label(cfg: &FitConfig) -> String {
    cfg.estimator.name().to_string()
}

/// Refits every method on each expanding window and accumulates the
/// one-step errors. A window whose fit fails is skipped and logged.
pub fn rolling_forecast(ts: &TimeSeries, spec: &RollingSpec) -> Result<RollingResult> {
    if spec.window_ends.is_empty() {
        return Err(Error::Argument("no forecast windows".into()));
    }
    if let Some(&bad) = spec.window_ends.iter().find(|&&e| e == 0 || e >= ts.len()) {
        return Err(Error::Argument(format!("window end {bad} must lie in 1..{}", ts.len())));
    }
    let mut labels: Vec<String> = spec.methods.iter().map(method_label).collect();
    if spec.dfm.is_some() {
        labels.push("dfm".into());
    }
    let per_window: Vec<Vec<Option<Vector>>> = spec
        .window_ends
        .par_iter()
        .map(|&end| {
            let target = ts.values.row(end).transpose();
            let history = ts.head(end).expect("end checked above");
            let mut out: Vec<Option<Vector>> = Vec::with_capacity(labels.len());
            for cfg in &spec.methods {
                match fit_estimator(&history, cfg).and_then(|r| r.forecast(&history)) {
                    Ok(f) => out.push(Some(&target - f)),
                    Err(e) => {
                        warn!("{} failed on the window ending at {end}: {e}", method_label(cfg));
                        out.push(None);
                    }
                }
            }
            if let Some((r, order)) = spec.dfm {
                match dfm_forecast(&history, r, order) {
                    Ok(f) => out.push(Some(&target - f.forecast)),
                    Err(e) => {
                        warn!("dfm failed on the window ending at {end}: {e}");
                        out.push(None);
                    }
                }
            }
            out
        })
        .collect();
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (m, label) in labels.iter().enumerate() {
        let errs: Vec<Option<Vector>> = per_window.iter().map(|w| w[m].clone()).collect();
        let mut sq = 0.0;
        let mut linf = 0.0_f64;
        let mut windows = 0;
        for e in errs.iter().flatten() {
            sq += e.norm_squared();
            linf = linf.max(e.amax());
            windows += 1;
        }
        rows.push(RollingRow { method: label.clone(), l2: sq.sqrt(), linf, windows, skipped: errs.len() - windows });
        errors.push((label.clone(), errs));
    }
    Ok(RollingResult { rows, errors })
}
