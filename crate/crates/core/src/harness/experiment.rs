//! Seeded Monte Carlo experiments.
//!
//! Replication `k` of an experiment with base seed `s` uses the seed
//! `replication_seed(s, k)`; the data-generating process of that replication
//! is drawn from `replication_seed(rep_seed, 0)` and the series for sample
//! size `T` from `replication_seed(rep_seed, T)`. [`run_replication`] reruns
//! a single replication from its recorded seed.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::config::{parse_dgp, parse_list, parse_triple, parse_value, Estimator, FitConfig, KeyValues, LambdaChoice, RankSpec, DEFAULT_GRID_LEN};
use super::io::{write_csv, Table};
use super::report::fit_design;
use super::rolling::{rolling_forecast, RollingSpec};
use crate::error::{Error, Result};
use crate::factor::{dfm_forecast, fit_sfm, subspace_distance};
use crate::mlr::{self, empirical_vs_asymptotic, replication_seed, MlrOptions};
use crate::linalg::orthonormality_error;
use crate::regression::{build_design, fit_ols};
use crate::selection::{select_ranks, select_ranks_nn, RidgeParam};
use crate::shorr::row_coherence;
use crate::tensor3::Mode;
use crate::var_process::{self, make_dgp, seeded_rng, Dgp, DgpSpec, TimeSeries, VarModel, DEFAULT_BURN_IN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    RankConsistency,
    BiasVariance,
    GammaScaling,
    EstimatorComparison,
    FactorComparison,
    RollingForecast,
}

impl ExperimentKind {
    const ALL: [ExperimentKind; 6] = [
        ExperimentKind::RankConsistency,
        ExperimentKind::BiasVariance,
        ExperimentKind::GammaScaling,
        ExperimentKind::EstimatorComparison,
        ExperimentKind::FactorComparison,
        ExperimentKind::RollingForecast,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::RankConsistency => "rank_consistency",
            ExperimentKind::BiasVariance => "bias_variance",
            ExperimentKind::GammaScaling => "gamma_scaling",
            ExperimentKind::EstimatorComparison => "estimator_comparison",
            ExperimentKind::FactorComparison => "factor_comparison",
            ExperimentKind::RollingForecast => "rolling_forecast",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::Argument(format!("unknown experiment kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub dgp: DgpSpec,
    /// Sample sizes. For `gamma_scaling` they are derived from `gammas`.
    pub t_grid: Vec<usize>,
    /// `γ = s₁s₂s₃·log(N²P)/T` values of a `gamma_scaling` run.
    pub gammas: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    /// Ranks used for fitting; `None` uses the true ranks of the process.
    pub fit_ranks: Option<[usize; 3]>,
    /// Lag order fitted to dynamic factor data.
    pub lag_order: usize,
    pub grid_len: usize,
    /// Number of one-step forecasts of a `rolling_forecast` run.
    pub windows: usize,
    pub burn_in: usize,
    pub output: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind, dgp: DgpSpec, t_grid: Vec<usize>, reps: usize, seed: u64) -> Self {
        let estimators = match kind {
            ExperimentKind::RankConsistency => vec![Estimator::Nn],
            ExperimentKind::BiasVariance => vec![Estimator::Ols, Estimator::Rrr, Estimator::Mlr],
            ExperimentKind::GammaScaling => vec![Estimator::Shorr],
            ExperimentKind::EstimatorComparison => vec![Estimator::Shorr, Estimator::Mlr, Estimator::Nn, Estimator::Lasso],
            ExperimentKind::FactorComparison => vec![Estimator::Mlr],
            ExperimentKind::RollingForecast => vec![Estimator::Shorr, Estimator::Mlr, Estimator::Ols],
        };
        ExperimentSpec {
            kind,
            dgp,
            t_grid,
            gammas: Vec::new(),
            reps,
            seed,
            estimators,
            fit_ranks: None,
            lag_order: 1,
            grid_len: DEFAULT_GRID_LEN,
            windows: 20,
            burn_in: DEFAULT_BURN_IN,
            output: None,
        }
    }

    /// A `gamma_scaling` spec whose sample sizes come from `gammas`.
    pub fn gamma_scaling(dgp: DgpSpec, gammas: Vec<f64>, reps: usize, seed: u64) -> Result<Self> {
        let mut s = ExperimentSpec::new(ExperimentKind::GammaScaling, dgp, Vec::new(), reps, seed);
        s.gammas = gammas;
        s.t_grid = s.gamma_sample_sizes()?;
        Ok(s)
    }

    /// Reads the flat configuration format. Keys: `kind`, the DGP keys of
    /// [`parse_dgp`], `t`, `gamma`, `reps`, `seed`, `estimators`,
    /// `fit_ranks`, `lag_order`, `grid_len`, `windows`, `burn_in`, `out`.
    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        let known = [
            "kind", "dgp", "n", "p", "ranks", "diagonal", "sparsity", "t", "gamma", "reps", "seed", "estimators", "fit_ranks", "lag_order",
            "grid_len", "windows", "burn_in", "out",
        ];
        if let Some((k, _)) = kv.iter().find(|(k, _)| !known.contains(k)) {
            return Err(Error::Argument(format!("unknown experiment key `{k}`")));
        }
        let kind: ExperimentKind = kv.get("kind").ok_or_else(|| Error::Argument("missing `kind`".into()))?.parse()?;
        let dgp = parse_dgp(&kv)?;
        let reps = kv.get("reps").map(|v| parse_value("reps", v)).transpose()?.unwrap_or(200);
        let seed = kv.get("seed").map(|v| parse_value("seed", v)).transpose()?.unwrap_or(0);
        let t_grid = kv.get("t").map(|v| parse_list("t", v)).transpose()?.unwrap_or_default();
        let mut spec = ExperimentSpec::new(kind, dgp, t_grid, reps, seed);
        if let Some(v) = kv.get("gamma") {
            spec.gammas = parse_list("gamma", v)?;
            spec.t_grid = spec.gamma_sample_sizes()?;
        }
        if let Some(v) = kv.get("estimators") {
            spec.estimators = parse_list::<String>("estimators", v)?.iter().map(|e| e.parse()).collect::<Result<_>>()?;
        }
        if let Some(v) = kv.get("fit_ranks") {
            spec.fit_ranks = Some(parse_triple("fit_ranks", v)?);
        }
        if let Some(v) = kv.get("lag_order") {
            spec.lag_order = parse_value("lag_order", v)?;
        }
        if let Some(v) = kv.get("grid_len") {
            spec.grid_len = parse_value("grid_len", v)?;
        }
        if let Some(v) = kv.get("windows") {
            spec.windows = parse_value("windows", v)?;
        }
        if let Some(v) = kv.get("burn_in") {
            spec.burn_in = parse_value("burn_in", v)?;
        }
        spec.output = kv.get("out").map(PathBuf::from);
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Argument("`reps` must be at least 1".into()));
        }
        if self.t_grid.is_empty() {
            return Err(Error::Argument("no sample sizes (`t`, or `gamma` for gamma_scaling)".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Argument("no estimators".into()));
        }
        if self.grid_len == 0 || self.lag_order == 0 {
            return Err(Error::Argument("`grid_len` and `lag_order` must be positive".into()));
        }
        if self.kind == ExperimentKind::RollingForecast && self.windows == 0 {
            return Err(Error::Argument("`windows` must be positive".into()));
        }
        if self.kind == ExperimentKind::RankConsistency {
            if let Some(e) = self.estimators.iter().find(|e| !matches!(e, Estimator::Nn | Estimator::Ols)) {
                return Err(Error::Argument(format!("rank selection starts from nn or ols, not {e}")));
            }
        }
        if self.kind == ExperimentKind::GammaScaling && self.gammas.len() != self.t_grid.len() {
            return Err(Error::Argument("gamma_scaling needs `gamma` values".into()));
        }
        Ok(())
    }

    /// `T = round(s₁s₂s₃·log(N²P)/γ)` for every `γ`.
    pub fn gamma_sample_sizes(&self) -> Result<Vec<usize>> {
        let DgpSpec::SparseFactor { n, p, sparsity, .. } = &self.dgp else {
            return Err(Error::Argument("gamma scaling needs a sparse_factor process".into()));
        };
        self.gammas.iter().map(|g| gamma_sample_size(sparsity, *n, *p, *g)).collect()
    }

    /// The x-coordinate reported for setting `i`: `γ` or `T`.
    fn x(&self, i: usize) -> f64 {
        if self.kind == ExperimentKind::GammaScaling {
            self.gammas[i]
        } else {
            self.t_grid[i] as f64
        }
    }
}

pub fn gamma_sample_size(sparsity: &[usize; 3], n: usize, p: usize, gamma: f64) -> Result<usize> {
    if !(gamma > 0.0) {
        return Err(Error::Argument(format!("gamma must be positive, got {gamma}")));
    }
    let s = (sparsity[0] * sparsity[1] * sparsity[2]) as f64;
    Ok((s * ((n * n * p) as f64).ln() / gamma).round() as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: usize,
    pub x: f64,
    pub rep: usize,
    pub seed: u64,
    pub estimator: String,
    pub metric: String,
    #[serde(with = "crate::serde_nan")]
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub t: usize,
    pub x: f64,
    pub estimator: String,
    pub metric: String,
    #[serde(with = "crate::serde_nan")]
    pub mean: f64,
    #[serde(with = "crate::serde_nan")]
    pub sd: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub t: usize,
    pub rep: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub summary: Vec<SummaryRow>,
    pub records: Vec<Record>,
    pub failures: Vec<Failure>,
}

impl ExperimentResult {
    pub fn summary_row(&self, t: usize, estimator: &str, metric: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.t == t && r.estimator == estimator && r.metric == metric)
    }

    pub fn mean(&self, t: usize, estimator: &str, metric: &str) -> Option<f64> {
        self.summary_row(t, estimator, metric).map(|r| r.mean)
    }

    /// Per-replication values in replication order.
    pub fn values(&self, t: usize, estimator: &str, metric: &str) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter(|r| r.t == t && r.estimator == estimator && r.metric == metric)
            .map(|r| (r.rep, r.value))
            .collect()
    }

    pub fn summary_table(&self) -> Table {
        let mut t = Table::new(&["t", "x", "estimator", "metric", "mean", "sd", "n"]);
        for r in &self.summary {
            t.push(vec![r.t.to_string(), r.x.to_string(), r.estimator.clone(), r.metric.clone(), r.mean.to_string(), r.sd.to_string(), r.n.to_string()])
                .expect("seven columns");
        }
        t
    }

    pub fn records_table(&self) -> Table {
        let mut t = Table::new(&["t", "x", "rep", "seed", "estimator", "metric", "value"]);
        for r in &self.records {
            t.push(vec![
                r.t.to_string(),
                r.x.to_string(),
                r.rep.to_string(),
                r.seed.to_string(),
                r.estimator.clone(),
                r.metric.clone(),
                r.value.to_string(),
            ])
            .expect("seven columns");
        }
        t
    }

    /// Writes `summary.csv`, `records.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_csv(&self.summary_table(), dir.join("summary.csv"))?;
        write_csv(&self.records_table(), dir.join("records.csv"))?;
        #[derive(Serialize)]
        struct Json<'a> {
            spec: &'a ExperimentSpec,
            summary: &'a [SummaryRow],
            failures: &'a [Failure],
        }
        let json = serde_json::to_string_pretty(&Json { spec: &self.spec, summary: &self.summary, failures: &self.failures })
            .map_err(|e| Error::Data(e.to_string()))?;
        std::fs::write(dir.join("summary.json"), json)?;
        Ok(())
    }
}

/// One metric value produced by a replication.
pub type Measurement = (String, String, f64);

fn push(out: &mut Vec<Measurement>, est: &str, metric: &str, v: f64) {
    out.push((est.to_string(), metric.to_string(), v));
}

fn var_dgp(dgp: &Dgp) -> Result<&VarModel> {
    dgp.var_model().ok_or_else(|| Error::Argument("this experiment needs a VAR process".into()))
}

fn true_ranks(m: &VarModel, spec: &ExperimentSpec) -> Result<[usize; 3]> {
    if let Some(r) = spec.fit_ranks {
        return Ok(r);
    }
    m.decomp().map(|d| d.ranks()).ok_or_else(|| Error::Argument("process has no Tucker form; set `fit_ranks`".into()))
}

fn fit_config(spec: &ExperimentSpec, est: Estimator, p: usize, ranks: [usize; 3], seed: u64) -> FitConfig {
    FitConfig {
        p,
        estimator: est,
        ranks: RankSpec::Fixed(ranks),
        lambda: LambdaChoice::BicDefault(spec.grid_len),
        seed,
        ..FitConfig::default()
    }
}

/// Runs replication `rep_seed` of `spec` at sample size `t`.
pub fn run_replication(spec: &ExperimentSpec, t: usize, rep_seed: u64) -> Result<Vec<Measurement>> {
    let dgp = make_dgp(&spec.dgp, replication_seed(rep_seed, 0))?;
    let sim_seed = replication_seed(rep_seed, t as u64);
    let mut out = Vec::new();
    match spec.kind {
        ExperimentKind::RankConsistency => {
            let m = var_dgp(&dgp)?;
            let truth = true_ranks(m, spec)?;
            let ts = var_process::simulate(m, t, spec.burn_in, sim_seed)?;
            let d = build_design(&ts, m.p())?;
            for est in &spec.estimators {
                let choice = match est {
                    Estimator::Ols => select_ranks(&fit_ols(&d)?, RidgeParam::Auto { t })?,
                    _ => select_ranks_nn(&d, None)?,
                };
                push(&mut out, est.name(), "correct", f64::from(u8::from(choice.ranks == truth)));
                for i in 0..3 {
                    push(&mut out, est.name(), &format!("r{}", i + 1), choice.ranks[i] as f64);
                }
            }
        }
        ExperimentKind::BiasVariance => return Err(Error::Argument("bias_variance runs whole settings, not replications".into())),
        ExperimentKind::GammaScaling | ExperimentKind::EstimatorComparison => {
            let m = var_dgp(&dgp)?;
            let ranks = true_ranks(m, spec)?;
            let ts = var_process::simulate(m, t, spec.burn_in, sim_seed)?;
            let d = build_design(&ts, m.p())?;
            for est in &spec.estimators {
                let rep = fit_design(&d, &fit_config(spec, *est, m.p(), ranks, rep_seed))?;
                let err = rep.coeff.sub(m.coeff())?.frobenius_norm();
                push(&mut out, est.name(), "error", err);
                push(&mut out, est.name(), "sq_error", err * err);
                if let Some(l) = rep.lambda {
                    push(&mut out, est.name(), "lambda", l);
                }
                if *est == Estimator::Shorr {
                    push(&mut out, est.name(), "converged", f64::from(u8::from(rep.converged)));
                    if let Some(dc) = &rep.decomp {
                        let ortho = dc.factors.iter().map(orthonormality_error).fold(0.0, f64::max);
                        push(&mut out, est.name(), "orthonormality", ortho);
                        push(&mut out, est.name(), "row_coherence", row_coherence(&dc.core));
                    }
                    if let Some(r) = rep.primal_residual {
                        push(&mut out, est.name(), "primal_residual", r);
                    }
                }
            }
        }
        ExperimentKind::FactorComparison => factor_replication(spec, &dgp, t, sim_seed, &mut out)?,
        ExperimentKind::RollingForecast => {
            let m = var_dgp(&dgp)?;
            let ranks = true_ranks(m, spec)?;
            let ts = var_process::simulate(m, t + spec.windows, spec.burn_in, sim_seed)?;
            let history = ts.head(t)?;
            let d = build_design(&history, m.p())?;
            let mut methods = Vec::new();
            for est in &spec.estimators {
                let mut cfg = fit_config(spec, *est, m.p(), ranks, rep_seed);
                if est.is_penalized() {
                    let first = fit_design(&d, &cfg)?;
                    cfg.lambda = LambdaChoice::Fixed(first.lambda.expect("penalized fit has a penalty"));
                }
                methods.push(cfg);
            }
            let rolling = rolling_forecast(&ts, &RollingSpec::expanding(t, t + spec.windows, methods, None))?;
            for row in &rolling.rows {
                push(&mut out, &row.method, "l2", row.l2);
                push(&mut out, &row.method, "linf", row.linf);
            }
        }
    }
    Ok(out)
}

fn factor_replication(spec: &ExperimentSpec, dgp: &Dgp, t: usize, sim_seed: u64, out: &mut Vec<Measurement>) -> Result<()> {
    let (ts, p, ranks, subspace, truth): (TimeSeries, usize, [usize; 3], _, _) = match dgp {
        Dgp::Var(m) => {
            let ranks = true_ranks(m, spec)?;
            let ts = var_process::simulate(m, t, spec.burn_in, sim_seed)?;
            let u1 = match m.decomp() {
                Some(d) => d.factors[0].clone(),
                None => crate::linalg::leading_left_singular_vectors(&m.coeff().matricize(Mode::One), ranks[0])?,
            };
            let cm = m.conditional_mean(&ts)?;
            (ts, m.p(), ranks, u1, cm)
        }
        Dgp::Dfm(f) => {
            let mut rng = seeded_rng(sim_seed);
            let (ts, factors) = f.simulate(t, spec.burn_in, &mut rng)?;
            let last = factors.row(t - 1).transpose();
            let r = f.r();
            let ranks = spec.fit_ranks.unwrap_or([r, r, r.min(spec.lag_order)]);
            (ts, spec.lag_order, ranks, f.loadings.clone(), f.conditional_mean(&last))
        }
    };
    let r = ranks[0];
    let d = build_design(&ts, p)?;
    let fit = mlr::fit_mlr(&d, ranks, &MlrOptions::default())?;
    let sfm = fit_sfm(&ts, r)?;
    let mlr_dist = subspace_distance(&fit.decomp.factors[0], &subspace)?;
    let sfm_dist = subspace_distance(&sfm.loadings, &subspace)?;
    push(out, "mlr", "subspace_sq", mlr_dist * mlr_dist);
    push(out, "sfm", "subspace_sq", sfm_dist * sfm_dist);
    let mlr_pred = var_process::forecast_one_step(&fit.coeff, &ts)?;
    let dfm_pred = dfm_forecast(&ts, r, 1)?.forecast;
    push(out, "mlr", "prediction", (mlr_pred - &truth).norm());
    push(out, "dfm", "prediction", (dfm_pred - &truth).norm());
    Ok(())
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, f64::NAN);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

fn bias_variance(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    let dgp = make_dgp(&spec.dgp, spec.seed)?;
    let m = var_dgp(&dgp)?;
    let ranks = true_ranks(m, spec)?;
    let mut summary = Vec::new();
    for (i, &t) in spec.t_grid.iter().enumerate() {
        let report = empirical_vs_asymptotic(m, ranks, t, spec.reps, replication_seed(spec.seed, t as u64))?;
        for s in &report.summaries {
            let name = s.estimator.name();
            if !spec.estimators.iter().any(|e| e.name() == name) {
                continue;
            }
            let n = spec.reps - s.failures;
            if s.failures * 10 > spec.reps {
                return Err(Error::Experiment(format!("{name} failed in {} of {} replications at T = {t}", s.failures, spec.reps)));
            }
            for (metric, v) in [("squared_bias", s.squared_bias), ("evar", s.evar), ("avar", s.avar)] {
                summary.push(SummaryRow { t, x: spec.x(i), estimator: name.to_string(), metric: metric.to_string(), mean: v, sd: f64::NAN, n });
            }
        }
    }
    Ok(ExperimentResult { spec: spec.clone(), summary, records: Vec::new(), failures: Vec::new() })
}

/// Executes all replications and aggregates means and standard deviations
/// in a fixed order. Fails when more than 10% of the replications of any
/// sample size fail; smaller failure counts are logged with their seeds.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    if spec.kind == ExperimentKind::BiasVariance {
        return bias_variance(spec);
    }
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut summary = Vec::new();
    for (i, &t) in spec.t_grid.iter().enumerate() {
        let results: Vec<(usize, u64, Result<Vec<Measurement>>)> = (0..spec.reps)
            .into_par_iter()
            .map(|rep| {
                let seed = replication_seed(spec.seed, rep as u64);
                (rep, seed, run_replication(spec, t, seed))
            })
            .collect();
        let mut keys: Vec<(String, String)> = Vec::new();
        let mut setting_failures = 0;
        for (rep, seed, res) in results {
            match res {
                Ok(ms) => {
                    for (est, metric, value) in ms {
                        if !keys.iter().any(|(e, m)| *e == est && *m == metric) {
                            keys.push((est.clone(), metric.clone()));
                        }
                        records.push(Record { t, x: spec.x(i), rep, seed, estimator: est, metric, value });
                    }
                }
                Err(e) => {
                    warn!("{} replication {rep} (seed {seed}) at T = {t} failed: {e}", spec.kind.name());
                    setting_failures += 1;
                    failures.push(Failure { t, rep, seed, message: e.to_string() });
                }
            }
        }
        if setting_failures * 10 > spec.reps {
            let seeds: Vec<String> = failures.iter().filter(|f| f.t == t).map(|f| f.seed.to_string()).collect();
            return Err(Error::Experiment(format!(
                "{} of {} replications failed at T = {t} (seeds {})",
                setting_failures,
                spec.reps,
                seeds.join(", ")
            )));
        }
        for (est, metric) in keys {
            let vals: Vec<f64> = records.iter().filter(|r| r.t == t && r.estimator == est && r.metric == metric).map(|r| r.value).collect();
            let (mean, sd) = mean_sd(&vals);
            summary.push(SummaryRow { t, x: spec.x(i), estimator: est, metric, mean, sd, n: vals.len() });
        }
    }
    let result = ExperimentResult { spec: spec.clone(), summary, records, failures };
    if let Some(dir) = &spec.output {
        result.write(dir)?;
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(x, y)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Argument("need at least two paired points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Argument("x values are all equal".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit { slope, intercept: my - slope * mx, r_squared })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedT {
    pub mean_diff: f64,
    pub t: f64,
    pub df: usize,
    /// One-sided p-value for `mean(a − b) < 0`.
    pub p_less: f64,
}

/// Paired t statistic of `a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedT> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Argument("paired test needs two equally long samples of size >= 2".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (m, sd) = mean_sd(&diffs);
    let df = diffs.len() - 1;
    let se = sd / (diffs.len() as f64).sqrt();
    let t = if se == 0.0 {
        if m < 0.0 {
            f64::NEG_INFINITY
        } else if m > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    } else {
        m / se
    };
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(PairedT { mean_diff: m, t, df, p_less: dist.cdf(t) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_sample_size_matches_formula() {
        let t = gamma_sample_size(&[3, 3, 2], 10, 5, 0.1).unwrap();
        assert_eq!(t, (18.0 * 500f64.ln() / 0.1).round() as usize);
    }

    #[test]
    fn linear_fit_recovers_a_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-14 && (f.intercept + 1.0).abs() < 1e-14);
        assert!((f.r_squared - 1.0).abs() < 1e-14);
    }

    #[test]
    fn paired_t_matches_hand_computation() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [1.5, 2.5, 3.0, 5.0];
        let r = paired_t_test(&a, &b).unwrap();
        // diffs -0.5, -0.5, 0, -1: mean -0.5, sd √(1/6)
        let t = -0.5 / ((1.0f64 / 6.0).sqrt() / 2.0);
        assert!((r.t - t).abs() < 1e-12);
        assert!(r.p_less < 0.1 && r.p_less > 0.01);
    }

    #[test]
    fn spec_parses_and_rejects_unknown_keys() {
        let s = ExperimentSpec::parse("kind = rank_consistency\ndgp = superdiagonal\nn = 10\np = 5\ndiagonal = 2,2,2\nt = 100,200\nreps = 3").unwrap();
        assert_eq!(s.t_grid, vec![100, 200]);
        assert_eq!(s.estimators, vec![Estimator::Nn]);
        assert!(ExperimentSpec::parse("kind = rank_consistency\ndgp = dfm1\nn = 4\nt = 10\nbogus = 1").is_err());
        let g = ExperimentSpec::parse("kind = gamma_scaling\ndgp = sparse_factor\nn = 10\np = 5\nranks = 2,2,2\nsparsity = 3,3,2\ngamma = 0.1,0.2").unwrap();
        assert_eq!(g.t_grid.len(), 2);
        assert!(g.t_grid[0] > g.t_grid[1]);
    }

    #[test]
    fn experiments_are_deterministic_and_rerunnable() {
        let spec = ExperimentSpec::new(ExperimentKind::RankConsistency, DgpSpec::superdiagonal(6, 2, vec![2.0, 2.0]), vec![300], 4, 17);
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        assert_eq!(a.summary_table().to_csv_string().unwrap(), b.summary_table().to_csv_string().unwrap());
        assert_eq!(a.records_table().to_csv_string().unwrap(), b.records_table().to_csv_string().unwrap());
        let rec = a.records.iter().find(|r| r.rep == 2 && r.metric == "correct").unwrap();
        let again = run_replication(&spec, 300, rec.seed).unwrap();
        let v = again.iter().find(|(_, m, _)| m == "correct").unwrap().2;
        assert_eq!(v, rec.value);
    }

    #[test]
    fn factor_comparison_reports_both_metrics() {
        let mut spec = ExperimentSpec::new(ExperimentKind::FactorComparison, DgpSpec::Dfm1 { n: 6 }, vec![200], 2, 3);
        spec.burn_in = 50;
        let r = run_experiment(&spec).unwrap();
        for (e, m) in [("mlr", "subspace_sq"), ("sfm", "subspace_sq"), ("mlr", "prediction"), ("dfm", "prediction")] {
            assert!(r.mean(200, e, m).unwrap().is_finite(), "{e} {m}");
        }
    }

    #[test]
    fn too_many_failures_abort_the_experiment() {
        let mut spec = ExperimentSpec::new(ExperimentKind::EstimatorComparison, DgpSpec::superdiagonal(4, 2, vec![1.0]), vec![30], 3, 1);
        spec.estimators = vec![Estimator::Mlr];
        spec.fit_ranks = Some([9, 9, 9]);
        assert!(matches!(run_experiment(&spec), Err(Error::Experiment(_))));
    }
}
