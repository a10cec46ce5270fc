//! Fitting from a configuration, fit reports and model files.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{sha256_hex, Estimator, FitConfig, LambdaChoice, RankSpec};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::mlr::{self, InitStrategy, MlrOptions};
use crate::regression::{self, build_design, ConvexOptions, Design, Penalty};
use crate::selection::{self, BicRow, RankChoice};
use crate::shorr::{self, ShorrOptions};
use crate::tensor3::{Tensor3, TuckerDecomp};
use crate::var_process::{forecast_one_step, TimeSeries, VarModel};

pub const SCHEMA_VERSION: u32 = 1;

/// Smallest-to-largest penalty ratio of the default convex grids.
pub const CONVEX_GRID_RATIO: f64 = 1e-3;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    /// SHA-256 of the canonical configuration text.
    pub config_hash: String,
    pub library_version: String,
}

/// Everything known about one fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub estimator: Estimator,
    pub p: usize,
    pub coeff: Tensor3,
    #[serde(default)]
    pub decomp: Option<TuckerDecomp>,
    #[serde(default)]
    pub ranks: Option<[usize; 3]>,
    #[serde(default)]
    pub rank_choice: Option<RankChoice>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub bic_table: Vec<BicRow>,
    #[serde(default)]
    pub objective_trace: Vec<f64>,
    #[serde(default)]
    pub iterations: usize,
    #[serde(default)]
    pub converged: bool,
    #[serde(default)]
    pub primal_residual: Option<f64>,
    #[serde(default)]
    pub seconds: f64,
    /// Nonzero row indices of each column of `Û₁, Û₂, Û₃`.
    #[serde(default)]
    pub sparsity: Option<[Vec<Vec<usize>>; 3]>,
    /// Residual covariance `Ê'Ê/T_eff`.
    #[serde(default)]
    pub sigma_eps: Option<Mat>,
    #[serde(default)]
    pub config: FitConfig,
    #[serde(default)]
    pub provenance: Provenance,
}

impl FitReport {
    pub fn dims(&self) -> [usize; 3] {
        self.coeff.dims()
    }

    /// One-step forecast from the last `P` rows of `ts`.
    pub fn forecast(&self, ts: &TimeSeries) -> Result<Vector> {
        forecast_one_step(&self.coeff, ts)
    }

    fn validate(&self) -> Result<()> {
        let dims = self.coeff.dims();
        Tensor3::from_vec(dims, self.coeff.data().to_vec()).map_err(|e| Error::ModelFile(e.to_string()))?;
        if dims[0] != dims[1] || dims[2] != self.p {
            return Err(Error::ModelFile(format!("coefficients of shape {dims:?} do not describe a VAR({})", self.p)));
        }
        if let Some(s) = &self.sigma_eps {
            if s.shape() != (dims[0], dims[0]) {
                return Err(Error::ModelFile("innovation covariance has the wrong shape".into()));
            }
        }
        if let Some(d) = &self.decomp {
            if d.dims() != dims {
                return Err(Error::ModelFile("decomposition does not match the coefficients".into()));
            }
        }
        Ok(())
    }
}

/// Wraps a known model (for instance a simulation truth) as a report, so it
/// can be saved, loaded and used for forecasting like a fitted one.
pub fn model_report(model: &VarModel, seed: u64) -> FitReport {
    let ranks = model.decomp().map(|d| d.ranks());
    let config = FitConfig {
        p: model.p(),
        ranks: ranks.map(RankSpec::Fixed).unwrap_or(RankSpec::Auto),
        estimator: Estimator::Mlr,
        seed,
        ..FitConfig::default()
    };
    FitReport {
        estimator: Estimator::Mlr,
        p: model.p(),
        coeff: model.coeff().clone(),
        decomp: model.decomp().cloned(),
        ranks,
        rank_choice: None,
        lambda: None,
        bic_table: Vec::new(),
        objective_trace: Vec::new(),
        iterations: 0,
        converged: true,
        primal_residual: None,
        seconds: 0.0,
        sparsity: model.decomp().map(|d| support(&d.factors)),
        sigma_eps: Some(model.sigma_eps().clone()),
        provenance: Provenance { seed, config_hash: config.hash(), library_version: env!("CARGO_PKG_VERSION").to_string() },
        config,
    }
}

fn support(factors: &[Mat; 3]) -> [Vec<Vec<usize>>; 3] {
    let pattern = |u: &Mat| -> Vec<Vec<usize>> {
        u.column_iter().map(|c| c.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i).collect()).collect()
    };
    [pattern(&factors[0]), pattern(&factors[1]), pattern(&factors[2])]
}

struct Fitted {
    coeff: Tensor3,
    decomp: Option<TuckerDecomp>,
    lambda: Option<f64>,
    bic_table: Vec<BicRow>,
    objective_trace: Vec<f64>,
    iterations: usize,
    converged: bool,
    primal_residual: Option<f64>,
}

impl Fitted {
    fn closed_form(coeff: Tensor3) -> Self {
        Fitted {
            coeff,
            decomp: None,
            lambda: None,
            bic_table: Vec::new(),
            objective_trace: Vec::new(),
            iterations: 0,
            converged: true,
            primal_residual: None,
        }
    }
}

fn convex(d: &Design, cfg: &FitConfig, penalty: Penalty) -> Result<Fitted> {
    let mut opts = ConvexOptions::default();
    if let Some(t) = cfg.tol {
        opts.tol = t;
    }
    if let Some(m) = cfg.max_iter {
        opts.max_iter = m;
    }
    let grid = match &cfg.lambda {
        LambdaChoice::Fixed(l) => {
            let fit = match penalty {
                Penalty::Nuclear => regression::fit_nn(d, *l, &opts)?,
                Penalty::L1 => regression::fit_lasso(d, *l, &opts)?,
            };
            return Ok(Fitted {
                coeff: fit.coeff,
                decomp: None,
                lambda: Some(*l),
                bic_table: Vec::new(),
                objective_trace: fit.objective_trace,
                iterations: fit.iterations,
                converged: fit.converged,
                primal_residual: None,
            });
        }
        LambdaChoice::BicDefault(len) => selection::convex_grid(d, penalty, *len, CONVEX_GRID_RATIO)?,
        LambdaChoice::BicGrid(g) => g.clone(),
    };
    let (sel, coeff) = selection::select_convex_bic(d, penalty, &grid, &opts, cfg.bic_form)?;
    let converged = sel.table.iter().find(|r| r.lambda == sel.lambda).is_some_and(|r| r.converged);
    Ok(Fitted { coeff, lambda: Some(sel.lambda), bic_table: sel.table, converged, ..Fitted::closed_form(Tensor3::zeros([1, 1, 1])) })
}

fn shorr_options(cfg: &FitConfig) -> ShorrOptions {
    let mut o = cfg.shorr.clone();
    if let Some(t) = cfg.tol {
        o.tol = t;
    }
    if let Some(m) = cfg.max_iter {
        o.max_iter = m;
    }
    o
}

fn from_shorr(f: shorr::ShorrFit) -> Fitted {
    Fitted {
        coeff: f.coeff,
        lambda: Some(f.lambda),
        bic_table: Vec::new(),
        objective_trace: f.objective_trace,
        iterations: f.iterations,
        converged: f.converged,
        primal_residual: Some(f.primal_residual),
        decomp: Some(f.decomp),
    }
}

fn fit_shorr_cfg(d: &Design, ranks: [usize; 3], cfg: &FitConfig) -> Result<Fitted> {
    let opts = shorr_options(cfg);
    match &cfg.lambda {
        LambdaChoice::Fixed(l) => {
            let f = if cfg.starts > 1 {
                shorr::shorr_multistart(d, ranks, *l, cfg.starts, cfg.seed, &opts)?
            } else {
                shorr::fit_shorr(d, ranks, *l, &InitStrategy::Nn(None), &opts)?
            };
            Ok(from_shorr(f))
        }
        LambdaChoice::BicDefault(len) => {
            let (sel, f) = selection::fit_shorr_bic(d, ranks, *len, &opts, cfg.bic_form)?;
            Ok(Fitted { bic_table: sel.table, ..from_shorr(f) })
        }
        LambdaChoice::BicGrid(g) => {
            let init = mlr::initial_estimate(d, ranks, &InitStrategy::Nn(None))?;
            let (sel, f) = selection::select_lambda_bic(d, ranks, g, &init, &opts, cfg.bic_form)?;
            Ok(Fitted { bic_table: sel.table, ..from_shorr(f) })
        }
    }
}

fn fit_mlr_cfg(d: &Design, ranks: [usize; 3], cfg: &FitConfig) -> Result<Fitted> {
    let mut opts = MlrOptions::default();
    if let Some(t) = cfg.tol {
        opts.tol = t;
    }
    if let Some(m) = cfg.max_iter {
        opts.max_iter = m;
    }
    if cfg.starts > 1 {
        opts.init = Some(InitStrategy::RandomPerturbed { n_starts: cfg.starts, seed: cfg.seed });
    }
    let f = mlr::fit_mlr(d, ranks, &opts)?;
    Ok(Fitted {
        coeff: f.coeff,
        decomp: Some(f.decomp),
        lambda: None,
        bic_table: Vec::new(),
        objective_trace: f.objective_trace,
        iterations: f.iterations,
        converged: f.converged,
        primal_residual: None,
    })
}

/// Fits `cfg.estimator` to an already built design.
pub fn fit_design(d: &Design, cfg: &FitConfig) -> Result<FitReport> {
    if d.p() != cfg.p {
        return Err(Error::Argument(format!("design has P = {} but the configuration says {}", d.p(), cfg.p)));
    }
    let start = Instant::now();
    let (ranks, rank_choice) = if cfg.estimator.needs_ranks() {
        match cfg.ranks {
            RankSpec::Fixed(r) => (Some(r), None),
            RankSpec::Auto => {
                let choice = selection::select_ranks_nn(d, cfg.c)?;
                (Some(choice.ranks), Some(choice))
            }
        }
    } else {
        (None, None)
    };
    let fitted = match cfg.estimator {
        Estimator::Ols => Fitted::closed_form(regression::fit_ols(d)?),
        Estimator::Rrr => Fitted::closed_form(regression::fit_rrr(d, ranks.expect("rrr needs ranks")[0])?),
        Estimator::Nn => convex(d, cfg, Penalty::Nuclear)?,
        Estimator::Lasso => convex(d, cfg, Penalty::L1)?,
        Estimator::Mlr => fit_mlr_cfg(d, ranks.expect("mlr needs ranks"), cfg)?,
        Estimator::Shorr => fit_shorr_cfg(d, ranks.expect("shorr needs ranks"), cfg)?,
    };
    let res = d.residuals(&fitted.coeff);
    let sigma_eps = res.tr_mul(&res) / d.t_eff() as f64;
    let sparsity = match (cfg.estimator, &fitted.decomp) {
        (Estimator::Shorr, Some(dc)) => Some(support(&dc.factors)),
        _ => None,
    };
    Ok(FitReport {
        estimator: cfg.estimator,
        p: cfg.p,
        coeff: fitted.coeff,
        decomp: fitted.decomp,
        ranks,
        rank_choice,
        lambda: fitted.lambda,
        bic_table: fitted.bic_table,
        objective_trace: fitted.objective_trace,
        iterations: fitted.iterations,
        converged: fitted.converged,
        primal_residual: fitted.primal_residual,
        seconds: start.elapsed().as_secs_f64(),
        sparsity,
        sigma_eps: Some(sigma_eps),
        config: cfg.clone(),
        provenance: Provenance {
            seed: cfg.seed,
            config_hash: cfg.hash(),
            library_version: env!("CARGO_PKG_VERSION").to_string(),
        },
    })
}

/// Builds the lag design with `cfg.p` lags and fits.
pub fn fit_estimator(ts: &TimeSeries, cfg: &FitConfig) -> Result<FitReport> {
    fit_design(&build_design(ts, cfg.p)?, cfg)
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema_version: u32,
    sha256: String,
    model: serde_json::Value,
}

/// Serializes a report as a versioned JSON document. The checksum covers
/// the compact serialization of the `model` object.
pub fn model_to_json(report: &FitReport) -> Result<String> {
    let model = serde_json::to_value(report).map_err(|e| Error::ModelFile(e.to_string()))?;
    let compact = serde_json::to_vec(&model).map_err(|e| Error::ModelFile(e.to_string()))?;
    let doc = ModelFile { schema_version: SCHEMA_VERSION, sha256: sha256_hex(&compact), model };
    serde_json::to_string_pretty(&doc).map_err(|e| Error::ModelFile(e.to_string()))
}

pub fn model_from_json(text: &str) -> Result<FitReport> {
    let doc: ModelFile = serde_json::from_str(text).map_err(|e| {
        if e.is_eof() {
            Error::Checksum("model file is truncated".into())
        } else {
            Error::ModelFile(e.to_string())
        }
    })?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(Error::Version { found: doc.schema_version, expected: SCHEMA_VERSION });
    }
    let compact = serde_json::to_vec(&doc.model).map_err(|e| Error::ModelFile(e.to_string()))?;
    let actual = sha256_hex(&compact);
    if actual != doc.sha256 {
        return Err(Error::Checksum(format!("stored {} but contents hash to {actual}", doc.sha256)));
    }
    let report: FitReport = serde_json::from_value(doc.model).map_err(|e| Error::ModelFile(e.to_string()))?;
    report.validate()?;
    Ok(report)
}

pub fn save_model(report: &FitReport, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model_to_json(report)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FitReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::ModelFile(format!("{}: {e}", path.display())))?;
    model_from_json(&text)
}
