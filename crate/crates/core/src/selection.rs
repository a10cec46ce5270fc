//! Multilinear rank selection by the ridge-type ratio estimator and penalty
//! selection by BIC grid search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::mlr::{self, InitStrategy};
use crate::regression::{self, ConvexOptions, Design, Penalty};
use crate::shorr::{self, ShorrFit, ShorrOptions};
use crate::tensor3::{hosvd_truncated, Mode, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RidgeParam {
    Fixed(f64),
    /// `√(NP·log T / (10T))` for a series of length `T`.
    Auto { t: usize },
}

pub fn auto_ridge(n: usize, p: usize, t: usize) -> f64 {
    let t = t as f64;
    ((n * p) as f64 * t.ln() / (10.0 * t)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankChoice {
    pub ranks: [usize; 3],
    /// `(σⱼ₊₁ + c)/(σⱼ + c)` for `j = 1, …, pᵢ − 1`, per mode.
    pub ratios: [Vec<f64>; 3],
    pub c: f64,
    pub initial_estimator: String,
}

fn argmin_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

/// `r̂ᵢ = argmin_{1≤j≤pᵢ−1} (σⱼ₊₁ + c)/(σⱼ + c)` on each matricization of
/// the initial estimate; ties go to the smallest rank.
pub fn select_ranks(init_est: &Tensor3, c: RidgeParam) -> Result<RankChoice> {
    let [n, n2, p] = init_est.dims();
    if n != n2 {
        return Err(Error::Argument(format!("expected an N x N x P tensor, got {:?}", init_est.dims())));
    }
    let c = match c {
        RidgeParam::Fixed(c) => c,
        RidgeParam::Auto { t } => {
            if t < 2 {
                return Err(Error::Argument("automatic ridge parameter needs T >= 2".into()));
            }
            auto_ridge(n, p, t)
        }
    };
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::Argument(format!("ridge parameter must be positive, got {c}")));
    }
    let mut ranks = [1; 3];
    let mut ratios: [Vec<f64>; 3] = Default::default();
    for mode in Mode::ALL {
        let i = mode.index();
        let s = linalg::singular_values(&init_est.matricize(mode))?;
        let dim = init_est.dims()[i];
        let seq: Vec<f64> = (0..dim.saturating_sub(1)).map(|j| (s.get(j + 1).copied().unwrap_or(0.0) + c) / (s[j] + c)).collect();
        if !seq.is_empty() {
            ranks[i] = argmin_first(&seq) + 1;
        }
        ratios[i] = seq;
    }
    Ok(RankChoice { ranks, ratios, c, initial_estimator: "given".into() })
}

/// Ranks from the nuclear-norm estimate at [`mlr::default_nn_lambda`] with
/// the automatic ridge parameter.
pub fn select_ranks_nn(d: &Design, c: Option<f64>) -> Result<RankChoice> {
    let lambda = mlr::default_nn_lambda(d)?;
    let fit = regression::fit_nn(d, lambda, &ConvexOptions { tol: 1e-6, ..ConvexOptions::default() })?;
    let ridge = match c {
        Some(c) => RidgeParam::Fixed(c),
        None => RidgeParam::Auto { t: d.t_eff() + d.p() },
    };
    let mut choice = select_ranks(&fit.coeff, ridge)?;
    choice.initial_estimator = format!("nn(lambda={lambda:.6e})");
    Ok(choice)
}

/// Goodness-of-fit term of the information criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BicForm {
    /// `log det Σ̂_ε + df·log(T_eff)/T_eff`, the usual criterion for VAR
    /// models.
    #[default]
    LogDet,
    /// `log(RSS/(T_eff·N)) + df·log(T_eff)/T_eff`.
    Pooled,
}

pub fn bic(d: &Design, coeff: &Tensor3, df: usize, form: BicForm) -> Result<f64> {
    let t = d.t_eff() as f64;
    let fit = match form {
        BicForm::Pooled => (d.rss(coeff) / (t * d.n() as f64)).ln(),
        BicForm::LogDet => {
            let r = d.residuals(coeff);
            let sigma: Mat = r.tr_mul(&r) / t;
            let chol = sigma.cholesky().ok_or_else(|| Error::Numerical("residual covariance is singular".into()))?;
            2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
        }
    };
    Ok(fit + df as f64 * t.ln() / t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicRow {
    pub lambda: f64,
    #[serde(with = "crate::serde_nan")]
    pub rss: f64,
    pub df: usize,
    #[serde(with = "crate::serde_nan")]
    pub bic: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSelection {
    pub lambda: f64,
    pub table: Vec<BicRow>,
}

/// `λ = 2κτ / max_i ∏_{j≠i}‖Uⱼ⁽⁰⁾‖₁` for `τ` log-spaced on `[10⁻³, 0.3]`, so the
/// soft-threshold level of the first factor update sweeps `[10⁻³, 0.3]`.
pub fn default_shorr_grid(init: &Tensor3, ranks: [usize; 3], len: usize, kappa: f64) -> Result<Vec<f64>> {
    if len == 0 {
        return Err(Error::Argument("grid must be nonempty".into()));
    }
    let d = hosvd_truncated(init, ranks)?;
    let l1: Vec<f64> = d.factors.iter().map(linalg::l1_norm).collect();
    let denom = (l1[0] * l1[1]).max(l1[0] * l1[2]).max(l1[1] * l1[2]);
    Ok(log_grid(1e-3, 0.3, len).into_iter().map(|tau| 2.0 * kappa * tau / denom).collect())
}

/// `len` log-spaced points from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![lo];
    }
    (0..len).map(|k| lo * (hi / lo).powf(k as f64 / (len - 1) as f64)).collect()
}

fn pick(table: &[BicRow]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, row) in table.iter().enumerate() {
        if !row.bic.is_finite() {
            continue;
        }
        match best {
            None => best = Some(i),
            Some(b) => {
                let better = row.bic < table[b].bic || (row.bic == table[b].bic && row.lambda < table[b].lambda);
                if better {
                    best = Some(i);
                }
            }
        }
    }
    best
}

/// SHORR fits over the grid (warm started in increasing `λ`) scored by BIC
/// with df = nonzeros of `Ĝ, Û₁, Û₂, Û₃`. Returns the selected `λ`, the
/// table in grid order and the selected fit.
pub fn select_lambda_bic(
    d: &Design,
    ranks: [usize; 3],
    grid: &[f64],
    init: &Tensor3,
    opts: &ShorrOptions,
    form: BicForm,
) -> Result<(LambdaSelection, ShorrFit)> {
    if grid.is_empty() || grid.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::Argument("penalty grid must be nonempty and positive".into()));
    }
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|a, b| grid[*a].total_cmp(&grid[*b]));
    let sorted: Vec<f64> = order.iter().map(|i| grid[*i]).collect();
    let fits = shorr::fit_shorr_path(d, ranks, &sorted, init, opts);
    let mut rows: Vec<Option<(BicRow, ShorrFit)>> = vec![None; grid.len()];
    for (slot, fit) in order.iter().zip(fits) {
        if let Ok(f) = fit {
            let df = f.nonzeros();
            let row = BicRow { lambda: f.lambda, rss: d.rss(&f.coeff), df, bic: bic(d, &f.coeff, df, form)?, converged: f.converged };
            rows[*slot] = Some((row, f));
        }
    }
    let table: Vec<BicRow> = rows
        .iter()
        .zip(grid)
        .map(|(r, l)| match r {
            Some((row, _)) => row.clone(),
            None => BicRow { lambda: *l, rss: f64::NAN, df: 0, bic: f64::NAN, converged: false },
        })
        .collect();
    let best = pick(&table).ok_or_else(|| Error::Selection("every fit on the penalty grid failed".into()))?;
    let fit = rows[best].take().expect("selected row has a fit").1;
    Ok((LambdaSelection { lambda: table[best].lambda, table }, fit))
}

/// Penalty grid `λ_max·logspace(ratio, 1)` for the convex baselines.
pub fn convex_grid(d: &Design, penalty: Penalty, len: usize, ratio: f64) -> Result<Vec<f64>> {
    let top = regression::lambda_max(d, penalty)?;
    Ok(log_grid(top * ratio, top, len))
}

/// Degrees of freedom of a convex fit: `r(N + NP − r)` with `r` the
/// numerical rank of `Â₍₁₎` for the nuclear norm, nonzero count for the ℓ₁
/// penalty.
pub fn convex_df(coeff: &Tensor3, penalty: Penalty) -> Result<usize> {
    let a1 = coeff.matricize(Mode::One);
    Ok(match penalty {
        Penalty::Nuclear => {
            let r = linalg::numerical_rank(&a1, 1e-8)?;
            let (n, np) = a1.shape();
            r * (n + np).saturating_sub(r)
        }
        Penalty::L1 => linalg::count_nonzero(&a1),
    })
}

/// Nuclear-norm or lasso fits along a decreasing grid (warm started), scored
/// by BIC.
pub fn select_convex_bic(
    d: &Design,
    penalty: Penalty,
    grid: &[f64],
    opts: &ConvexOptions,
    form: BicForm,
) -> Result<(LambdaSelection, Tensor3)> {
    if grid.is_empty() || grid.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::Argument("penalty grid must be nonempty and positive".into()));
    }
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|a, b| grid[*b].total_cmp(&grid[*a]));
    let mut start: Option<Tensor3> = None;
    let mut rows: Vec<Option<(BicRow, Tensor3)>> = vec![None; grid.len()];
    for i in order {
        let lambda = grid[i];
        let fit = match (&start, penalty) {
            (None, Penalty::Nuclear) => regression::fit_nn(d, lambda, opts),
            (None, Penalty::L1) => regression::fit_lasso(d, lambda, opts),
            (Some(s), Penalty::Nuclear) => regression::fit_nn_from(d, lambda, s, opts),
            (Some(s), Penalty::L1) => regression::fit_lasso_from(d, lambda, s, opts),
        };
        if let Ok(f) = fit {
            let df = convex_df(&f.coeff, penalty)?;
            let row = BicRow { lambda, rss: d.rss(&f.coeff), df, bic: bic(d, &f.coeff, df, form)?, converged: f.converged };
            start = Some(f.coeff.clone());
            rows[i] = Some((row, f.coeff));
        }
    }
    let table: Vec<BicRow> = rows
        .iter()
        .zip(grid)
        .map(|(r, l)| match r {
            Some((row, _)) => row.clone(),
            None => BicRow { lambda: *l, rss: f64::NAN, df: 0, bic: f64::NAN, converged: false },
        })
        .collect();
    let best = pick(&table).ok_or_else(|| Error::Selection("every fit on the penalty grid failed".into()))?;
    let coeff = rows[best].take().expect("selected row has a fit").1;
    Ok((LambdaSelection { lambda: table[best].lambda, table }, coeff))
}

/// Lowest-BIC SHORR fit from the nuclear-norm start on the default grid.
pub fn fit_shorr_bic(d: &Design, ranks: [usize; 3], grid_len: usize, opts: &ShorrOptions, form: BicForm) -> Result<(LambdaSelection, ShorrFit)> {
    let init = mlr::initial_estimate(d, ranks, &InitStrategy::Nn(None))?;
    let grid = default_shorr_grid(&init, ranks, grid_len, opts.kappa)?;
    select_lambda_bic(d, ranks, &grid, &init, opts, form)
}
