//! Design matrices and the convex baseline estimators (OLS, reduced-rank,
//! nuclear norm, Lasso).
//!
//! Every estimator works with the sufficient statistics `X'X`, `X'Y` and
//! `‖Y‖²_F`, so the least-squares loss
//! `(1/T_eff)‖Y − X A₍₁₎'‖²_F` of a candidate `A₍₁₎` costs `O(N·(NP)²)`
//! regardless of the sample size.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::tensor3::{Mode, Tensor3};
use crate::var_process::{lag_vector, TimeSeries};

#[derive(Debug, Clone)]
pub struct Gram {
    /// `X'X`
    pub sxx: Mat,
    /// `X'Y`
    pub sxy: Mat,
    /// `‖Y‖²_F`
    pub syy: f64,
}

#[derive(Debug)]
pub struct Design {
    y: Mat,
    x: Mat,
    p: usize,
    gram: OnceLock<Gram>,
}

impl Clone for Design {
    fn clone(&self) -> Self {
        Design { y: self.y.clone(), x: self.x.clone(), p: self.p, gram: self.gram.clone() }
    }
}

impl Design {
    /// Wraps explicit response and predictor matrices. `x` must have `N·P`
    /// columns laid out as `(y_{t−1}', …, y_{t−P}')`.
    pub fn from_parts(y: Mat, x: Mat, p: usize) -> Result<Self> {
        let n = y.ncols();
        if p == 0 || y.nrows() == 0 || n == 0 {
            return Err(Error::Argument("design needs P >= 1 and a nonempty response".into()));
        }
        if x.shape() != (y.nrows(), n * p) {
            return Err(Error::Argument(format!(
                "predictor matrix must be {}x{}, got {}x{}",
                y.nrows(),
                n * p,
                x.nrows(),
                x.ncols()
            )));
        }
        Ok(Design { y, x, p, gram: OnceLock::new() })
    }

    pub fn y(&self) -> &Mat {
        &self.y
    }

    pub fn x(&self) -> &Mat {
        &self.x
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n(&self) -> usize {
        self.y.ncols()
    }

    pub fn t_eff(&self) -> usize {
        self.y.nrows()
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.n(), self.n(), self.p]
    }

    pub fn gram(&self) -> &Gram {
        self.gram.get_or_init(|| Gram {
            sxx: self.x.tr_mul(&self.x),
            sxy: self.x.tr_mul(&self.y),
            syy: self.y.norm_squared(),
        })
    }

    /// `(1/T_eff)‖Y − X A₍₁₎'‖²_F` for the `N × NP` matrix `a1`.
    pub fn loss_mat(&self, a1: &Mat) -> f64 {
        let g = self.gram();
        let cross: f64 = (a1 * &g.sxy).trace();
        let quad = (a1 * &g.sxx).component_mul(a1).sum();
        ((g.syy - 2.0 * cross + quad) / self.t_eff() as f64).max(0.0)
    }

    pub fn loss(&self, coeff: &Tensor3) -> f64 {
        self.loss_mat(&coeff.matricize(Mode::One))
    }

    /// `loss_mat(new) − loss_mat(old)` without the cancellation of
    /// subtracting two large quadratic forms.
    pub fn loss_diff(&self, new: &Mat, old: &Mat) -> f64 {
        let g = self.gram();
        let delta = new - old;
        let sum = new + old;
        let quad = (&delta * &g.sxx).component_mul(&sum).sum();
        let cross = (&delta * &g.sxy).trace();
        (quad - 2.0 * cross) / self.t_eff() as f64
    }

    /// Gradient of [`Design::loss_mat`]: `(2/T_eff)(A₍₁₎X'X − Y'X)`.
    pub fn gradient_mat(&self, a1: &Mat) -> Mat {
        let g = self.gram();
        (a1 * &g.sxx - g.sxy.transpose()) * (2.0 / self.t_eff() as f64)
    }

    /// Residual sum of squares computed from the data, not the Gram matrix.
    pub fn rss(&self, coeff: &Tensor3) -> f64 {
        self.residuals(coeff).norm_squared()
    }

    pub fn residuals(&self, coeff: &Tensor3) -> Mat {
        &self.y - &self.x * coeff.matricize(Mode::One).transpose()
    }
}

/// Builds `Y` and `X` from a series using the effective-sample convention.
pub fn build_design(ts: &TimeSeries, p: usize) -> Result<Design> {
    let t = ts.len();
    if p == 0 {
        return Err(Error::Argument("lag order must be at least 1".into()));
    }
    if t <= p {
        return Err(Error::Argument(format!("need more than P = {p} observations, got {t}")));
    }
    let n = ts.n_vars();
    let t_eff = t - p;
    let y = ts.values.rows(p, t_eff).into_owned();
    let mut x = Mat::zeros(t_eff, n * p);
    for row in 0..t_eff {
        x.set_row(row, &lag_vector(&ts.values, row + p, p).transpose());
    }
    Design::from_parts(y, x, p)
}

fn coeff_from_a1(a1: &Mat, dims: [usize; 3]) -> Result<Tensor3> {
    Tensor3::tensorize(a1, dims, Mode::One)
}

/// `(X'X)⁻¹X'Y` as an `NP × N` matrix.
fn ols_b(d: &Design) -> Result<Mat> {
    let g = d.gram();
    let np = g.sxx.nrows();
    if d.t_eff() < np {
        return Err(Error::RankDeficient {
            condition: f64::INFINITY,
            message: format!("T_eff = {} is smaller than NP = {np}", d.t_eff()),
        });
    }
    let condition = || {
        let (vals, _) = linalg::symmetric_eigen(&g.sxx);
        let lo = vals.first().copied().unwrap_or(0.0).max(0.0);
        let hi = vals.last().copied().unwrap_or(0.0);
        if lo == 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    };
    let Some(ch) = g.sxx.clone().cholesky() else {
        return Err(Error::RankDeficient { condition: condition(), message: "X'X is not positive definite".into() });
    };
    let diag = ch.l().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0_f64), |acc, v| (acc.0.min(v.abs()), acc.1.max(v.abs())));
    if hi == 0.0 || (lo / hi).powi(2) < 1e-13 {
        let c = condition();
        if c > 1e13 {
            return Err(Error::RankDeficient { condition: c, message: "X'X is numerically singular".into() });
        }
    }
    Ok(ch.solve(&g.sxy))
}

pub fn fit_ols(d: &Design) -> Result<Tensor3> {
    coeff_from_a1(&ols_b(d)?.transpose(), d.dims())
}

/// Identity-weighted reduced-rank regression of rank `r1`.
pub fn fit_rrr(d: &Design, r1: usize) -> Result<Tensor3> {
    let n = d.n();
    if r1 == 0 || r1 > n {
        return Err(Error::Argument(format!("RRR rank must lie in 1..={n}, got {r1}")));
    }
    let b = ols_b(d)?;
    if r1 == n {
        return coeff_from_a1(&b.transpose(), d.dims());
    }
    let fitted_gram = b.transpose() * &d.gram().sxx * &b;
    let (_, vecs) = linalg::symmetric_eigen(&fitted_gram);
    let v = vecs.columns(n - r1, r1).into_owned();
    let a1 = &v * v.transpose() * b.transpose();
    coeff_from_a1(&a1, d.dims())
}

pub fn soft_threshold(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

pub fn soft_threshold_mat(m: &Mat, lambda: f64) -> Mat {
    m.map(|x| soft_threshold(x, lambda))
}

/// Singular value thresholding, the proximal map of `λ‖·‖_*`.
pub fn svt(m: &Mat, lambda: f64) -> Result<Mat> {
    if lambda < 0.0 {
        return Err(Error::Argument(format!("threshold must be nonnegative, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(m.clone());
    }
    let s = linalg::svd(m)?;
    let mut out = Mat::zeros(m.nrows(), m.ncols());
    for (k, &sk) in s.singular_values.iter().enumerate() {
        if sk > lambda {
            out += s.u.column(k) * s.v.column(k).transpose() * (sk - lambda);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexOptions {
    /// Relative objective change used as the stopping rule.
    pub tol: f64,
    pub max_iter: usize,
    pub accelerate: bool,
}

impl Default for ConvexOptions {
    fn default() -> Self {
        ConvexOptions { tol: 1e-8, max_iter: 5000, accelerate: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexFit {
    pub coeff: Tensor3,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Step size used by the proximal iteration.
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Penalty {
    Nuclear,
    L1,
}

impl Penalty {
    fn value(self, a1: &Mat) -> Result<f64> {
        Ok(match self {
            Penalty::Nuclear => linalg::singular_values(a1)?.iter().sum(),
            Penalty::L1 => linalg::l1_norm(a1),
        })
    }

    pub fn prox(self, m: &Mat, t: f64) -> Result<Mat> {
        match self {
            Penalty::Nuclear => svt(m, t),
            Penalty::L1 => Ok(soft_threshold_mat(m, t)),
        }
    }
}

/// Step size `T_eff / (2 λ_max(X'X))` of the proximal-gradient solvers.
pub fn proximal_step(d: &Design) -> f64 {
    let lmax = linalg::max_eigenvalue(&d.gram().sxx);
    if lmax <= 0.0 {
        1.0
    } else {
        d.t_eff() as f64 / (2.0 * lmax)
    }
}

/// Accelerated proximal gradient with restart on objective increase.
fn proximal_gradient(d: &Design, lambda: f64, penalty: Penalty, start: Option<&Tensor3>, opts: &ConvexOptions) -> Result<ConvexFit> {
    if !(lambda >= 0.0) {
        return Err(Error::Argument(format!("penalty must be nonnegative, got {lambda}")));
    }
    let (n, np) = (d.n(), d.n() * d.p());
    let step = proximal_step(d);
    // Distances to the optimum are bounded by the gradient mapping over the
    // strong-convexity modulus; without strong convexity a floor of 1e-4 times
    // the Lipschitz constant stands in.
    let lip = 1.0 / step;
    let mu = 2.0 * linalg::min_eigenvalue(&d.gram().sxx) / d.t_eff() as f64;
    let mu = if mu > 1e-10 * lip { mu } else { 1e-4 * lip };
    let mut x = match start {
        Some(s) if s.dims() == d.dims() => s.matricize(Mode::One),
        Some(s) => {
            return Err(Error::Argument(format!("warm start has dims {:?}, expected {:?}", s.dims(), d.dims())))
        }
        None => Mat::zeros(n, np),
    };
    let mut pen_x = penalty.value(&x)?;
    let mut fx = d.loss_mat(&x) + lambda * pen_x;
    let mut trace = vec![fx];
    let mut y = x.clone();
    let mut momentum = 1.0_f64;
    let mut converged = false;
    let mut iterations = 0;
    // Objective changes are evaluated as differences so that acceptance tests
    // stay meaningful once they fall below the rounding level of the loss.
    let change = |z: &Mat, pen_z: f64, x: &Mat, pen_x: f64| d.loss_diff(z, x) + lambda * (pen_z - pen_x);
    while iterations < opts.max_iter {
        iterations += 1;
        let mut z = penalty.prox(&(&y - d.gradient_mat(&y) * step), step * lambda)?;
        let mut pen_z = penalty.value(&z)?;
        let mut dz = change(&z, pen_z, &x, pen_x);
        let mut moved = (&z - &y).norm();
        if dz > 0.0 {
            // Restart from the last accepted iterate with a plain proximal step,
            // which descends in exact arithmetic.
            momentum = 1.0;
            z = penalty.prox(&(&x - d.gradient_mat(&x) * step), step * lambda)?;
            pen_z = penalty.value(&z)?;
            dz = change(&z, pen_z, &x, pen_x);
            moved = (&z - &x).norm();
        }
        let next_m = if opts.accelerate { 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) } else { 1.0 };
        y = &z + (&z - &x) * ((momentum - 1.0) / next_m);
        momentum = next_m;
        let rel = dz.abs() / fx.abs().max(1e-300);
        x = z;
        pen_x = pen_z;
        fx += dz;
        trace.push(fx);
        if rel < opts.tol && moved / (step * mu) <= 1e-3 * opts.tol.sqrt() * (1.0 + x.norm()) {
            converged = true;
            break;
        }
    }
    Ok(ConvexFit { coeff: coeff_from_a1(&x, d.dims())?, objective_trace: trace, iterations, converged, step })
}

/// Nuclear-norm penalized least squares
/// `(1/T_eff)‖Y − X A₍₁₎'‖²_F + λ‖A₍₁₎‖_*`.
pub fn fit_nn(d: &Design, lambda: f64, opts: &ConvexOptions) -> Result<ConvexFit> {
    proximal_gradient(d, lambda, Penalty::Nuclear, None, opts)
}

pub fn fit_nn_from(d: &Design, lambda: f64, start: &Tensor3, opts: &ConvexOptions) -> Result<ConvexFit> {
    proximal_gradient(d, lambda, Penalty::Nuclear, Some(start), opts)
}

/// Entrywise ℓ₁ penalized least squares
/// `(1/T_eff)‖Y − X A₍₁₎'‖²_F + λ‖A₍₁₎‖₁`.
pub fn fit_lasso(d: &Design, lambda: f64, opts: &ConvexOptions) -> Result<ConvexFit> {
    proximal_gradient(d, lambda, Penalty::L1, None, opts)
}

pub fn fit_lasso_from(d: &Design, lambda: f64, start: &Tensor3, opts: &ConvexOptions) -> Result<ConvexFit> {
    proximal_gradient(d, lambda, Penalty::L1, Some(start), opts)
}

/// `‖A − prox(A − s∇L(A), sλ)‖_F` at the fitted coefficients.
pub fn fixed_point_residual(d: &Design, fit: &ConvexFit, lambda: f64, penalty: Penalty) -> Result<f64> {
    let a = fit.coeff.matricize(Mode::One);
    let s = fit.step;
    let p = penalty.prox(&(&a - d.gradient_mat(&a) * s), s * lambda)?;
    Ok((a - p).norm())
}

/// Smallest λ for which zero is a solution: `2‖X'Y‖/T_eff` in the dual norm
/// of the penalty.
pub fn lambda_max(d: &Design, penalty: Penalty) -> Result<f64> {
    let g = d.gram().sxy.transpose() * (2.0 / d.t_eff() as f64);
    Ok(match penalty {
        Penalty::Nuclear => linalg::singular_values(&g)?.first().copied().unwrap_or(0.0),
        Penalty::L1 => linalg::max_abs(&g),
    })
}
