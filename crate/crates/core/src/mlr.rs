//! Multilinear low-rank least squares by alternating least squares, and the
//! asymptotic covariances of the MLR, RRR and OLS estimators.
//!
//! With `h = vec(A₍₁₎)` (column-major), the Tucker map
//! `(G, U₁, U₂, U₃) ↦ h` is linear in each block separately:
//!
//! * `∂h/∂vec(G₍₁₎) = U₃ ⊗ U₂ ⊗ U₁`
//! * `∂h/∂vec(U₁) = (G₍₁₎(U₃ ⊗ U₂)')' ⊗ I_N`
//! * `∂h/∂vec(U₂) = T₂₁ [(G₍₂₎(U₃ ⊗ U₁)')' ⊗ I_N]`
//! * `∂h/∂vec(U₃) = T₃₁ [(G₍₃₎(U₂ ⊗ U₁)')' ⊗ I_P]`
//!
//! where `T_ij` maps `vec(A₍ᵢ₎)` to `vec(A₍ⱼ₎)`. Each ALS step solves the
//! normal equations of one block exactly, and the stacked blocks form the
//! Jacobian used in the asymptotic covariance.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::regression::{self, ConvexOptions, Design};
use crate::tensor3::{hosvd_truncated, permutation_matrix, Mode, Tensor3, TuckerDecomp};
use crate::var_process::{self, autocovariance, seeded_rng, SimRng, VarModel};

/// The quadratic `L(θ) = c − 2 q'θ + θ'Qθ` of the loss restricted to a
/// linear parameterization `h = Kθ`.
#[derive(Debug, Clone)]
pub struct QuadraticLoss {
    pub q_mat: Mat,
    pub q_vec: Vector,
    pub constant: f64,
}

impl QuadraticLoss {
    pub fn from_design(d: &Design, k: &Mat) -> QuadraticLoss {
        let t = d.t_eff() as f64;
        let g = d.gram();
        let sk = apply_gram(&g.sxx, k, d.n());
        let b = linalg::vec(&g.sxy.transpose());
        QuadraticLoss { q_mat: (k.tr_mul(&sk) + sk.tr_mul(k)) * (0.5 / t), q_vec: k.tr_mul(&b) / t, constant: g.syy / t }
    }

    /// Least squares `y ≈ Xθ` with loss `‖y − Xθ‖²`.
    pub fn from_regression(y: &Vector, x: &Mat) -> Result<QuadraticLoss> {
        if x.nrows() != y.len() {
            return Err(Error::Argument(format!("{} responses for {} design rows", y.len(), x.nrows())));
        }
        Ok(QuadraticLoss { q_mat: x.tr_mul(x), q_vec: x.tr_mul(y), constant: y.norm_squared() })
    }

    pub fn dim(&self) -> usize {
        self.q_vec.len()
    }

    pub fn value(&self, theta: &Vector) -> f64 {
        self.constant - 2.0 * self.q_vec.dot(theta) + theta.dot(&(&self.q_mat * theta))
    }

    pub fn gradient(&self, theta: &Vector) -> Vector {
        (&self.q_mat * theta - &self.q_vec) * 2.0
    }

    /// Unconstrained minimizer; the flag reports a ridge fallback.
    pub fn minimize(&self) -> Result<(Vector, bool)> {
        let rhs = Mat::from_column_slice(self.dim(), 1, self.q_vec.as_slice());
        let (sol, ridge) = linalg::solve_spd(&self.q_mat, &rhs)?;
        Ok((sol.column(0).into_owned(), ridge))
    }
}

/// `S̃K` with `S̃ = X'X ⊗ I_N`, i.e. column `c` becomes `vec(mat(k_c)·X'X)`.
fn apply_gram(sxx: &Mat, k: &Mat, n: usize) -> Mat {
    let np = sxx.nrows();
    let m = k.ncols();
    let mut stacked = Mat::zeros(n * m, np);
    for c in 0..m {
        let col = k.column(c);
        for j in 0..np {
            for i in 0..n {
                stacked[(c * n + i, j)] = col[i + n * j];
            }
        }
    }
    let prod = stacked * sxx;
    let mut out = Mat::zeros(n * np, m);
    for c in 0..m {
        for j in 0..np {
            for i in 0..n {
                out[(i + n * j, c)] = prod[(c * n + i, j)];
            }
        }
    }
    out
}

/// The loss restricted to one block of `d`, assembled from the Gram blocks
/// without forming the Jacobian. Matches
/// `QuadraticLoss::from_design(design, &block_jacobian(d, block))`.
pub fn block_quadratic(design: &Design, d: &TuckerDecomp, block: Block) -> Result<QuadraticLoss> {
    let (n, p) = (design.n(), design.p());
    if d.dims() != design.dims() {
        return Err(Error::Argument(format!("decomposition dims {:?} differ from design dims {:?}", d.dims(), design.dims())));
    }
    let t = design.t_eff() as f64;
    let g = design.gram();
    let [u1, u2, u3] = &d.factors;
    let core = &d.core;
    let constant = g.syy / t;
    let (q_mat, q_vec) = match block {
        Block::Core => {
            let w = linalg::kron(u3, u2);
            let left = w.tr_mul(&(&g.sxx * &w));
            let q = linalg::kron(&left, &u1.tr_mul(u1)) / t;
            let lin = linalg::vec(&(u1.tr_mul(&g.sxy.tr_mul(&w)))) / t;
            (q, lin)
        }
        Block::Factor(Mode::One) => {
            let m1 = core.matricize(Mode::One) * linalg::kron(u3, u2).transpose();
            let q = linalg::kron(&(&m1 * &g.sxx * m1.transpose()), &Mat::identity(n, n)) / t;
            (q, linalg::vec(&(g.sxy.transpose() * m1.transpose())) / t)
        }
        Block::Factor(Mode::Two) => {
            // Column block k of M₂ multiplies lag k + 1.
            let m2 = core.matricize(Mode::Two) * linalg::kron(u3, u1).transpose();
            let r2 = m2.nrows();
            let mut q = Mat::zeros(n * r2, n * r2);
            let mut lin = Mat::zeros(n, r2);
            for k in 0..p {
                let mk = m2.columns(n * k, n);
                lin += g.sxy.rows(n * k, n) * mk.transpose();
                for k2 in 0..p {
                    let c = mk * m2.columns(n * k2, n).transpose();
                    q += linalg::kron(&c, &g.sxx.view((n * k, n * k2), (n, n)).into_owned());
                }
            }
            (q / t, linalg::vec(&lin) / t)
        }
        Block::Factor(Mode::Three) => {
            let m3 = core.matricize(Mode::Three) * linalg::kron(u2, u1).transpose();
            let r3 = m3.nrows();
            let rs: Vec<Mat> = (0..r3).map(|c| Mat::from_row_slice(n, n, m3.row(c).transpose().as_slice()).transpose()).collect();
            let mut q = Mat::zeros(p * r3, p * r3);
            let mut lin = Mat::zeros(p, r3);
            for c in 0..r3 {
                for k in 0..p {
                    lin[(k, c)] = (&rs[c] * g.sxy.rows(n * k, n)).trace();
                }
                for c2 in 0..r3 {
                    let rr = rs[c].tr_mul(&rs[c2]);
                    for k in 0..p {
                        for k2 in 0..p {
                            // tr(R_c' R_c2 S_{k2,k})
                            let s = g.sxx.view((n * k2, n * k), (n, n));
                            q[(k + p * c, k2 + p * c2)] = rr.component_mul(&s.transpose()).sum();
                        }
                    }
                }
            }
            (q / t, linalg::vec(&lin) / t)
        }
    };
    let q_mat = (&q_mat + q_mat.transpose()) * 0.5;
    Ok(QuadraticLoss { q_mat, q_vec, constant })
}

/// Parameter blocks of a Tucker decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Core,
    Factor(Mode),
}

/// `∂ vec(A₍₁₎) / ∂ θ` for one parameter block, evaluated at `d`.
pub fn block_jacobian(d: &TuckerDecomp, block: Block) -> Result<Mat> {
    let dims = d.dims();
    let [u1, u2, u3] = &d.factors;
    let g = &d.core;
    Ok(match block {
        Block::Core => linalg::kron(&linalg::kron(u3, u2), u1),
        Block::Factor(Mode::One) => {
            let m1 = g.matricize(Mode::One) * linalg::kron(u3, u2).transpose();
            linalg::kron(&m1.transpose(), &Mat::identity(dims[0], dims[0]))
        }
        Block::Factor(Mode::Two) => {
            let m2 = g.matricize(Mode::Two) * linalg::kron(u3, u1).transpose();
            let k = linalg::kron(&m2.transpose(), &Mat::identity(dims[1], dims[1]));
            permutation_matrix(dims, Mode::Two, Mode::One)?.apply_rows(&k)
        }
        Block::Factor(Mode::Three) => {
            let m3 = g.matricize(Mode::Three) * linalg::kron(u2, u1).transpose();
            let k = linalg::kron(&m3.transpose(), &Mat::identity(dims[2], dims[2]));
            permutation_matrix(dims, Mode::Three, Mode::One)?.apply_rows(&k)
        }
    })
}

/// The full Jacobian `H = [∂h/∂g, ∂h/∂u₁, ∂h/∂u₂, ∂h/∂u₃]`.
pub fn tucker_jacobian(d: &TuckerDecomp) -> Result<Mat> {
    let blocks = [Block::Core, Block::Factor(Mode::One), Block::Factor(Mode::Two), Block::Factor(Mode::Three)];
    let parts: Vec<Mat> = blocks.iter().map(|b| block_jacobian(d, *b)).collect::<Result<_>>()?;
    let rows = parts[0].nrows();
    let cols: usize = parts.iter().map(|p| p.ncols()).sum();
    let mut h = Mat::zeros(rows, cols);
    let mut at = 0;
    for p in parts {
        h.columns_mut(at, p.ncols()).copy_from(&p);
        at += p.ncols();
    }
    Ok(h)
}

/// Number of free parameters of the Tucker model:
/// `r₁r₂r₃ + Σᵢ (pᵢ − rᵢ) rᵢ`.
pub fn tucker_dof(dims: [usize; 3], ranks: [usize; 3]) -> usize {
    ranks[0] * ranks[1] * ranks[2] + (0..3).map(|i| (dims[i] - ranks[i]) * ranks[i]).sum::<usize>()
}

fn set_block(d: &mut TuckerDecomp, block: Block, theta: &Vector) -> Result<()> {
    match block {
        Block::Core => {
            d.core = Tensor3::from_vec(d.core.dims(), theta.as_slice().to_vec())?;
        }
        Block::Factor(mode) => {
            let u = &mut d.factors[mode.index()];
            *u = Mat::from_column_slice(u.nrows(), u.ncols(), theta.as_slice());
        }
    }
    Ok(())
}

fn block_values(d: &TuckerDecomp, block: Block) -> Vector {
    match block {
        Block::Core => Vector::from_column_slice(d.core.data()),
        Block::Factor(mode) => linalg::vec(&d.factors[mode.index()]),
    }
}

/// Starting point of the alternating least squares iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum InitStrategy {
    Ols,
    Rrr,
    /// Nuclear-norm estimate; `None` uses [`default_nn_lambda`].
    Nn(Option<f64>),
    /// Best of several random perturbations of the RRR (or NN) estimate.
    RandomPerturbed { n_starts: usize, seed: u64 },
    Given(Tensor3),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlrOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub init: Option<InitStrategy>,
}

impl Default for MlrOptions {
    fn default() -> Self {
        MlrOptions { tol: 1e-8, max_iter: 500, init: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlrFit {
    pub decomp: TuckerDecomp,
    pub coeff: Tensor3,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Some block subproblem needed the ridge fallback.
    pub ridge_used: bool,
}

impl MlrFit {
    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// `σ̂·√((N + NP)/T_eff)`, where `σ̂` is a robust residual scale (median
/// absolute residual over 0.6745) from a light ridge prefit.
pub fn default_nn_lambda(d: &Design) -> Result<f64> {
    let g = d.gram();
    let np = g.sxx.nrows();
    let alpha = 1e-2 * g.sxx.trace() / np as f64;
    let mut reg = g.sxx.clone();
    for i in 0..np {
        reg[(i, i)] += alpha.max(f64::MIN_POSITIVE);
    }
    let (b, _) = linalg::solve_spd(&reg, &g.sxy)?;
    let res = d.y() - d.x() * b;
    let mut abs: Vec<f64> = res.iter().map(|v| v.abs()).collect();
    abs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let med = abs[abs.len() / 2];
    let sigma = med / 0.6745;
    let n = d.n() as f64;
    Ok(sigma * ((n + n * d.p() as f64) / d.t_eff() as f64).sqrt())
}

pub fn default_init(d: &Design) -> InitStrategy {
    if d.t_eff() >= d.n() * d.p() {
        InitStrategy::Rrr
    } else {
        InitStrategy::Nn(None)
    }
}

fn check_ranks(dims: [usize; 3], ranks: [usize; 3]) -> Result<()> {
    for i in 0..3 {
        if ranks[i] == 0 || ranks[i] > dims[i] {
            return Err(Error::Argument(format!(
                "rank {} in mode {} must lie in 1..={}",
                ranks[i],
                i + 1,
                dims[i]
            )));
        }
    }
    Ok(())
}

/// Initial tensor for a non-random strategy.
pub fn initial_estimate(d: &Design, ranks: [usize; 3], strategy: &InitStrategy) -> Result<Tensor3> {
    match strategy {
        InitStrategy::Ols => regression::fit_ols(d),
        InitStrategy::Rrr => regression::fit_rrr(d, ranks[0]),
        InitStrategy::Nn(lambda) => {
            let l = match lambda {
                Some(l) => *l,
                None => default_nn_lambda(d)?,
            };
            Ok(regression::fit_nn(d, l, &ConvexOptions { tol: 1e-6, ..ConvexOptions::default() })?.coeff)
        }
        InitStrategy::Given(t) => {
            if t.dims() != d.dims() {
                return Err(Error::Argument(format!("initial tensor has dims {:?}, expected {:?}", t.dims(), d.dims())));
            }
            Ok(t.clone())
        }
        InitStrategy::RandomPerturbed { .. } => Err(Error::Argument("random starts are drawn by the multistart driver".into())),
    }
}

/// `pre + scale·𝒯ₖ` for `n_starts` standard normal tensors `𝒯ₖ`.
pub fn perturbed_starts(pre: &Tensor3, scale: f64, n_starts: usize, rng: &mut SimRng) -> Result<Vec<Tensor3>> {
    if n_starts == 0 {
        return Err(Error::Argument("at least one start is required".into()));
    }
    Ok((0..n_starts)
        .map(|_| {
            let z = Tensor3::from_fn(pre.dims(), |_, _, _| StandardNormal.sample(rng));
            pre.add(&z.scaled(scale)).expect("same dims")
        })
        .collect())
}

/// Random initial values `pre + T_eff^{−1/2}·𝒯ₖ`.
pub fn random_perturbed_init(pre: &Tensor3, t_eff: usize, n_starts: usize, seed: u64) -> Result<Vec<Tensor3>> {
    if t_eff == 0 {
        return Err(Error::Argument("T_eff must be positive".into()));
    }
    perturbed_starts(pre, 1.0 / (t_eff as f64).sqrt(), n_starts, &mut seeded_rng(seed))
}

/// Alternating least squares for the multilinear low-rank estimator.
pub fn fit_mlr(d: &Design, ranks: [usize; 3], opts: &MlrOptions) -> Result<MlrFit> {
    check_ranks(d.dims(), ranks)?;
    let strategy = opts.init.clone().unwrap_or_else(|| default_init(d));
    if let InitStrategy::RandomPerturbed { n_starts, seed } = strategy {
        let base = if d.t_eff() >= d.n() * d.p() { InitStrategy::Rrr } else { InitStrategy::Nn(None) };
        let pre = initial_estimate(d, ranks, &base)?;
        let starts = random_perturbed_init(&pre, d.t_eff(), n_starts, seed)?;
        return fit_mlr_multistart(d, ranks, &starts, opts);
    }
    let init = initial_estimate(d, ranks, &strategy)?;
    fit_mlr_from(d, ranks, &init, opts)
}

/// Fits from every start and keeps the smallest final objective.
pub fn fit_mlr_multistart(d: &Design, ranks: [usize; 3], starts: &[Tensor3], opts: &MlrOptions) -> Result<MlrFit> {
    let fits: Vec<Result<MlrFit>> = starts.par_iter().map(|s| fit_mlr_from(d, ranks, s, opts)).collect();
    let mut best: Option<MlrFit> = None;
    let mut last_err = None;
    for f in fits {
        match f {
            Ok(f) => {
                if best.as_ref().is_none_or(|b| f.objective() < b.objective()) {
                    best = Some(f);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::Argument("no starting values".into())))
}

/// Alternating least squares from a given initial tensor.
pub fn fit_mlr_from(d: &Design, ranks: [usize; 3], init: &Tensor3, opts: &MlrOptions) -> Result<MlrFit> {
    check_ranks(d.dims(), ranks)?;
    if init.dims() != d.dims() {
        return Err(Error::Argument(format!("initial tensor has dims {:?}, expected {:?}", init.dims(), d.dims())));
    }
    let mut decomp = hosvd_truncated(init, ranks)?;
    let mut trace = vec![d.loss(&decomp.reconstruct()?)];
    let order = [Block::Factor(Mode::One), Block::Factor(Mode::Two), Block::Factor(Mode::Three), Block::Core];
    let mut ridge_used = false;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        for block in order {
            let ql = block_quadratic(d, &decomp, block)?;
            let (theta, ridge) = ql.minimize()?;
            // Keep the current block if rounding made the new one worse.
            if ql.value(&theta) <= ql.value(&block_values(&decomp, block)) {
                set_block(&mut decomp, block, &theta)?;
            }
            ridge_used |= ridge;
        }
        let obj = d.loss(&decomp.reconstruct()?);
        let prev = *trace.last().expect("nonempty trace");
        trace.push(obj);
        if (prev - obj).abs() <= opts.tol * prev.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    if ridge_used {
        log::warn!("ALS block subproblem was rank deficient; ridge fallback used");
    }
    let decomp = hosvd_truncated(&decomp.reconstruct()?, ranks)?;
    let coeff = decomp.reconstruct()?;
    Ok(MlrFit { decomp, coeff, objective_trace: trace, iterations, converged, ridge_used })
}

/// Asymptotic covariances of `√T·vec(Â₍₁₎ − A₍₁₎)`.
#[derive(Debug, Clone)]
pub struct AsymptoticCov {
    pub sigma_mlr: Mat,
    pub sigma_rrr: Mat,
    pub sigma_ols: Mat,
    pub h: Mat,
    pub j: Mat,
}

impl AsymptoticCov {
    /// `H(H'JH)†H'J`, the `J`-orthogonal projection onto the tangent space.
    pub fn projection(&self) -> Mat {
        &self.sigma_mlr * &self.j
    }
}

fn sandwich(jac: &Mat, info: &Mat) -> Result<Mat> {
    let inner = jac.tr_mul(&(info * jac));
    let inner = (&inner + inner.transpose()) * 0.5;
    let s = jac * linalg::pinv(&inner, None)? * jac.transpose();
    Ok((&s + s.transpose()) * 0.5)
}

/// Covariances at the true parameters. `vec` is column-major, so the
/// information matrix is `J = Γ* ⊗ Σ_ε⁻¹` and `Σ_OLS = Γ*⁻¹ ⊗ Σ_ε`.
pub fn asymptotic_cov(model: &VarModel, decomp: &TuckerDecomp, r1_for_rrr: usize) -> Result<AsymptoticCov> {
    let dims = model.coeff().dims();
    if decomp.dims() != dims {
        return Err(Error::Argument(format!("decomposition dims {:?} differ from model dims {dims:?}", decomp.dims())));
    }
    let recon = decomp.reconstruct()?;
    if recon.sub(model.coeff())?.frobenius_norm() > 1e-8 * (1.0 + model.coeff().frobenius_norm()) {
        return Err(Error::Argument("decomposition does not reproduce the model coefficients".into()));
    }
    let n = dims[0];
    if r1_for_rrr == 0 || r1_for_rrr > n {
        return Err(Error::Argument(format!("RRR rank must lie in 1..={n}")));
    }
    let ac = autocovariance(model, dims[2])?;
    let sigma_inv = model
        .sigma_eps()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("innovation covariance is not positive definite".into()))?
        .inverse();
    let j = linalg::kron(&ac.gamma_star, &sigma_inv);
    let gamma_inv = ac
        .gamma_star
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("stacked autocovariance is not positive definite".into()))?
        .inverse();
    let sigma_ols = linalg::kron(&gamma_inv, model.sigma_eps());
    let h = tucker_jacobian(decomp)?;
    let sigma_mlr = sandwich(&h, &j)?;
    let a1 = model.coeff().matricize(Mode::One);
    let s = linalg::svd(&a1)?;
    let u = s.u.columns(0, r1_for_rrr).into_owned();
    let b = Mat::from_diagonal(&Vector::from_row_slice(&s.singular_values[..r1_for_rrr])) * s.v.columns(0, r1_for_rrr).transpose();
    let np = a1.ncols();
    let ru = linalg::kron(&b.transpose(), &Mat::identity(n, n));
    let rb = linalg::kron(&Mat::identity(np, np), &u);
    let mut r = Mat::zeros(n * np, ru.ncols() + rb.ncols());
    r.columns_mut(0, ru.ncols()).copy_from(&ru);
    r.columns_mut(ru.ncols(), rb.ncols()).copy_from(&rb);
    let sigma_rrr = sandwich(&r, &j)?;
    Ok(AsymptoticCov { sigma_mlr, sigma_rrr, sigma_ols, h, j })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LowDimEstimator {
    Ols,
    Rrr,
    Mlr,
}

impl LowDimEstimator {
    pub const ALL: [LowDimEstimator; 3] = [LowDimEstimator::Ols, LowDimEstimator::Rrr, LowDimEstimator::Mlr];

    pub fn name(self) -> &'static str {
        match self {
            LowDimEstimator::Ols => "ols",
            LowDimEstimator::Rrr => "rrr",
            LowDimEstimator::Mlr => "mlr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSummary {
    pub estimator: LowDimEstimator,
    /// Mean over elements of the squared Monte Carlo bias of `Â`.
    #[serde(with = "crate::serde_nan")]
    pub squared_bias: f64,
    /// Mean over elements of the Monte Carlo variance of `√T·vec(Â₍₁₎)`.
    #[serde(with = "crate::serde_nan")]
    pub evar: f64,
    /// Mean diagonal of the asymptotic covariance.
    pub avar: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub t: usize,
    pub reps: usize,
    pub summaries: Vec<VarianceSummary>,
}

impl VarianceReport {
    pub fn get(&self, e: LowDimEstimator) -> &VarianceSummary {
        self.summaries.iter().find(|s| s.estimator == e).expect("every estimator is summarized")
    }
}

/// Per-replication seed: a splitmix64 hash of the base seed and the index.
pub fn replication_seed(seed: u64, rep: u64) -> u64 {
    let mut z = seed ^ rep.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Monte Carlo variances of OLS, RRR and MLR against their asymptotic values.
/// The asymptotic covariances are evaluated at the true parameters.
pub fn empirical_vs_asymptotic(dgp: &VarModel, ranks: [usize; 3], t: usize, reps: usize, seed: u64) -> Result<VarianceReport> {
    if reps < 50 {
        return Err(Error::Argument(format!("at least 50 replications are required, got {reps}")));
    }
    let decomp = match dgp.decomp() {
        Some(dc) => dc.clone(),
        None => hosvd_truncated(dgp.coeff(), ranks)?,
    };
    let cov = asymptotic_cov(dgp, &decomp, ranks[0])?;
    let p = dgp.p();
    let opts = MlrOptions { init: Some(InitStrategy::Rrr), ..MlrOptions::default() };
    let draws: Vec<[Option<Vector>; 3]> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let s = replication_seed(seed, rep as u64);
            let fits = (|| -> Result<[Option<Vector>; 3]> {
                let ts = var_process::simulate(dgp, t, var_process::DEFAULT_BURN_IN, s)?;
                let d = regression::build_design(&ts, p)?;
                let mut out: [Option<Vector>; 3] = [None, None, None];
                out[0] = regression::fit_ols(&d).ok().map(|c| linalg::vec(&c.matricize(Mode::One)));
                out[1] = regression::fit_rrr(&d, ranks[0]).ok().map(|c| linalg::vec(&c.matricize(Mode::One)));
                out[2] = fit_mlr(&d, ranks, &opts).ok().map(|f| linalg::vec(&f.coeff.matricize(Mode::One)));
                Ok(out)
            })();
            fits.unwrap_or([None, None, None])
        })
        .collect();
    let truth = linalg::vec(&dgp.coeff().matricize(Mode::One));
    let scale = (t as f64).sqrt();
    let mut summaries = Vec::new();
    for (idx, est) in LowDimEstimator::ALL.iter().enumerate() {
        let ok: Vec<&Vector> = draws.iter().filter_map(|d| d[idx].as_ref()).collect();
        let failures = reps - ok.len();
        let avar_mat = match est {
            LowDimEstimator::Ols => &cov.sigma_ols,
            LowDimEstimator::Rrr => &cov.sigma_rrr,
            LowDimEstimator::Mlr => &cov.sigma_mlr,
        };
        let avar = avar_mat.diagonal().mean();
        if ok.len() < 2 {
            summaries.push(VarianceSummary { estimator: *est, squared_bias: f64::NAN, evar: f64::NAN, avar, failures });
            continue;
        }
        let m = ok.len() as f64;
        let mut mean = Vector::zeros(truth.len());
        for v in &ok {
            mean += *v;
        }
        mean /= m;
        let mut var = Vector::zeros(truth.len());
        for v in &ok {
            let dv = *v - &mean;
            var += dv.component_mul(&dv);
        }
        var *= scale * scale / (m - 1.0);
        let bias = &mean - &truth;
        summaries.push(VarianceSummary {
            estimator: *est,
            squared_bias: bias.component_mul(&bias).mean(),
            evar: var.mean(),
            avar,
            failures,
        });
    }
    Ok(VarianceReport { t, reps, summaries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_matrix, random_tensor, rng};
    use crate::var_process::{make_dgp, DgpSpec};

    fn random_decomp(seed: u64, dims: [usize; 3], ranks: [usize; 3]) -> TuckerDecomp {
        let mut r = rng(seed);
        let core = random_tensor(&mut r, ranks);
        let f = [random_matrix(&mut r, dims[0], ranks[0]), random_matrix(&mut r, dims[1], ranks[1]), random_matrix(&mut r, dims[2], ranks[2])];
        TuckerDecomp::new(core, f).unwrap()
    }

    #[test]
    fn jacobian_blocks_match_finite_differences() {
        let d = random_decomp(1, [3, 3, 2], [2, 2, 2]);
        let base = linalg::vec(&d.reconstruct().unwrap().matricize(Mode::One));
        let blocks = [Block::Core, Block::Factor(Mode::One), Block::Factor(Mode::Two), Block::Factor(Mode::Three)];
        for block in blocks {
            let k = block_jacobian(&d, block).unwrap();
            let theta = block_values(&d, block);
            for c in 0..theta.len() {
                let mut moved = d.clone();
                let mut th = theta.clone();
                th[c] += 1e-6;
                set_block(&mut moved, block, &th).unwrap();
                let h = linalg::vec(&moved.reconstruct().unwrap().matricize(Mode::One));
                let fd = (h - &base) / 1e-6;
                assert!((fd - k.column(c)).amax() < 1e-6, "{block:?} column {c}");
            }
            // The map is linear in each block separately.
            let lin = &k * &theta;
            assert!((lin - &base).amax() < 1e-12);
        }
    }

    #[test]
    fn jacobian_rank_equals_parameter_count() {
        let dims = [4, 4, 3];
        let ranks = [2, 2, 2];
        let h = tucker_jacobian(&random_decomp(2, dims, ranks)).unwrap();
        assert_eq!(h.ncols(), 8 + 8 + 8 + 6);
        assert_eq!(linalg::numerical_rank(&h, 1e-10).unwrap(), tucker_dof(dims, ranks));
    }

    #[test]
    fn gram_application_matches_kronecker() {
        let mut r = rng(3);
        let x = random_matrix(&mut r, 20, 6);
        let sxx = x.transpose() * &x;
        let k = random_matrix(&mut r, 18, 4);
        let want = linalg::kron(&sxx, &Mat::identity(3, 3)) * &k;
        assert!((apply_gram(&sxx, &k, 3) - want).amax() < 1e-10);
    }

    #[test]
    fn quadratic_loss_matches_design_loss() {
        let dgp = make_dgp(&DgpSpec::ScaledRandomCore { n: 4, p: 2, ranks: [2, 2, 2] }, 4).unwrap();
        let m = dgp.var_model().unwrap();
        let ts = var_process::simulate(m, 80, 50, 5).unwrap();
        let d = regression::build_design(&ts, 2).unwrap();
        let dc = m.decomp().unwrap();
        let k = block_jacobian(dc, Block::Factor(Mode::Two)).unwrap();
        let ql = QuadraticLoss::from_design(&d, &k);
        let theta = block_values(dc, Block::Factor(Mode::Two));
        assert!((ql.value(&theta) - d.loss(m.coeff())).abs() < 1e-10);
    }

    #[test]
    fn scale_indeterminacy_leaves_reconstruction_unchanged() {
        let d = random_decomp(6, [4, 4, 3], [2, 2, 2]);
        let mut r = rng(7);
        let o: Vec<Mat> = (0..3).map(|_| random_matrix(&mut r, 2, 2) + Mat::identity(2, 2) * 3.0).collect();
        let core = d.core.mode_product(&o[0], Mode::One).unwrap().mode_product(&o[1], Mode::Two).unwrap().mode_product(&o[2], Mode::Three).unwrap();
        let f: Vec<Mat> = (0..3).map(|i| &d.factors[i] * o[i].clone().try_inverse().unwrap()).collect();
        let other = TuckerDecomp::new(core, [f[0].clone(), f[1].clone(), f[2].clone()]).unwrap();
        let diff = other.reconstruct().unwrap().sub(&d.reconstruct().unwrap()).unwrap();
        assert!(diff.frobenius_norm() < 1e-10);
    }

    #[test]
    fn replication_seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|r| replication_seed(42, r)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_eq!(replication_seed(1, 2), replication_seed(1, 2));
    }

    fn case(seed: u64, t: usize, noise: f64) -> (VarModel, Design) {
        let dgp = make_dgp(&DgpSpec::ScaledRandomCore { n: 5, p: 3, ranks: [2, 2, 2] }, seed).unwrap();
        let m = dgp.var_model().unwrap().clone();
        let opts = var_process::SimulateOptions { burn_in: 100, noise_scale: noise };
        let ts = var_process::simulate_with(&m, t, opts, &mut seeded_rng(seed + 1)).unwrap();
        let d = regression::build_design(&ts, 3).unwrap();
        (m, d)
    }

    #[test]
    fn als_trace_is_monotone_and_finalized() {
        let (_, d) = case(11, 300, 1.0);
        for init in [InitStrategy::Ols, InitStrategy::Rrr, InitStrategy::Nn(None)] {
            let fit = fit_mlr(&d, [2, 2, 2], &MlrOptions { init: Some(init), ..Default::default() }).unwrap();
            for w in fit.objective_trace.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-10));
            }
            for u in &fit.decomp.factors {
                assert!(linalg::orthonormality_error(u) < 1e-10);
            }
            assert_eq!(crate::tensor3::multilinear_ranks(&fit.coeff, 1e-8).unwrap(), [2, 2, 2]);
            assert!(fit.converged);
        }
    }

    #[test]
    fn als_recovers_noiseless_low_rank_tensor() {
        let (m, d) = case(12, 200, 1.0);
        let exact = m.coeff().clone();
        let mut y = d.y().clone();
        let fitted = d.x() * exact.matricize(Mode::One).transpose();
        y.copy_from(&fitted);
        let clean = Design::from_parts(y, d.x().clone(), d.p()).unwrap();
        let fit = fit_mlr(&clean, [2, 2, 2], &MlrOptions { init: Some(InitStrategy::Ols), ..Default::default() }).unwrap();
        assert!(fit.coeff.sub(&exact).unwrap().frobenius_norm() < 1e-6 * exact.frobenius_norm());
    }

    #[test]
    fn multistart_is_no_worse_than_its_starts() {
        let (_, d) = case(13, 150, 1.0);
        let pre = regression::fit_rrr(&d, 2).unwrap();
        let starts = random_perturbed_init(&pre, d.t_eff(), 3, 9).unwrap();
        let best = fit_mlr_multistart(&d, [2, 2, 2], &starts, &MlrOptions::default()).unwrap();
        for s in &starts {
            let f = fit_mlr_from(&d, [2, 2, 2], s, &MlrOptions::default()).unwrap();
            assert!(best.objective() <= f.objective() + 1e-14);
        }
        let zero = perturbed_starts(&pre, 0.0, 2, &mut seeded_rng(1)).unwrap();
        assert_eq!(zero[0], pre);
    }

    #[test]
    fn rejects_bad_ranks() {
        let (_, d) = case(14, 100, 1.0);
        assert!(matches!(fit_mlr(&d, [0, 2, 2], &MlrOptions::default()), Err(Error::Argument(_))));
        assert!(matches!(fit_mlr(&d, [2, 6, 2], &MlrOptions::default()), Err(Error::Argument(_))));
    }

    #[test]
    fn covariance_ordering_and_projection() {
        let dgp = make_dgp(&DgpSpec::ScaledRandomCore { n: 5, p: 3, ranks: [2, 2, 2] }, 21).unwrap();
        let m = dgp.var_model().unwrap();
        let cov = asymptotic_cov(m, m.decomp().unwrap(), 2).unwrap();
        let scale = cov.sigma_ols.diagonal().amax();
        assert!(linalg::min_eigenvalue(&(&cov.sigma_rrr - &cov.sigma_mlr)) >= -1e-8 * scale);
        assert!(linalg::min_eigenvalue(&(&cov.sigma_ols - &cov.sigma_rrr)) >= -1e-8 * scale);
        let pr = cov.projection();
        assert!((&pr * &pr - &pr).amax() < 1e-8);
        let hjh = cov.h.transpose() * &cov.j * &cov.h;
        assert_eq!(linalg::numerical_rank(&hjh, 1e-9).unwrap(), tucker_dof([5, 5, 3], [2, 2, 2]));
        // Σ_OLS is the inverse of the information matrix.
        let id = &cov.sigma_ols * &cov.j;
        assert!((id - Mat::identity(75, 75)).amax() < 1e-8);
    }

    #[test]
    fn ols_covariance_matches_sample_gram() {
        let (m, d) = case(22, 20000, 1.0);
        let cov = asymptotic_cov(&m, m.decomp().unwrap(), 2).unwrap();
        let g = d.gram();
        let t = d.t_eff() as f64;
        let j_hat = linalg::kron(&(&g.sxx / t), &m.sigma_eps().clone().try_inverse().unwrap());
        assert!((j_hat - &cov.j).amax() < 0.1 * cov.j.amax());
    }

    #[test]
    fn rrr_and_mlr_covariances_shrink_with_rank() {
        let dgp = make_dgp(&DgpSpec::ScaledRandomCore { n: 5, p: 3, ranks: [2, 2, 2] }, 23).unwrap();
        let m = dgp.var_model().unwrap();
        let cov = asymptotic_cov(m, m.decomp().unwrap(), 2).unwrap();
        assert!(cov.sigma_mlr.trace() < cov.sigma_rrr.trace());
        assert!(cov.sigma_rrr.trace() < cov.sigma_ols.trace());
    }

    #[test]
    fn structured_block_quadratics_match_jacobian_form() {
        let (_, d) = case(31, 60, 1.0);
        let dc = random_decomp(32, [5, 5, 3], [2, 3, 2]);
        for block in [Block::Core, Block::Factor(Mode::One), Block::Factor(Mode::Two), Block::Factor(Mode::Three)] {
            let want = QuadraticLoss::from_design(&d, &block_jacobian(&dc, block).unwrap());
            let got = block_quadratic(&d, &dc, block).unwrap();
            let scale = want.q_mat.amax();
            assert!((got.q_mat - &want.q_mat).amax() < 1e-10 * scale, "{block:?}");
            assert!((got.q_vec - &want.q_vec).amax() < 1e-10 * scale, "{block:?}");
        }
    }
}
