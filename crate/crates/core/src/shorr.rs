//! Sparse higher-order reduced-rank estimation.
//!
//! The outer ADMM alternates sparse orthonormal factor updates with a core
//! update that is tied to diagonal-times-orthonormal splittings
//! `G₍ᵢ₎ ≈ DᵢVᵢ'`, which enforce the all-orthogonal core. Each factor
//! update is itself an ADMM over an orthonormal iterate `B` and a sparse
//! surrogate `W`, with the orthogonality-constrained `B`-step solved by
//! splitting (least squares, then a Procrustes projection).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::mlr::{self, block_quadratic, Block, InitStrategy, QuadraticLoss};
use crate::regression::{soft_threshold_mat, Design};
use crate::tensor3::{hosvd_truncated, Mode, Tensor3, TuckerDecomp};
use crate::var_process::seeded_rng;

/// Entries of the reported factors below this magnitude are set to zero.
pub const SUPPORT_CUTOFF: f64 = 1e-8;

const SOC_TOL: f64 = 1e-8;

/// `argmin_{B'B=I} ‖B − C‖_F = UV'` from the thin SVD `C = UΣV'`.
pub fn procrustes(c: &Mat) -> Result<Mat> {
    Ok(procrustes_flagged(c)?.0)
}

/// Procrustes projection; the flag reports a rank-deficient input, in which
/// case the frame is not unique.
pub fn procrustes_flagged(c: &Mat) -> Result<(Mat, bool)> {
    if c.nrows() < c.ncols() {
        return Err(Error::Argument(format!("procrustes needs rows >= columns, got {}x{}", c.nrows(), c.ncols())));
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entries in procrustes input".into()));
    }
    let svd = linalg::svd(c)?;
    let top = svd.singular_values.first().copied().unwrap_or(0.0);
    let low = svd.singular_values.last().copied().unwrap_or(0.0);
    let deficient = top == 0.0 || low <= top * 1e-12;
    Ok((svd.u * svd.v.transpose(), deficient))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShorrOptions {
    /// Augmentation weights ϱᵢ of the core splittings.
    pub rho: [f64; 3],
    /// Augmentation weight κ of the sparse surrogate.
    pub kappa: f64,
    /// Weight of the Procrustes splitting inside the `B`-step.
    pub soc_rho: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub soc_max_iter: usize,
}

impl Default for ShorrOptions {
    fn default() -> Self {
        ShorrOptions {
            rho: [1.0; 3],
            kappa: 4.0,
            soc_rho: 5.0,
            tol: 1e-6,
            max_iter: 500,
            inner_tol: 1e-6,
            inner_max_iter: 100,
            soc_max_iter: 50,
        }
    }
}

impl ShorrOptions {
    fn validate(&self) -> Result<()> {
        let positive = self.rho.iter().all(|r| *r > 0.0) && self.kappa > 0.0 && self.soc_rho > 0.0;
        if !positive || !(self.tol > 0.0) || !(self.inner_tol > 0.0) {
            return Err(Error::Argument("augmentation weights and tolerances must be positive".into()));
        }
        if self.max_iter == 0 || self.inner_max_iter == 0 || self.soc_max_iter == 0 {
            return Err(Error::Argument("iteration limits must be positive".into()));
        }
        Ok(())
    }
}

/// State of the sparse-orthogonal regression ADMM.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOrthState {
    pub b: Mat,
    pub w: Mat,
    pub m: Mat,
    pub kappa: f64,
    /// Dual of the Procrustes splitting, carried between `B`-steps.
    pub soc_dual: Mat,
}

impl SparseOrthState {
    pub fn new(start: &Mat, kappa: f64) -> Self {
        let zeros = Mat::zeros(start.nrows(), start.ncols());
        SparseOrthState { b: start.clone(), w: start.clone(), m: zeros.clone(), kappa, soc_dual: zeros }
    }
}

#[derive(Debug, Clone)]
pub struct SparseOrthFit {
    /// `W` re-orthonormalized on its own support.
    pub u: Mat,
    pub state: SparseOrthState,
    pub iterations: usize,
    pub converged: bool,
    pub primal_residual: f64,
}

/// Orthonormal frame supported within the nonzero pattern of `w`.
///
/// A few rounds of alternating Procrustes projection and masking spread the
/// correction over all columns; a Gram-Schmidt pass restricted to each
/// column's support then makes the frame exactly orthonormal.
pub fn orthonormalize_on_support(w: &Mat) -> Result<Mat> {
    let (rows, cols) = w.shape();
    let mut mask: Vec<bool> = w.iter().map(|v| v.abs() >= SUPPORT_CUTOFF).collect();
    let mut x = w.clone();
    for (v, keep) in x.iter_mut().zip(&mask) {
        if !keep {
            *v = 0.0;
        }
    }
    for _ in 0..100 {
        if linalg::orthonormality_error(&x) < 1e-13 {
            break;
        }
        let mut p = procrustes(&x)?;
        for (v, keep) in p.iter_mut().zip(mask.iter_mut()) {
            if !*keep || v.abs() < SUPPORT_CUTOFF {
                *keep = false;
                *v = 0.0;
            }
        }
        x = p;
    }
    let mut out = Mat::zeros(rows, cols);
    for j in 0..cols {
        let support: Vec<usize> = (0..rows).filter(|&i| x[(i, j)] != 0.0).collect();
        let mut v = Vector::from_iterator(support.len(), support.iter().map(|&i| x[(i, j)]));
        for _ in 0..2 {
            for k in 0..j {
                let prev = Vector::from_iterator(support.len(), support.iter().map(|&i| out[(i, k)]));
                let pn = prev.norm_squared();
                if pn > 0.0 {
                    v -= &prev * (prev.dot(&v) / pn);
                }
            }
        }
        let norm = v.norm();
        if norm <= 1e-12 {
            return Err(Error::Numerical(format!("column {} has no room on its support", j + 1)));
        }
        for (idx, &i) in support.iter().enumerate() {
            out[(i, j)] = v[idx] / norm;
        }
    }
    Ok(out)
}

struct BStep {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl BStep {
    fn new(loss: &QuadraticLoss, kappa: f64, soc_rho: f64) -> Result<Self> {
        let mut a = loss.q_mat.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += kappa + soc_rho;
        }
        let chol = a.cholesky().ok_or_else(|| Error::Numerical("B-step system is not positive definite".into()))?;
        Ok(BStep { chol })
    }
}

/// `argmin_{B'B=I} f(B) + κ‖B − Z‖²` by splitting: the iterate is first solved
/// without the constraint, then projected.
fn soc_solve(loss: &QuadraticLoss, step: &BStep, z: &Mat, start: &Mat, dual: &mut Mat, kappa: f64, opts: &ShorrOptions) -> Result<Mat> {
    let (rows, cols) = z.shape();
    let mut p = start.clone();
    let base = &loss.q_vec + linalg::vec(z) * kappa;
    for _ in 0..opts.soc_max_iter {
        let rhs = &base + linalg::vec(&(&p - &*dual)) * opts.soc_rho;
        let b = linalg::unvec(step.chol.solve(&rhs).as_slice(), rows, cols);
        let p_new = procrustes(&(&b + &*dual))?;
        *dual += &b - &p_new;
        let gap = (&b - &p_new).norm();
        let moved = (&p_new - &p).norm();
        p = p_new;
        if gap < SOC_TOL && moved < SOC_TOL {
            break;
        }
    }
    Ok(p)
}

/// Minimizes `f(B) + λ‖B‖₁` over orthonormal `B` with `f` given as a
/// quadratic in `vec(B)`. The state is updated in place, so repeated calls
/// warm start from the previous solution.
pub fn solve_sparse_orthogonal(
    loss: &QuadraticLoss,
    lambda: f64,
    state: &mut SparseOrthState,
    opts: &ShorrOptions,
) -> Result<SparseOrthFit> {
    let (rows, cols) = state.b.shape();
    if rows < cols || loss.dim() != rows * cols {
        return Err(Error::Argument(format!("loss of dimension {} does not fit a {rows}x{cols} frame", loss.dim())));
    }
    if !(lambda >= 0.0) || !(state.kappa > 0.0) {
        return Err(Error::Argument("penalty must be nonnegative and kappa positive".into()));
    }
    let kappa = state.kappa;
    let step = BStep::new(loss, kappa, opts.soc_rho)?;
    let threshold = lambda / (2.0 * kappa);
    let objective = |b: &Mat, w: &Mat| loss.value(&linalg::vec(b)) + lambda * linalg::l1_norm(w);
    let mut prev = objective(&state.b, &state.w);
    let mut converged = false;
    let mut iterations = 0;
    let mut primal = (&state.b - &state.w).norm();
    while iterations < opts.inner_max_iter {
        iterations += 1;
        let z = &state.w - &state.m;
        state.b = soc_solve(loss, &step, &z, &state.b.clone(), &mut state.soc_dual, kappa, opts)?;
        let shifted = &state.b + &state.m;
        let mut w = soft_threshold_mat(&shifted, threshold);
        for j in 0..cols {
            if w.column(j).iter().all(|v| *v == 0.0) {
                // Keep the dominant coordinate rather than lose the column.
                let (k, _) = shifted.column(j).iter().enumerate().fold((0, -1.0), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
                w[(k, j)] = shifted[(k, j)];
            }
        }
        state.w = w;
        state.m += &state.b - &state.w;
        primal = (&state.b - &state.w).norm();
        let obj = objective(&state.b, &state.w);
        let rel = (prev - obj).abs() / prev.abs().max(1e-12);
        prev = obj;
        if primal < opts.inner_tol && rel < opts.inner_tol {
            converged = true;
            break;
        }
    }
    let u = orthonormalize_on_support(&state.w)?;
    Ok(SparseOrthFit { u, state: state.clone(), iterations, converged, primal_residual: primal })
}

/// Sparse orthonormal least squares `min n⁻¹‖y − X vec(B)‖² + λ‖B‖₁`,
/// `B'B = I`, started from the leading frame of the unconstrained solution.
pub fn sparse_orthogonal_regress(
    y: &Vector,
    x: &Mat,
    shape: (usize, usize),
    lambda: f64,
    kappa: f64,
    opts: &ShorrOptions,
) -> Result<SparseOrthFit> {
    let (rows, cols) = shape;
    if x.ncols() != rows * cols || rows < cols || cols == 0 {
        return Err(Error::Argument(format!("design with {} columns does not match shape {rows}x{cols}", x.ncols())));
    }
    let n = y.len() as f64;
    let mut loss = QuadraticLoss::from_regression(y, x)?;
    loss.q_mat /= n;
    loss.q_vec /= n;
    loss.constant /= n;
    let (ls, _) = loss.minimize()?;
    let start = procrustes(&linalg::unvec(ls.as_slice(), rows, cols))?;
    let mut state = SparseOrthState::new(&start, kappa);
    solve_sparse_orthogonal(&loss, lambda, &mut state, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShorrFit {
    pub decomp: TuckerDecomp,
    pub coeff: Tensor3,
    pub lambda: f64,
    /// Penalized objective `L(𝒜) + λ∏‖Uᵢ‖₁` after every outer iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `maxᵢ ‖G₍ᵢ₎ − DᵢVᵢ'‖_F` at termination.
    pub primal_residual: f64,
    /// Nonzero counts of `Û₁, Û₂, Û₃`.
    pub factor_nonzeros: [usize; 3],
}

impl ShorrFit {
    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }

    /// Support pattern of `Ûᵢ`.
    pub fn support(&self, mode: Mode) -> Vec<bool> {
        self.decomp.factors[mode.index()].iter().map(|v| *v != 0.0).collect()
    }

    /// Nonzeros of `Ĝ, Û₁, Û₂, Û₃`, the degrees-of-freedom proxy.
    pub fn nonzeros(&self) -> usize {
        self.decomp.core.l0_norm() + self.factor_nonzeros.iter().sum::<usize>()
    }

    /// Largest `|⟨gₐ, g_b⟩| / (‖gₐ‖‖g_b‖)` over distinct rows of each `Ĝ₍ᵢ₎`.
    pub fn core_row_coherence(&self) -> f64 {
        row_coherence(&self.decomp.core)
    }
}

pub fn row_coherence(core: &Tensor3) -> f64 {
    let mut worst: f64 = 0.0;
    for mode in Mode::ALL {
        let g = core.matricize(mode);
        let gram = &g * g.transpose();
        for a in 0..gram.nrows() {
            for b in 0..a {
                let denom = (gram[(a, a)] * gram[(b, b)]).sqrt();
                if denom > 0.0 {
                    worst = worst.max(gram[(a, b)].abs() / denom);
                }
            }
        }
    }
    worst
}

/// `λ·∏ᵢ‖Uᵢ‖₁ = λ‖U₃ ⊗ U₂ ⊗ U₁‖₁`.
pub fn joint_penalty(lambda: f64, factors: &[Mat; 3]) -> f64 {
    lambda * factors.iter().map(linalg::l1_norm).product::<f64>()
}

struct Splitting {
    d: Vector,
    v: Mat,
    c: Mat,
}

fn penalized_objective(design: &Design, decomp: &TuckerDecomp, lambda: f64) -> Result<f64> {
    Ok(design.loss(&decomp.reconstruct()?) + joint_penalty(lambda, &decomp.factors))
}

/// Sparse higher-order reduced-rank fit at penalty `λ`.
pub fn fit_shorr(design: &Design, ranks: [usize; 3], lambda: f64, init: &InitStrategy, opts: &ShorrOptions) -> Result<ShorrFit> {
    let start = match init {
        InitStrategy::RandomPerturbed { n_starts, seed } => {
            return shorr_multistart(design, ranks, lambda, *n_starts, *seed, opts);
        }
        other => mlr::initial_estimate(design, ranks, other)?,
    };
    fit_shorr_from(design, ranks, lambda, &start, opts)
}

/// Sparse higher-order reduced-rank fit from an initial tensor.
pub fn fit_shorr_from(design: &Design, ranks: [usize; 3], lambda: f64, init: &Tensor3, opts: &ShorrOptions) -> Result<ShorrFit> {
    opts.validate()?;
    if !(lambda >= 0.0) {
        return Err(Error::Argument(format!("penalty must be nonnegative, got {lambda}")));
    }
    let dims = design.dims();
    for i in 0..3 {
        if ranks[i] == 0 || ranks[i] > dims[i] {
            return Err(Error::Argument(format!("rank {} in mode {} must lie in 1..={}", ranks[i], i + 1, dims[i])));
        }
    }
    if init.dims() != dims {
        return Err(Error::Argument(format!("initial tensor has dims {:?}, expected {dims:?}", init.dims())));
    }
    let mut decomp = hosvd_truncated(init, ranks)?;
    let core_dims = decomp.core.dims();
    let mut splits: Vec<Splitting> = Mode::ALL
        .iter()
        .map(|&mode| {
            let g = decomp.core.matricize(mode);
            let v = procrustes(&g.transpose())?;
            let d = (&g * &v).diagonal();
            Ok(Splitting { d, v, c: Mat::zeros(g.nrows(), g.ncols()) })
        })
        .collect::<Result<_>>()?;
    let mut states: Vec<SparseOrthState> = decomp.factors.iter().map(|u| SparseOrthState::new(u, opts.kappa)).collect();
    let first = penalized_objective(design, &decomp, lambda)?;
    let mut trace = vec![first];
    let mut above = 0usize;
    let mut converged = false;
    let mut iterations = 0;
    let mut primal = f64::INFINITY;
    let rho_sum: f64 = opts.rho.iter().sum();
    while iterations < opts.max_iter {
        iterations += 1;
        for mode in Mode::ALL {
            let i = mode.index();
            let others: f64 = (0..3).filter(|j| *j != i).map(|j| linalg::l1_norm(&decomp.factors[j])).product();
            let loss = block_quadratic(design, &decomp, Block::Factor(mode))?;
            let fit = solve_sparse_orthogonal(&loss, lambda * others, &mut states[i], opts)?;
            decomp.factors[i] = fit.u;
        }
        let loss = block_quadratic(design, &decomp, Block::Core)?;
        let mut lhs = loss.q_mat.clone();
        for k in 0..lhs.nrows() {
            lhs[(k, k)] += rho_sum;
        }
        let mut rhs = loss.q_vec.clone();
        for (mode, s) in Mode::ALL.iter().zip(&splits) {
            let target = Mat::from_diagonal(&s.d) * s.v.transpose() - &s.c;
            let t = Tensor3::tensorize(&target, core_dims, *mode)?;
            rhs += Vector::from_column_slice(t.data()) * opts.rho[mode.index()];
        }
        let sol = lhs
            .cholesky()
            .ok_or_else(|| Error::Numerical("core update system is not positive definite".into()))?
            .solve(&rhs);
        decomp.core = Tensor3::from_vec(core_dims, sol.as_slice().to_vec())?;
        primal = 0.0;
        for (mode, s) in Mode::ALL.iter().zip(splits.iter_mut()) {
            let g = decomp.core.matricize(*mode);
            let x = &g + &s.c;
            s.d = (&x * &s.v).diagonal();
            s.v = procrustes(&(x.transpose() * Mat::from_diagonal(&s.d)))?;
            let r = &g - Mat::from_diagonal(&s.d) * s.v.transpose();
            s.c += &r;
            primal = primal.max(r.norm());
        }
        let obj = penalized_objective(design, &decomp, lambda)?;
        if !obj.is_finite() {
            return Err(Error::Numerical(format!("objective became non-finite at iteration {iterations}")));
        }
        let prev = *trace.last().expect("nonempty trace");
        trace.push(obj);
        above = if obj > 10.0 * first { above + 1 } else { 0 };
        if above >= 20 {
            return Err(Error::Numerical(format!(
                "diverged: objective {obj:.4e} above ten times its initial value {first:.4e} for 20 iterations (primal residual {primal:.3e})"
            )));
        }
        let rel = (prev - obj).abs() / prev.abs().max(1e-12);
        if primal < opts.tol && rel < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::debug!("SHORR stopped after {iterations} iterations, primal residual {primal:.3e}");
    }
    let coeff = decomp.reconstruct()?;
    let factor_nonzeros = [0, 1, 2].map(|i| linalg::count_nonzero(&decomp.factors[i]));
    Ok(ShorrFit { decomp, coeff, lambda, objective_trace: trace, iterations, converged, primal_residual: primal, factor_nonzeros })
}

/// Fits along a penalty grid in the given order, each fit starting from the
/// previous estimate.
pub fn fit_shorr_path(design: &Design, ranks: [usize; 3], lambdas: &[f64], init: &Tensor3, opts: &ShorrOptions) -> Vec<Result<ShorrFit>> {
    let mut start = init.clone();
    let mut out = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let fit = fit_shorr_from(design, ranks, lambda, &start, opts);
        if let Ok(f) = &fit {
            start = f.coeff.clone();
        }
        out.push(fit);
    }
    out
}

/// Starting values `𝒜̂_NN + (NP/T_eff)^{1/2}·𝒯` with entries of `𝒯` drawn
/// from `N(0, 1/(N²P))`.
pub fn shorr_starts(pre: &Tensor3, t_eff: usize, n_starts: usize, seed: u64) -> Result<Vec<Tensor3>> {
    let [n, _, p] = pre.dims();
    let scale = ((n * p) as f64 / t_eff as f64).sqrt() / ((n * n * p) as f64).sqrt();
    mlr::perturbed_starts(pre, scale, n_starts, &mut seeded_rng(seed))
}

/// Best fit by penalized objective over the given starts. Failed starts are
/// skipped; converged fits are preferred.
pub fn fit_shorr_multistart(design: &Design, ranks: [usize; 3], lambda: f64, starts: &[Tensor3], opts: &ShorrOptions) -> Result<ShorrFit> {
    if starts.is_empty() {
        return Err(Error::Argument("at least one start is required".into()));
    }
    let fits: Vec<Result<ShorrFit>> = starts.par_iter().map(|s| fit_shorr_from(design, ranks, lambda, s, opts)).collect();
    let mut best: Option<ShorrFit> = None;
    let mut last_err = None;
    for f in fits {
        match f {
            Ok(f) => {
                let better = match &best {
                    None => true,
                    Some(b) => (f.converged && !b.converged) || (f.converged == b.converged && f.objective() < b.objective()),
                };
                if better {
                    best = Some(f);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.expect("some start failed"))
}

/// Randomized restarts around the nuclear-norm estimate.
pub fn shorr_multistart(design: &Design, ranks: [usize; 3], lambda: f64, n_starts: usize, seed: u64, opts: &ShorrOptions) -> Result<ShorrFit> {
    if n_starts == 0 {
        return Err(Error::Argument("at least one start is required".into()));
    }
    let pre = mlr::initial_estimate(design, ranks, &InitStrategy::Nn(None))?;
    let starts = shorr_starts(&pre, design.t_eff(), n_starts, seed)?;
    fit_shorr_multistart(design, ranks, lambda, &starts, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_matrix, rng};

    #[test]
    fn procrustes_fixed_points_and_scaling() {
        let q = crate::var_process::random_orthonormal(6, 3, &mut seeded_rng(1)).unwrap();
        assert!((procrustes(&q).unwrap() - &q).amax() < 1e-12);
        let two = Mat::identity(4, 4) * 2.0;
        assert!((procrustes(&two).unwrap() - Mat::identity(4, 4)).amax() < 1e-12);
        let (_, flagged) = procrustes_flagged(&Mat::zeros(3, 2)).unwrap();
        assert!(flagged);
    }

    #[test]
    fn procrustes_matches_polar_factor_and_beats_random_frames() {
        let mut r = rng(2);
        let c = random_matrix(&mut r, 5, 2);
        let b = procrustes(&c).unwrap();
        // Polar factor C (C'C)^{-1/2} computed from an eigendecomposition.
        let (vals, vecs) = linalg::symmetric_eigen(&(c.transpose() * &c));
        let inv_sqrt = &vecs * Mat::from_diagonal(&Vector::from_iterator(2, vals.iter().map(|v| 1.0 / v.sqrt()))) * vecs.transpose();
        assert!((&b - &c * inv_sqrt).amax() < 1e-10);
        let best = (&b - &c).norm();
        let mut prng = seeded_rng(3);
        for _ in 0..2000 {
            let f = crate::var_process::random_orthonormal(5, 2, &mut prng).unwrap();
            assert!((&f - &c).norm() >= best - 1e-12);
        }
    }

    #[test]
    fn joint_penalty_factorizes_over_the_kronecker_product() {
        let mut r = rng(4);
        let f = [random_matrix(&mut r, 4, 2), random_matrix(&mut r, 3, 2), random_matrix(&mut r, 2, 1)];
        let k = linalg::kron(&linalg::kron(&f[2], &f[1]), &f[0]);
        let want = linalg::l1_norm(&k);
        assert!((joint_penalty(1.0, &f) - want).abs() < 1e-10 * want);
    }

    fn regression_instance(seed: u64, rows: usize, cols: usize, n: usize) -> (Vector, Mat, Mat) {
        let mut r = rng(seed);
        let x = random_matrix(&mut r, n, rows * cols);
        let truth = crate::var_process::random_orthonormal(rows, cols, &mut seeded_rng(seed + 1)).unwrap();
        let y = &x * linalg::vec(&truth) + Vector::from_iterator(n, random_matrix(&mut r, n, 1).iter().map(|v| 0.1 * v));
        (y, x, truth)
    }

    #[test]
    fn unpenalized_inner_solver_matches_splitting_solve() {
        let (y, x, _) = regression_instance(5, 4, 2, 60);
        let opts = ShorrOptions { inner_max_iter: 2000, inner_tol: 1e-10, ..Default::default() };
        let fit = sparse_orthogonal_regress(&y, &x, (4, 2), 0.0, 1.0, &opts).unwrap();
        assert!(linalg::orthonormality_error(&fit.u) < 1e-10);
        let mut loss = QuadraticLoss::from_regression(&y, &x).unwrap();
        loss.q_mat /= 60.0;
        loss.q_vec /= 60.0;
        loss.constant /= 60.0;
        // Plain splitting with a vanishing proximal weight.
        let long = ShorrOptions { soc_max_iter: 5000, ..Default::default() };
        let step = BStep::new(&loss, 1e-9, long.soc_rho).unwrap();
        let mut b = fit.u.clone();
        let mut dual = Mat::zeros(4, 2);
        for _ in 0..20 {
            b = soc_solve(&loss, &step, &b.clone(), &b.clone(), &mut dual, 1e-9, &long).unwrap();
        }
        let r_admm = loss.value(&linalg::vec(&fit.u));
        let r_soc = loss.value(&linalg::vec(&b));
        assert!((r_admm - r_soc).abs() < 1e-6 * r_soc.max(1.0), "{r_admm} vs {r_soc}");
    }

    #[test]
    fn huge_penalty_leaves_a_single_unit_coordinate() {
        let (y, x, _) = regression_instance(6, 4, 1, 40);
        let fit = sparse_orthogonal_regress(&y, &x, (4, 1), 1e6, 1.0, &ShorrOptions::default()).unwrap();
        assert_eq!(linalg::count_nonzero(&fit.u), 1);
        assert!((fit.u.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn moderate_penalty_recovers_sparse_frame() {
        let mut truth = Mat::zeros(6, 2);
        truth[(0, 0)] = 0.8;
        truth[(1, 0)] = 0.6;
        truth[(3, 1)] = 1.0;
        let mut r = rng(7);
        let x = random_matrix(&mut r, 200, 12);
        let y = &x * linalg::vec(&truth) + random_matrix(&mut r, 200, 1).column(0) * 0.05;
        let opts = ShorrOptions { inner_max_iter: 1000, ..Default::default() };
        let fit = sparse_orthogonal_regress(&y, &x, (6, 2), 0.05, 1.0, &opts).unwrap();
        assert!(fit.converged);
        assert!(fit.primal_residual <= 1e-6);
        let support: Vec<bool> = fit.u.iter().map(|v| *v != 0.0).collect();
        let want: Vec<bool> = truth.iter().map(|v| *v != 0.0).collect();
        assert_eq!(support, want);
        assert!(linalg::orthonormality_error(&fit.u) < 1e-10);
    }

    #[test]
    fn support_orthonormalization_keeps_pattern() {
        let mut w = Mat::zeros(5, 2);
        w[(0, 0)] = 0.9;
        w[(1, 0)] = 0.5;
        w[(1, 1)] = 0.05;
        w[(3, 1)] = 1.1;
        let u = orthonormalize_on_support(&w).unwrap();
        assert!(linalg::orthonormality_error(&u) < 1e-12);
        // A single shared row cannot carry two nonzeros of orthogonal columns.
        assert_eq!(u[(1, 1)], 0.0);
        for (a, b) in u.iter().zip(w.iter()) {
            assert!(*b != 0.0 || *a == 0.0);
        }
        assert_eq!(linalg::count_nonzero(&u), 3);
    }
}
