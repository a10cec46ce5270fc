//! VAR(P) models: stationarity, second moments, simulation, spectral
//! diagnostics and the data-generating processes used in the experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::tensor3::{hosvd_truncated, Mode, Tensor3, TuckerDecomp};

/// Random generator used throughout the crate.
pub type SimRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Models whose companion spectral radius exceeds `1 − STATIONARITY_MARGIN`
/// are treated as non-stationary.
pub const STATIONARITY_MARGIN: f64 = 1e-8;
pub const DEFAULT_BURN_IN: usize = 500;
pub const DEFAULT_MU_GRID: usize = 1024;
const MAX_DGP_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarModel {
    coeff: Tensor3,
    sigma_eps: Mat,
    decomp: Option<TuckerDecomp>,
}

impl VarModel {
    pub fn new(coeff: Tensor3, sigma_eps: Mat) -> Result<Self> {
        let [n, n2, _] = coeff.dims();
        if n != n2 {
            return Err(Error::Argument(format!(
                "coefficient tensor must be N x N x P, got {:?}",
                coeff.dims()
            )));
        }
        if sigma_eps.shape() != (n, n) {
            return Err(Error::Argument(format!(
                "innovation covariance must be {n}x{n}, got {}x{}",
                sigma_eps.nrows(),
                sigma_eps.ncols()
            )));
        }
        if !linalg::is_symmetric(&sigma_eps, 1e-12) {
            return Err(Error::Argument("innovation covariance is not symmetric".into()));
        }
        if sigma_eps.clone().cholesky().is_none() {
            return Err(Error::Argument("innovation covariance is not positive definite".into()));
        }
        Ok(VarModel { coeff, sigma_eps, decomp: None })
    }

    /// Attaches a Tucker view; the reconstruction must match the coefficients.
    pub fn with_decomp(mut self, decomp: TuckerDecomp) -> Result<Self> {
        let diff = decomp.reconstruct()?.sub(&self.coeff)?.frobenius_norm();
        if diff > 1e-8 * (1.0 + self.coeff.frobenius_norm()) {
            return Err(Error::Argument(format!(
                "Tucker view differs from the coefficients by {diff:.3e}"
            )));
        }
        self.decomp = Some(decomp);
        Ok(self)
    }

    pub fn coeff(&self) -> &Tensor3 {
        &self.coeff
    }

    pub fn sigma_eps(&self) -> &Mat {
        &self.sigma_eps
    }

    pub fn decomp(&self) -> Option<&TuckerDecomp> {
        self.decomp.as_ref()
    }

    pub fn n(&self) -> usize {
        self.coeff.dims()[0]
    }

    pub fn p(&self) -> usize {
        self.coeff.dims()[2]
    }

    /// One-step conditional mean `Σ_p A_p y_{T+1−p}` given the last `P` rows.
    pub fn conditional_mean(&self, ts: &TimeSeries) -> Result<Vector> {
        forecast_one_step(&self.coeff, ts)
    }
}

/// `Σ_p A_p y_{T+1−p}` using the last `P` observations of `ts`.
pub fn forecast_one_step(coeff: &Tensor3, ts: &TimeSeries) -> Result<Vector> {
    let [n, _, p] = coeff.dims();
    if ts.n_vars() != n {
        return Err(Error::Data(format!(
            "series has {} variables but the model expects {n}",
            ts.n_vars()
        )));
    }
    if ts.len() < p {
        return Err(Error::Data(format!("forecasting needs at least {p} observations")));
    }
    let a1 = coeff.matricize(Mode::One);
    let x = lag_vector(&ts.values, ts.len(), p);
    Ok(a1 * x)
}

/// `x = (y_{t−1}', …, y_{t−P}')'` for row index `t` (0-based, `t ≥ P`).
pub(crate) fn lag_vector(values: &Mat, t: usize, p: usize) -> Vector {
    let n = values.ncols();
    let mut x = Vector::zeros(n * p);
    for lag in 1..=p {
        for j in 0..n {
            x[(lag - 1) * n + j] = values[(t - lag, j)];
        }
    }
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub values: Mat,
    pub names: Option<Vec<String>>,
}

impl TimeSeries {
    pub fn new(values: Mat, names: Option<Vec<String>>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Data("a time series needs at least one row and one column".into()));
        }
        if let Some((idx, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let (r, c) = (idx % values.nrows(), idx / values.nrows());
            return Err(Error::Data(format!("non-finite value at row {}, column {}", r + 1, c + 1)));
        }
        if let Some(n) = &names {
            if n.len() != values.ncols() {
                return Err(Error::Data(format!(
                    "{} names for {} columns",
                    n.len(),
                    values.ncols()
                )));
            }
        }
        Ok(TimeSeries { values, names })
    }

    /// Number of observations `T`.
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn n_vars(&self) -> usize {
        self.values.ncols()
    }

    /// The first `t` observations.
    pub fn head(&self, t: usize) -> Result<TimeSeries> {
        if t == 0 || t > self.len() {
            return Err(Error::Argument(format!("cannot take {t} of {} rows", self.len())));
        }
        Ok(TimeSeries { values: self.values.rows(0, t).into_owned(), names: self.names.clone() })
    }
}

/// `NP × NP` companion matrix of a VAR(P) coefficient tensor.
pub fn companion_matrix(coeff: &Tensor3) -> Mat {
    let [n, _, p] = coeff.dims();
    let np = n * p;
    let mut f = Mat::zeros(np, np);
    f.rows_mut(0, n).copy_from(&coeff.matricize(Mode::One));
    for i in n..np {
        f[(i, i - n)] = 1.0;
    }
    f
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stationarity {
    pub stationary: bool,
    pub spectral_radius: f64,
}

pub fn spectral_radius(m: &Mat) -> f64 {
    if m.iter().all(|x| *x == 0.0) {
        return 0.0;
    }
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn is_stationary(coeff: &Tensor3) -> Stationarity {
    let radius = spectral_radius(&companion_matrix(coeff));
    Stationarity { stationary: radius < 1.0 - STATIONARITY_MARGIN, spectral_radius: radius }
}

/// Autocovariances `Γ_j = cov(y_{t+j}, y_t)` and the stacked covariance
/// `Γ* = E[x_t x_t']` of `x_t = (y_{t−1}', …, y_{t−P}')'`.
#[derive(Debug, Clone)]
pub struct Autocovariance {
    pub lags: Vec<Mat>,
    pub gamma_star: Mat,
}

/// Solves `S = F S F' + Q` by the doubling iteration.
pub fn solve_discrete_lyapunov(f: &Mat, q: &Mat) -> Result<Mat> {
    let mut s = q.clone();
    let mut fk = f.clone();
    for _ in 0..200 {
        let inc = &fk * &s * fk.transpose();
        let done = linalg::max_abs(&inc) <= 1e-15 * linalg::max_abs(&s).max(f64::MIN_POSITIVE);
        s += inc;
        if done {
            return Ok((&s + s.transpose()) * 0.5);
        }
        fk = &fk * &fk;
        if fk.iter().any(|x| !x.is_finite()) {
            break;
        }
    }
    Err(Error::Numerical("Lyapunov doubling iteration did not converge".into()))
}

pub fn autocovariance(model: &VarModel, maxlag: usize) -> Result<Autocovariance> {
    let st = is_stationary(model.coeff());
    if !st.stationary {
        return Err(Error::Domain(format!(
            "model is not stationary (companion spectral radius {:.6})",
            st.spectral_radius
        )));
    }
    let (n, p) = (model.n(), model.p());
    let f = companion_matrix(model.coeff());
    let mut q = Mat::zeros(n * p, n * p);
    q.view_mut((0, 0), (n, n)).copy_from(model.sigma_eps());
    let gamma_star = solve_discrete_lyapunov(&f, &q)?;
    let mut lags: Vec<Mat> = (0..p).map(|j| gamma_star.view((0, j * n), (n, n)).into_owned()).collect();
    let slices: Vec<Mat> = (0..p).map(|k| model.coeff().frontal_slice(k)).collect();
    let lag_at = |lags: &Vec<Mat>, h: isize| -> Mat {
        if h >= 0 {
            lags[h as usize].clone()
        } else {
            lags[(-h) as usize].transpose()
        }
    };
    for j in p..=maxlag {
        let mut g = Mat::zeros(n, n);
        for (k, a) in slices.iter().enumerate() {
            g += a * lag_at(&lags, j as isize - (k as isize + 1));
        }
        lags.push(g);
    }
    lags.truncate(maxlag + 1);
    Ok(Autocovariance { lags, gamma_star })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulateOptions {
    pub burn_in: usize,
    /// Multiplies every innovation; zero gives the noiseless recursion.
    pub noise_scale: f64,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        SimulateOptions { burn_in: DEFAULT_BURN_IN, noise_scale: 1.0 }
    }
}

pub fn simulate(model: &VarModel, t: usize, burn_in: usize, seed: u64) -> Result<TimeSeries> {
    simulate_with(model, t, SimulateOptions { burn_in, noise_scale: 1.0 }, &mut seeded_rng(seed))
}

/// Gaussian simulation from a zero initial state; the first `burn_in` values
/// are discarded.
pub fn simulate_with(model: &VarModel, t: usize, opts: SimulateOptions, rng: &mut SimRng) -> Result<TimeSeries> {
    if t == 0 {
        return Err(Error::Argument("cannot simulate an empty series".into()));
    }
    let st = is_stationary(model.coeff());
    if !st.stationary {
        return Err(Error::Domain(format!(
            "cannot simulate a non-stationary model (spectral radius {:.6})",
            st.spectral_radius
        )));
    }
    let (n, p) = (model.n(), model.p());
    let chol = model
        .sigma_eps()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("innovation covariance Cholesky failed".into()))?
        .l();
    let a1 = model.coeff().matricize(Mode::One);
    let total = t + opts.burn_in;
    let mut values = Mat::zeros(total + p, n);
    for row in p..total + p {
        let x = lag_vector(&values, row, p);
        let z = Vector::from_fn(n, |_, _| StandardNormal.sample(rng));
        let y = &a1 * x + &chol * z * opts.noise_scale;
        values.set_row(row, &y.transpose());
    }
    TimeSeries::new(values.rows(p + opts.burn_in, t).into_owned(), None)
}

/// Extremes of the eigenvalues of `𝒜*(e^{iθ})𝒜(e^{iθ})` with
/// `𝒜(z) = I − Σ_p A_p z^p`, over `θ = −π + 2πk/grid_size`.
pub fn mu_extremes(coeff: &Tensor3, grid_size: usize) -> Result<(f64, f64)> {
    if grid_size < 64 {
        return Err(Error::Argument(format!("grid size must be at least 64, got {grid_size}")));
    }
    let [n, _, p] = coeff.dims();
    let slices: Vec<Mat> = (0..p).map(|k| coeff.frontal_slice(k)).collect();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for k in 0..grid_size {
        let theta = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * k as f64 / grid_size as f64;
        let mut re = Mat::identity(n, n);
        let mut im = Mat::zeros(n, n);
        for (lag, a) in slices.iter().enumerate() {
            let w = (lag + 1) as f64 * theta;
            re -= a * w.cos();
            im -= a * w.sin();
        }
        let mut emb = Mat::zeros(2 * n, 2 * n);
        emb.view_mut((0, 0), (n, n)).copy_from(&re);
        emb.view_mut((n, n), (n, n)).copy_from(&re);
        emb.view_mut((0, n), (n, n)).copy_from(&(-&im));
        emb.view_mut((n, 0), (n, n)).copy_from(&im);
        let s = linalg::singular_values(&emb)?;
        lo = lo.min(s[s.len() - 1].powi(2));
        hi = hi.max(s[0].powi(2));
    }
    Ok((lo, hi))
}

/// Top-`n` left singular vectors of an `m × m` standard normal matrix.
pub fn random_orthonormal(m: usize, n: usize, rng: &mut SimRng) -> Result<Mat> {
    if n == 0 || n > m {
        return Err(Error::Argument(format!("need 1 <= n <= m, got m={m}, n={n}")));
    }
    let z = Mat::from_fn(m, m, |_, _| StandardNormal.sample(rng));
    linalg::leading_left_singular_vectors(&z, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparseFactorSpec {
    pub n: usize,
    pub p: usize,
    pub ranks: [usize; 3],
    pub sparsity: [usize; 3],
}

fn unit_gaussian(len: usize, rng: &mut SimRng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            let sign = if v[0] < 0.0 { -1.0 } else { 1.0 };
            return v.iter().map(|x| sign * x / norm).collect();
        }
    }
}

/// Block-structured sparse factors with disjoint column supports.
///
/// Columns of `U₁` and `U₂` occupy consecutive blocks of `max(s, 3)` rows
/// (or `s` rows when wider blocks do not fit) with the first `s` rows of each
/// block nonzero. The first column of `U₃` is `e₁`; later columns occupy
/// blocks of `s₃` rows starting at the second row. Rows below the last block
/// are zero.
pub fn generate_sparse_factors(spec: &SparseFactorSpec, rng: &mut SimRng) -> Result<[Mat; 3]> {
    let dims = [spec.n, spec.n, spec.p];
    for i in 0..3 {
        if spec.ranks[i] == 0 || spec.sparsity[i] == 0 {
            return Err(Error::Argument("ranks and sparsity levels must be positive".into()));
        }
    }
    let mut out: Vec<Mat> = Vec::with_capacity(3);
    for i in 0..2 {
        let (r, s, dim) = (spec.ranks[i], spec.sparsity[i], dims[i]);
        if r * s > dim {
            return Err(Error::Argument(format!(
                "factor {}: {r} columns with {s} nonzeros each do not fit in {dim} rows",
                i + 1
            )));
        }
        let width = if r * s.max(3) <= dim { s.max(3) } else { s };
        let mut u = Mat::zeros(dim, r);
        for j in 0..r {
            for (k, v) in unit_gaussian(s, rng).into_iter().enumerate() {
                u[(j * width + k, j)] = v;
            }
        }
        out.push(u);
    }
    let (r3, s3, p) = (spec.ranks[2], spec.sparsity[2], spec.p);
    if 1 + (r3 - 1) * s3 > p {
        return Err(Error::Argument(format!(
            "factor 3: {r3} columns with {s3} nonzeros do not fit in {p} rows"
        )));
    }
    let mut u3 = Mat::zeros(p, r3);
    u3[(0, 0)] = 1.0;
    for j in 1..r3 {
        for (k, v) in unit_gaussian(s3, rng).into_iter().enumerate() {
            u3[(1 + (j - 1) * s3 + k, j)] = v;
        }
    }
    out.push(u3);
    Ok(out.try_into().expect("three factors"))
}

/// Generative description of a dynamic factor model
/// `y_t = Λ f_t + e_t`, `f_t = B f_{t−1} + ξ_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfmSpec {
    pub loadings: Mat,
    pub transition: Mat,
    pub noise_var: f64,
    pub factor_noise_var: f64,
}

impl DfmSpec {
    pub fn n(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn r(&self) -> usize {
        self.loadings.ncols()
    }

    /// Simulates the observations together with the latent factors.
    pub fn simulate(&self, t: usize, burn_in: usize, rng: &mut SimRng) -> Result<(TimeSeries, Mat)> {
        if t == 0 {
            return Err(Error::Argument("cannot simulate an empty series".into()));
        }
        let (n, r) = (self.n(), self.r());
        let (en, fn_) = (self.noise_var.sqrt(), self.factor_noise_var.sqrt());
        let mut f = Vector::zeros(r);
        let mut ys = Mat::zeros(t, n);
        let mut fs = Mat::zeros(t, r);
        for step in 0..t + burn_in {
            let xi = Vector::from_fn(r, |_, _| StandardNormal.sample(rng));
            f = &self.transition * f + xi * fn_;
            let e = Vector::from_fn(n, |_, _| StandardNormal.sample(rng));
            let y = &self.loadings * &f + e * en;
            if step >= burn_in {
                ys.set_row(step - burn_in, &y.transpose());
                fs.set_row(step - burn_in, &f.transpose());
            }
        }
        Ok((TimeSeries::new(ys, None)?, fs))
    }

    /// `E(y_{T+1} | F_T) = Λ B f_T`.
    pub fn conditional_mean(&self, last_factor: &Vector) -> Vector {
        &self.loadings * (&self.transition * last_factor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DgpSpec {
    /// Superdiagonal core with `r₁ = r₂ = r₃ = diagonal.len()`.
    SuperdiagonalCore { n: usize, p: usize, diagonal: Vec<f64> },
    /// Standard normal core rescaled so that `min_i σ_{r_i}(G₍ᵢ₎) = 1`.
    ScaledRandomCore { n: usize, p: usize, ranks: [usize; 3] },
    /// All-orthogonal rescaled random core with block-sparse factors.
    SparseFactor { n: usize, p: usize, ranks: [usize; 3], sparsity: [usize; 3] },
    Dfm1 { n: usize },
    Dfm2 { n: usize },
    /// VAR(1) with `A₁ = V C V'`, the case where the low-rank VAR and the
    /// dynamic factor model coincide.
    SfmEquivalent { n: usize, diagonal: Vec<f64> },
}

impl DgpSpec {
    pub fn superdiagonal(n: usize, p: usize, diagonal: Vec<f64>) -> Self {
        DgpSpec::SuperdiagonalCore { n, p, diagonal }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            DgpSpec::SuperdiagonalCore { .. } => "superdiagonal_core",
            DgpSpec::ScaledRandomCore { .. } => "scaled_random_core",
            DgpSpec::SparseFactor { .. } => "sparse_factor",
            DgpSpec::Dfm1 { .. } => "dfm1",
            DgpSpec::Dfm2 { .. } => "dfm2",
            DgpSpec::SfmEquivalent { .. } => "sfm_equivalent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Dgp {
    Var(VarModel),
    Dfm(DfmSpec),
}

impl Dgp {
    pub fn var_model(&self) -> Option<&VarModel> {
        match self {
            Dgp::Var(m) => Some(m),
            Dgp::Dfm(_) => None,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Dgp::Var(m) => m.n(),
            Dgp::Dfm(d) => d.n(),
        }
    }
}

/// Rescales `g` so that the smallest `σ_{r_i}(G₍ᵢ₎)` over the modes is one.
pub fn scale_core(g: &Tensor3) -> Result<Tensor3> {
    let r = g.dims();
    let mut smallest = f64::INFINITY;
    for mode in Mode::ALL {
        let s = linalg::singular_values(&g.matricize(mode))?;
        smallest = smallest.min(s[r[mode.index()] - 1]);
    }
    if smallest <= 1e-12 {
        return Err(Error::Generation("random core is rank deficient".into()));
    }
    Ok(g.scaled(1.0 / smallest))
}

fn random_core(ranks: [usize; 3], rng: &mut SimRng) -> Tensor3 {
    Tensor3::from_fn(ranks, |_, _, _| StandardNormal.sample(rng))
}

fn check_ranks(n: usize, p: usize, ranks: [usize; 3]) -> Result<()> {
    let dims = [n, n, p];
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

fn tucker_model(core: Tensor3, factors: [Mat; 3]) -> Result<Option<VarModel>> {
    let decomp = TuckerDecomp::new(core, factors)?;
    let coeff = decomp.reconstruct()?;
    if !is_stationary(&coeff).stationary {
        return Ok(None);
    }
    let n = coeff.dims()[0];
    Ok(Some(VarModel::new(coeff, Mat::identity(n, n))?.with_decomp(decomp)?))
}

fn resample<F>(what: &str, rng: &mut SimRng, mut attempt: F) -> Result<VarModel>
where
    F: FnMut(&mut SimRng) -> Result<Option<VarModel>>,
{
    for _ in 0..MAX_DGP_ATTEMPTS {
        if let Some(m) = attempt(rng)? {
            return Ok(m);
        }
    }
    Err(Error::Generation(format!(
        "no stationary {what} model found in {MAX_DGP_ATTEMPTS} attempts"
    )))
}

/// Builds a data-generating process. VAR-type processes use `Σ_ε = I` and are
/// resampled until stationary.
pub fn make_dgp(spec: &DgpSpec, seed: u64) -> Result<Dgp> {
    let mut rng = seeded_rng(seed);
    make_dgp_with(spec, &mut rng)
}

pub fn make_dgp_with(spec: &DgpSpec, rng: &mut SimRng) -> Result<Dgp> {
    match spec {
        DgpSpec::SuperdiagonalCore { n, p, diagonal } => {
            let r = diagonal.len();
            check_ranks(*n, *p, [r, r, r])?;
            let core = Tensor3::from_fn([r, r, r], |i, j, k| if i == j && j == k { diagonal[i] } else { 0.0 });
            let m = resample(spec.kind(), rng, |rng| {
                let f = [random_orthonormal(*n, r, rng)?, random_orthonormal(*n, r, rng)?, random_orthonormal(*p, r, rng)?];
                tucker_model(core.clone(), f)
            })?;
            Ok(Dgp::Var(m))
        }
        DgpSpec::ScaledRandomCore { n, p, ranks } => {
            check_ranks(*n, *p, *ranks)?;
            let m = resample(spec.kind(), rng, |rng| {
                let core = scale_core(&random_core(*ranks, rng))?;
                let f = [
                    random_orthonormal(*n, ranks[0], rng)?,
                    random_orthonormal(*n, ranks[1], rng)?,
                    random_orthonormal(*p, ranks[2], rng)?,
                ];
                tucker_model(core, f)
            })?;
            Ok(Dgp::Var(m))
        }
        DgpSpec::SparseFactor { n, p, ranks, sparsity } => {
            check_ranks(*n, *p, *ranks)?;
            let fs = SparseFactorSpec { n: *n, p: *p, ranks: *ranks, sparsity: *sparsity };
            let m = resample(spec.kind(), rng, |rng| {
                let raw = random_core(*ranks, rng);
                let core = scale_core(&hosvd_truncated(&raw, *ranks)?.core)?;
                tucker_model(core, generate_sparse_factors(&fs, rng)?)
            })?;
            Ok(Dgp::Var(m))
        }
        DgpSpec::Dfm1 { n } => {
            let loadings = Mat::from_column_slice(*n, 1, &unit_gaussian(*n, rng));
            Ok(Dgp::Dfm(DfmSpec {
                loadings,
                transition: Mat::from_element(1, 1, 0.5),
                noise_var: 0.5,
                factor_noise_var: 1.0,
            }))
        }
        DgpSpec::Dfm2 { n } => {
            if *n < 3 {
                return Err(Error::Argument("dfm2 needs at least three variables".into()));
            }
            Ok(Dgp::Dfm(DfmSpec {
                loadings: random_orthonormal(*n, 3, rng)?,
                transition: Mat::from_diagonal(&Vector::from_vec(vec![0.6, 0.5, 0.4])),
                noise_var: 0.5,
                factor_noise_var: 1.0,
            }))
        }
        DgpSpec::SfmEquivalent { n, diagonal } => {
            let r = diagonal.len();
            check_ranks(*n, 1, [r, r, 1])?;
            let core = Tensor3::from_fn([r, r, 1], |i, j, _| if i == j { diagonal[i] } else { 0.0 });
            let m = resample(spec.kind(), rng, |rng| {
                let v = random_orthonormal(*n, r, rng)?;
                tucker_model(core.clone(), [v.clone(), v, Mat::identity(1, 1)])
            })?;
            Ok(Dgp::Var(m))
        }
    }
}

/// Draws a uniformly distributed seed from a generator.
pub fn next_seed(rng: &mut SimRng) -> u64 {
    rng.random()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_matrix, rng};

    fn scalar_model(coeffs: &[f64]) -> VarModel {
        let t = Tensor3::from_vec([1, 1, coeffs.len()], coeffs.to_vec()).unwrap();
        VarModel::new(t, Mat::identity(1, 1)).unwrap()
    }

    #[test]
    fn zero_coefficients_are_stationary() {
        let s = is_stationary(&Tensor3::zeros([3, 3, 2]));
        assert!(s.stationary);
        assert!(s.spectral_radius < 1e-12);
    }

    #[test]
    fn var1_stationarity_matches_spectral_radius() {
        let half = Tensor3::from_frontal_slices(&[Mat::identity(3, 3) * 0.5]).unwrap();
        let s = is_stationary(&half);
        assert!(s.stationary);
        assert!((s.spectral_radius - 0.5).abs() < 1e-12);
        let unit = Tensor3::from_frontal_slices(&[Mat::identity(3, 3)]).unwrap();
        assert!(!is_stationary(&unit).stationary);
    }

    #[test]
    fn ar2_radius_matches_polynomial_roots() {
        // 1 - 0.5 z - 0.3 z^2 has roots z = (-0.5 ± sqrt(0.25 + 1.2)) / 0.6.
        let disc = (0.25_f64 + 1.2).sqrt();
        let roots = [(-0.5 + disc) / 0.6, (-0.5 - disc) / 0.6];
        let want = roots.iter().map(|z| 1.0 / z.abs()).fold(0.0, f64::max);
        let s = is_stationary(scalar_model(&[0.5, 0.3]).coeff());
        assert!((s.spectral_radius - want).abs() < 1e-12);
    }

    #[test]
    fn scaling_a_var1_scales_the_radius() {
        let mut r = rng(3);
        let a = random_matrix(&mut r, 4, 4) * 0.2;
        let rho = is_stationary(&Tensor3::from_frontal_slices(&[a.clone()]).unwrap()).spectral_radius;
        let rho_half = is_stationary(&Tensor3::from_frontal_slices(&[a * 0.5]).unwrap()).spectral_radius;
        assert!((rho_half - 0.5 * rho).abs() < 1e-10);
    }

    #[test]
    fn white_noise_autocovariance() {
        let sigma = Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let m = VarModel::new(Tensor3::zeros([2, 2, 1]), sigma.clone()).unwrap();
        let ac = autocovariance(&m, 3).unwrap();
        assert!(linalg::max_abs(&(&ac.lags[0] - &sigma)) < 1e-14);
        for g in &ac.lags[1..] {
            assert!(linalg::max_abs(g) < 1e-14);
        }
    }

    #[test]
    fn scalar_ar1_autocovariance_closed_form() {
        let ac = autocovariance(&scalar_model(&[0.5]), 2).unwrap();
        assert!((ac.lags[0][(0, 0)] - 4.0 / 3.0).abs() < 1e-12);
        assert!((ac.lags[1][(0, 0)] - 2.0 / 3.0).abs() < 1e-12);
        assert!((ac.lags[2][(0, 0)] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn lyapunov_matches_kronecker_solve() {
        let mut r = rng(4);
        let f = random_matrix(&mut r, 4, 4) * 0.25;
        let b = random_matrix(&mut r, 4, 4);
        let q = &b * b.transpose();
        let s = solve_discrete_lyapunov(&f, &q).unwrap();
        // vec(S) = (I - F ⊗ F)^{-1} vec(Q)
        let lhs = Mat::identity(16, 16) - linalg::kron(&f, &f);
        let want = lhs.lu().solve(&linalg::vec(&q)).unwrap();
        assert!((linalg::vec(&s) - want).amax() < 1e-12);
    }

    #[test]
    fn gamma_star_is_block_toeplitz_and_positive_definite() {
        let m = scalar_model(&[0.5, 0.2]);
        let ac = autocovariance(&m, 4).unwrap();
        let gs = &ac.gamma_star;
        assert!((gs[(0, 1)] - ac.lags[1][(0, 0)]).abs() < 1e-12);
        assert!((gs[(1, 1)] - ac.lags[0][(0, 0)]).abs() < 1e-12);
        assert!(linalg::min_eigenvalue(gs) > 0.0);
        // Yule-Walker at lag 3
        let want = 0.5 * ac.lags[2][(0, 0)] + 0.2 * ac.lags[1][(0, 0)];
        assert!((ac.lags[3][(0, 0)] - want).abs() < 1e-12);
    }

    #[test]
    fn autocovariance_rejects_explosive_models() {
        assert!(matches!(autocovariance(&scalar_model(&[1.1]), 1), Err(Error::Domain(_))));
        assert!(matches!(simulate(&scalar_model(&[1.0]), 10, 0, 1), Err(Error::Domain(_))));
    }

    #[test]
    fn simulation_is_deterministic_and_noiseless_hook_gives_zeros() {
        let m = scalar_model(&[0.5]);
        assert_eq!(simulate(&m, 50, 10, 9).unwrap(), simulate(&m, 50, 10, 9).unwrap());
        assert_ne!(simulate(&m, 50, 10, 9).unwrap(), simulate(&m, 50, 10, 10).unwrap());
        let opts = SimulateOptions { burn_in: 5, noise_scale: 0.0 };
        let z = simulate_with(&m, 20, opts, &mut seeded_rng(1)).unwrap();
        assert!(z.values.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn mu_extremes_closed_forms() {
        let (lo, hi) = mu_extremes(&Tensor3::zeros([2, 2, 3]), 64).unwrap();
        assert!((lo - 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
        let (lo, hi) = mu_extremes(scalar_model(&[0.5]).coeff(), 1024).unwrap();
        assert!((lo - 0.25).abs() < 1e-12);
        assert!((hi - 2.25).abs() < 1e-12);
        assert!(mu_extremes(&Tensor3::zeros([1, 1, 1]), 10).is_err());
    }

    #[test]
    fn mu_min_does_not_increase_under_refinement() {
        let mut r = rng(5);
        let slices: Vec<Mat> = (0..2).map(|_| random_matrix(&mut r, 3, 3) * 0.2).collect();
        let t = Tensor3::from_frontal_slices(&slices).unwrap();
        let (lo1, hi1) = mu_extremes(&t, 64).unwrap();
        let (lo2, hi2) = mu_extremes(&t, 128).unwrap();
        assert!(lo1 <= hi1);
        assert!(lo2 <= lo1 + 1e-15);
        assert!(hi2 >= hi1 - 1e-15);
    }

    #[test]
    fn random_orthonormal_square_has_unit_determinant() {
        let mut r = seeded_rng(3);
        let q = random_orthonormal(5, 5, &mut r).unwrap();
        assert!((q.determinant().abs() - 1.0).abs() < 1e-8);
        let u = random_orthonormal(6, 2, &mut r).unwrap();
        assert!(linalg::orthonormality_error(&u) < 1e-10);
        assert_eq!(random_orthonormal(6, 2, &mut seeded_rng(1)).unwrap(), random_orthonormal(6, 2, &mut seeded_rng(1)).unwrap());
    }

    #[test]
    fn sparse_factor_template_for_rank_two() {
        let spec = SparseFactorSpec { n: 10, p: 5, ranks: [2, 2, 2], sparsity: [3, 3, 2] };
        let [u1, _, u3] = generate_sparse_factors(&spec, &mut seeded_rng(2)).unwrap();
        assert_eq!(u3[(0, 0)], 1.0);
        assert_eq!(u3.column(0).iter().filter(|x| **x != 0.0).count(), 1);
        assert_eq!(u3[(0, 1)], 0.0);
        assert!(u3[(1, 1)] != 0.0 && u3[(2, 1)] != 0.0);
        assert!(u3.rows(3, 2).iter().all(|x| *x == 0.0));
        let e_norm = (u3[(1, 1)].powi(2) + u3[(2, 1)].powi(2)).sqrt();
        assert!((e_norm - 1.0).abs() < 1e-12);
        assert!(u1.rows(6, 4).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn sparse_factors_reject_infeasible_specs() {
        let spec = SparseFactorSpec { n: 5, p: 5, ranks: [3, 2, 2], sparsity: [2, 2, 2] };
        assert!(generate_sparse_factors(&spec, &mut seeded_rng(1)).is_err());
        let spec = SparseFactorSpec { n: 10, p: 4, ranks: [2, 2, 3], sparsity: [3, 3, 2] };
        assert!(generate_sparse_factors(&spec, &mut seeded_rng(1)).is_err());
    }

    #[test]
    fn superdiagonal_dgp_has_prescribed_singular_values() {
        let dgp = make_dgp(&DgpSpec::superdiagonal(10, 5, vec![2.0, 2.0, 2.0]), 1).unwrap();
        let m = dgp.var_model().unwrap();
        assert!(is_stationary(m.coeff()).stationary);
        for mode in Mode::ALL {
            let s = linalg::singular_values(&m.coeff().matricize(mode)).unwrap();
            for j in 0..3 {
                assert!((s[j] - 2.0).abs() < 1e-10);
            }
            assert!(s[3] < 1e-10);
        }
    }

    #[test]
    fn scaled_random_core_has_unit_smallest_singular_value() {
        let dgp = make_dgp(&DgpSpec::ScaledRandomCore { n: 10, p: 5, ranks: [3, 3, 2] }, 2).unwrap();
        let d = dgp.var_model().unwrap().decomp().unwrap();
        let mut smallest = f64::INFINITY;
        for mode in Mode::ALL {
            let s = linalg::singular_values(&d.core.matricize(mode)).unwrap();
            smallest = smallest.min(s[d.ranks()[mode.index()] - 1]);
        }
        assert!((smallest - 1.0).abs() < 1e-10);
    }

    #[test]
    fn dfm1_loading_has_unit_norm() {
        let Dgp::Dfm(d) = make_dgp(&DgpSpec::Dfm1 { n: 10 }, 3).unwrap() else { panic!("expected a DFM") };
        assert_eq!(d.loadings.shape(), (10, 1));
        assert!((d.loadings.norm() - 1.0).abs() < 1e-12);
        assert_eq!(d.transition[(0, 0)], 0.5);
    }
}
