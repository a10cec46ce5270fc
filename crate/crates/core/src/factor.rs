//! Static and dynamic factor model baselines and the subspace distance used
//! to compare estimated response subspaces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::regression::{build_design, fit_ols, Design};
use crate::tensor3::{Mode, Tensor3, TuckerDecomp};
use crate::var_process::{forecast_one_step, TimeSeries, VarModel};

/// Principal-component fit of `Y ≈ F Λ'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfmFit {
    /// `N × r`
    pub loadings: Mat,
    /// `T × r`, normalized so that `F'F/T = I`.
    pub factors: Mat,
}

impl SfmFit {
    pub fn r(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn fitted(&self) -> Mat {
        &self.factors * self.loadings.transpose()
    }

    /// `Λ̂(Λ̂'Λ̂)^{-1/2}`, an orthonormal basis of the loading span.
    pub fn normalized_loadings(&self) -> Result<Mat> {
        orthonormal_basis(&self.loadings)
    }
}

/// `F̂ = √T × (top r left singular vectors of Y)` and `Λ̂ = Y'F̂/T`. Loading
/// columns are sign-normalized; the matching factor columns flip with them.
pub fn fit_sfm(ts: &TimeSeries, r: usize) -> Result<SfmFit> {
    let (t, n) = (ts.len(), ts.n_vars());
    if r == 0 || r > t.min(n) {
        return Err(Error::Argument(format!("factor count must lie in 1..={}, got {r}", t.min(n))));
    }
    let s = linalg::svd(&ts.values)?;
    let tf = t as f64;
    let mut factors = s.u.columns(0, r) * tf.sqrt();
    let mut loadings = ts.values.transpose() * &factors / tf;
    for j in 0..r {
        let scale = loadings.column(j).amax();
        let first = loadings.column(j).iter().copied().find(|x| x.abs() > 1e-12 * scale);
        if matches!(first, Some(v) if v < 0.0) {
            loadings.column_mut(j).neg_mut();
            factors.column_mut(j).neg_mut();
        }
    }
    Ok(SfmFit { loadings, factors })
}

fn orthonormal_basis(a: &Mat) -> Result<Mat> {
    if a.ncols() == 0 || a.iter().all(|x| *x == 0.0) {
        return Err(Error::Argument("subspace needs at least one nonzero column".into()));
    }
    let s = linalg::svd(a)?;
    let top = s.singular_values[0];
    let cut = a.nrows().max(a.ncols()) as f64 * f64::EPSILON * top * 10.0;
    let rank = s.singular_values.iter().filter(|&&x| x > cut).count();
    Ok(s.u.columns(0, rank).into_owned())
}

/// `‖P_A − P_B‖_F` for the orthogonal projectors onto the column spaces.
/// Rank-deficient inputs are orthonormalized first.
pub fn subspace_distance(a: &Mat, b: &Mat) -> Result<f64> {
    if a.nrows() != b.nrows() {
        return Err(Error::Argument(format!(
            "subspaces live in R^{} and R^{}",
            a.nrows(),
            b.nrows()
        )));
    }
    if a.ncols() == 0 || b.ncols() == 0 || a.iter().all(|x| *x == 0.0) || b.iter().all(|x| *x == 0.0) {
        return Err(Error::Argument("subspace needs at least one nonzero column".into()));
    }
    let pa = linalg::column_projector(a)?;
    let pb = linalg::column_projector(b)?;
    Ok((pa - pb).norm())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfmForecast {
    pub forecast: Vector,
    /// Factor VAR coefficients, `r × r × var_order`.
    pub factor_coeff: Tensor3,
    /// The factor VAR was singular and a small ridge was added.
    pub ridge_used: bool,
}

fn ridge_var(d: &Design) -> Result<Tensor3> {
    let g = d.gram();
    let np = g.sxx.nrows();
    let alpha = 1e-8 * (g.sxx.trace() / np as f64).max(1.0);
    let reg = &g.sxx + Mat::identity(np, np) * alpha;
    let (b, _) = linalg::solve_spd(&reg, &g.sxy)?;
    Tensor3::tensorize(&b.transpose(), d.dims(), Mode::One)
}

/// Two-step dynamic factor forecast: principal-component factors, a VAR of
/// order `var_order` fitted to them by least squares, and
/// `ŷ_{T+1} = Λ̂ f̂_{T+1}`.
pub fn dfm_forecast(ts: &TimeSeries, r: usize, var_order: usize) -> Result<DfmForecast> {
    if var_order == 0 {
        return Err(Error::Argument("factor VAR order must be at least 1".into()));
    }
    let sfm = fit_sfm(ts, r)?;
    let fts = TimeSeries::new(sfm.factors.clone(), None)?;
    let d = build_design(&fts, var_order)?;
    let (factor_coeff, ridge_used) = match fit_ols(&d) {
        Ok(c) => (c, false),
        Err(Error::RankDeficient { .. }) => (ridge_var(&d)?, true),
        Err(e) => return Err(e),
    };
    let f_next = forecast_one_step(&factor_coeff, &fts)?;
    Ok(DfmForecast { forecast: &sfm.loadings * f_next, factor_coeff, ridge_used })
}

/// Outcome of rebuilding the factor representation `Y = FΛ' + E` of a
/// Tucker-structured VAR from its true parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfmRepresentation {
    pub loadings: Mat,
    pub factors: Mat,
    /// `‖F'F/T − I‖_max`
    pub factor_normalization: f64,
    /// Largest off-diagonal `|Λ'Λ|` relative to its largest entry.
    pub loading_off_diagonal: f64,
    /// `‖P_Λ − P_{U₁}‖_F`
    pub span_distance: f64,
    /// `‖(Y − FΛ') − E‖_max` with `E` the true innovations.
    pub residual_error: f64,
}

impl SfmRepresentation {
    pub fn holds(&self, tol: f64) -> bool {
        self.factor_normalization <= tol
            && self.loading_off_diagonal <= tol
            && self.span_distance <= tol
            && self.residual_error <= tol
    }
}

/// Builds `F = √T U_x`, `Λ = U₁ V_x D_x/√T` from the SVD
/// `X(U₃⊗U₂)G₍₁₎' = U_x D_x V_x'` and measures how exactly the factor form
/// holds on `ts`.
pub fn sfm_representation_check(model: &VarModel, decomp: &TuckerDecomp, ts: &TimeSeries) -> Result<SfmRepresentation> {
    let [n, _, p] = model.coeff().dims();
    if decomp.dims() != [n, n, p] {
        return Err(Error::Argument("decomposition does not match the model".into()));
    }
    let d = build_design(ts, p)?;
    let [u1, u2, u3] = &decomp.factors;
    let z = d.x() * u3.kronecker(u2) * decomp.core.matricize(Mode::One).transpose();
    let r1 = z.ncols();
    let s = linalg::svd(&z)?;
    let t = d.t_eff() as f64;
    let k = s.singular_values.len().min(r1);
    let dx = Mat::from_diagonal(&Vector::from_iterator(k, s.singular_values.iter().copied().take(k)));
    let factors = s.u.columns(0, k) * t.sqrt();
    let loadings = u1 * s.v.columns(0, k) * dx / t.sqrt();

    let ftf = factors.transpose() * &factors / t - Mat::identity(k, k);
    let ltl = loadings.transpose() * &loadings;
    let mut off = 0.0_f64;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                off = off.max(ltl[(i, j)].abs());
            }
        }
    }
    let scale = linalg::max_abs(&ltl).max(f64::MIN_POSITIVE);
    let innovations = d.residuals(model.coeff());
    let residual = d.y() - &factors * loadings.transpose();
    Ok(SfmRepresentation {
        factor_normalization: linalg::max_abs(&ftf),
        loading_off_diagonal: off / scale,
        span_distance: subspace_distance(&loadings, u1)?,
        residual_error: linalg::max_abs(&(residual - innovations)),
        loadings,
        factors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_matrix, rng};
    use crate::var_process::{make_dgp, simulate, DgpSpec};

    #[test]
    fn sfm_reproduces_exact_factor_data() {
        let mut g = rng(1);
        let f = random_matrix(&mut g, 60, 3);
        let l = random_matrix(&mut g, 8, 3);
        let ts = TimeSeries::new(&f * l.transpose(), None).unwrap();
        let fit = fit_sfm(&ts, 3).unwrap();
        assert!(linalg::max_abs(&(fit.fitted() - &ts.values)) < 1e-8);
        let ftf = fit.factors.transpose() * &fit.factors / 60.0;
        assert!(linalg::max_abs(&(ftf - Mat::identity(3, 3))) < 1e-10);
        let ltl = fit.loadings.transpose() * &fit.loadings;
        assert!(ltl[(0, 1)].abs() + ltl[(0, 2)].abs() + ltl[(1, 2)].abs() < 1e-8 * ltl.amax());
    }

    #[test]
    fn sfm_loading_span_matches_right_singular_vectors() {
        let mut g = rng(2);
        let ts = TimeSeries::new(random_matrix(&mut g, 40, 6), None).unwrap();
        let fit = fit_sfm(&ts, 2).unwrap();
        let v = linalg::svd(&ts.values).unwrap().v.columns(0, 2).into_owned();
        let p1 = linalg::column_projector(&fit.loadings).unwrap();
        let p2 = &v * v.transpose();
        assert!(linalg::max_abs(&(p1 - p2)) < 1e-8);
    }

    #[test]
    fn sfm_residual_energy_is_the_singular_value_tail() {
        let mut g = rng(3);
        let ts = TimeSeries::new(random_matrix(&mut g, 30, 7), None).unwrap();
        let fit = fit_sfm(&ts, 3).unwrap();
        let tail: f64 = linalg::singular_values(&ts.values).unwrap()[3..].iter().map(|s| s * s).sum();
        let err = (&ts.values - fit.fitted()).norm_squared();
        assert!((err - tail).abs() < 1e-8 * tail.max(1.0));
    }

    #[test]
    fn sfm_rejects_bad_factor_counts() {
        let ts = TimeSeries::new(Mat::identity(4, 3), None).unwrap();
        assert!(matches!(fit_sfm(&ts, 0), Err(Error::Argument(_))));
        assert!(matches!(fit_sfm(&ts, 4), Err(Error::Argument(_))));
    }

    #[test]
    fn orthogonal_lines_are_sqrt_two_apart() {
        let a = Mat::from_column_slice(2, 1, &[1.0, 0.0]);
        let b = Mat::from_column_slice(2, 1, &[0.0, 3.0]);
        assert!((subspace_distance(&a, &b).unwrap() - 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(subspace_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn subspace_distance_ignores_basis_changes() {
        let mut g = rng(4);
        let a = random_matrix(&mut g, 7, 3);
        let b = random_matrix(&mut g, 7, 3);
        let m = random_matrix(&mut g, 3, 3);
        let d1 = subspace_distance(&a, &b).unwrap();
        let d2 = subspace_distance(&(&a * m), &b).unwrap();
        assert!((d1 - d2).abs() < 1e-10);
    }

    #[test]
    fn subspace_distance_rejects_zero_columns() {
        let z = Mat::zeros(3, 1);
        assert!(matches!(subspace_distance(&z, &Mat::identity(3, 1)), Err(Error::Argument(_))));
        assert!(matches!(subspace_distance(&Mat::identity(4, 1), &Mat::identity(3, 1)), Err(Error::Argument(_))));
    }

    #[test]
    fn dfm_forecast_of_zero_series_is_zero() {
        let ts = TimeSeries::new(Mat::zeros(50, 4), None).unwrap();
        let f = dfm_forecast(&ts, 2, 1).unwrap();
        assert!(f.forecast.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn short_factor_var_falls_back_to_ridge() {
        let mut g = rng(11);
        let ts = TimeSeries::new(random_matrix(&mut g, 4, 5), None).unwrap();
        let f = dfm_forecast(&ts, 3, 2).unwrap();
        assert!(f.ridge_used);
        assert!(f.forecast.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn saturated_dfm_matches_var_ols_forecast() {
        let dgp = make_dgp(&DgpSpec::ScaledRandomCore { n: 4, p: 2, ranks: [2, 2, 2] }, 5).unwrap();
        let ts = simulate(dgp.var_model().unwrap(), 300, 100, 6).unwrap();
        let dfm = dfm_forecast(&ts, 4, 2).unwrap();
        let ols = fit_ols(&build_design(&ts, 2).unwrap()).unwrap();
        let direct = forecast_one_step(&ols, &ts).unwrap();
        assert!((dfm.forecast - direct).amax() < 1e-6);
    }

    #[test]
    fn representation_holds_on_a_tucker_var() {
        let dgp = make_dgp(&DgpSpec::ScaledRandomCore { n: 8, p: 3, ranks: [2, 3, 2] }, 7).unwrap();
        let m = dgp.var_model().unwrap();
        let ts = simulate(m, 400, 100, 8).unwrap();
        let rep = sfm_representation_check(m, m.decomp().unwrap(), &ts).unwrap();
        assert!(rep.holds(1e-8), "{rep:?}");
    }

    #[test]
    fn representation_span_ignores_factor_column_order() {
        let dgp = make_dgp(&DgpSpec::ScaledRandomCore { n: 6, p: 2, ranks: [3, 2, 2] }, 9).unwrap();
        let m = dgp.var_model().unwrap();
        let dec = m.decomp().unwrap();
        let ts = simulate(m, 200, 100, 10).unwrap();
        let base = sfm_representation_check(m, dec, &ts).unwrap();
        let perm = [2usize, 0, 1];
        let u1 = Mat::from_fn(6, 3, |i, j| dec.factors[0][(i, perm[j])]);
        let core = Tensor3::from_fn(dec.core.dims(), |i, j, k| dec.core.get(perm[i], j, k));
        let swapped = TuckerDecomp::new(core, [u1, dec.factors[1].clone(), dec.factors[2].clone()]).unwrap();
        let rep = sfm_representation_check(m, &swapped, &ts).unwrap();
        assert!((rep.span_distance - base.span_distance).abs() < 1e-12);
        assert!(rep.span_distance < 1e-8);
    }
}
