//! Dense linear-algebra helpers shared by the estimators.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`. SVDs and symmetric
//! eigen-decompositions go through `faer`, whose SVD stays accurate on exactly
//! rank-deficient input. Singular values come in descending order and
//! eigenvalues in ascending order.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Thin SVD with singular values sorted in descending order.
#[derive(Debug, Clone)]
pub struct SortedSvd {
    pub u: Mat,
    pub singular_values: Vec<f64>,
    pub v: Mat,
}

fn to_faer(m: &Mat) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, f64>) -> Mat {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn check_finite(m: &Mat, what: &str) -> Result<()> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical(format!("{what} input contains non-finite entries")));
    }
    Ok(())
}

pub fn svd(m: &Mat) -> Result<SortedSvd> {
    check_finite(m, "SVD")?;
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(SortedSvd {
            u: Mat::zeros(rows, 0),
            singular_values: Vec::new(),
            v: Mat::zeros(cols, 0),
        });
    }
    let decomp = to_faer(m)
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD failed on a {rows}x{cols} matrix: {e:?}")))?;
    let s = decomp.S().column_vector();
    Ok(SortedSvd {
        u: from_faer(decomp.U()),
        singular_values: (0..s.nrows()).map(|i| s[i]).collect(),
        v: from_faer(decomp.V()),
    })
}

pub fn singular_values(m: &Mat) -> Result<Vec<f64>> {
    check_finite(m, "SVD")?;
    if m.is_empty() {
        return Ok(Vec::new());
    }
    to_faer(m).singular_values().map_err(|e| Error::Numerical(format!("singular values failed: {e:?}")))
}

/// Flip column signs so that the first entry of each column that is
/// meaningfully nonzero is positive.
pub fn normalize_column_signs(m: &mut Mat) {
    for mut col in m.column_iter_mut() {
        let scale = col.amax();
        if scale == 0.0 {
            continue;
        }
        let cut = 1e-12 * scale;
        if let Some(first) = col.iter().copied().find(|x| x.abs() > cut) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
}

/// Top-`r` left singular vectors, sign-normalized.
pub fn leading_left_singular_vectors(m: &Mat, r: usize) -> Result<Mat> {
    let s = svd(m)?;
    if r > s.u.ncols() {
        return Err(Error::Argument(format!(
            "requested {r} singular vectors from a matrix of rank at most {}",
            s.u.ncols()
        )));
    }
    let mut u = s.u.columns(0, r).into_owned();
    normalize_column_signs(&mut u);
    Ok(u)
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

/// Column-major vectorization.
pub fn vec(m: &Mat) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &[f64], rows: usize, cols: usize) -> Mat {
    Mat::from_column_slice(rows, cols, v)
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn l1_norm(m: &Mat) -> f64 {
    m.iter().map(|x| x.abs()).sum()
}

pub fn count_nonzero(m: &Mat) -> usize {
    m.iter().filter(|x| **x != 0.0).count()
}

/// `‖U'U − I‖_max`.
pub fn orthonormality_error(u: &Mat) -> f64 {
    let g = u.transpose() * u;
    max_abs(&(g - Mat::identity(u.ncols(), u.ncols())))
}

/// Numerical rank with a relative cutoff `tol · σ₁`.
pub fn numerical_rank(m: &Mat, tol: f64) -> Result<usize> {
    let s = singular_values(m)?;
    let Some(&top) = s.first() else { return Ok(0) };
    if top == 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&x| x > tol * top).count())
}

/// Moore–Penrose pseudoinverse. Singular values below `cutoff` are treated as
/// zero; `None` uses `max(rows, cols) · eps · σ₁`.
pub fn pinv(m: &Mat, cutoff: Option<f64>) -> Result<Mat> {
    let s = svd(m)?;
    let top = s.singular_values.first().copied().unwrap_or(0.0);
    let cut = cutoff.unwrap_or_else(|| m.nrows().max(m.ncols()) as f64 * f64::EPSILON * top);
    let mut out = Mat::zeros(m.ncols(), m.nrows());
    for (k, &sk) in s.singular_values.iter().enumerate() {
        if sk > cut {
            out += (s.v.column(k) * s.u.column(k).transpose()) / sk;
        }
    }
    Ok(out)
}

/// Symmetric eigen-decomposition with eigenvalues in ascending order.
pub fn symmetric_eigen(m: &Mat) -> (Vec<f64>, Mat) {
    let sym = (m + m.transpose()) * 0.5;
    let n = sym.nrows();
    if n == 0 || sym.iter().any(|x| !x.is_finite()) {
        return (vec![f64::NAN; n], Mat::from_element(n, n, f64::NAN));
    }
    match to_faer(&sym).self_adjoint_eigen(faer::Side::Lower) {
        Ok(e) => {
            let s = e.S().column_vector();
            ((0..n).map(|i| s[i]).collect(), from_faer(e.U()))
        }
        Err(_) => (vec![f64::NAN; n], Mat::from_element(n, n, f64::NAN)),
    }
}

pub fn min_eigenvalue(m: &Mat) -> f64 {
    symmetric_eigen(m).0.first().copied().unwrap_or(0.0)
}

pub fn max_eigenvalue(m: &Mat) -> f64 {
    symmetric_eigen(m).0.last().copied().unwrap_or(0.0)
}

/// Solve the symmetric positive (semi)definite system `a x = b`.
///
/// Falls back to a ridge of `1e-10 · trace(a)` when the Cholesky factorization
/// fails. The returned flag reports whether the fallback was used.
pub fn solve_spd(a: &Mat, b: &Mat) -> Result<(Mat, bool)> {
    if let Some(ch) = a.clone().cholesky() {
        let x = ch.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok((x, false));
        }
    }
    let n = a.nrows();
    let ridge = 1e-10 * a.trace().abs().max(f64::MIN_POSITIVE);
    let mut reg = a.clone();
    for i in 0..n {
        reg[(i, i)] += ridge;
    }
    match reg.cholesky() {
        Some(ch) => Ok((ch.solve(b), true)),
        None => {
            // Indefinite through rounding: least-squares via pseudoinverse.
            Ok((pinv(a, None)? * b, true))
        }
    }
}

pub fn is_symmetric(m: &Mat, tol: f64) -> bool {
    m.is_square() && max_abs(&(m - m.transpose())) <= tol
}

/// `‖P_A − P_B‖_F`-ready projector onto the column space of `a`.
pub fn column_projector(a: &Mat) -> Result<Mat> {
    let s = svd(a)?;
    let top = s.singular_values.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return Err(Error::Argument("cannot project onto the span of a zero matrix".into()));
    }
    let cut = a.nrows().max(a.ncols()) as f64 * f64::EPSILON * top * 10.0;
    let rank = s.singular_values.iter().filter(|&&x| x > cut).count();
    let q = s.u.columns(0, rank);
    Ok(&q * q.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svd_is_sorted_and_reconstructs() {
        let m = Mat::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 7.0]);
        let s = svd(&m).unwrap();
        assert!(s.singular_values[0] >= s.singular_values[1]);
        let d = Mat::from_diagonal(&Vector::from_vec(s.singular_values.clone()));
        let back = &s.u * d * s.v.transpose();
        assert!(max_abs(&(back - m)) < 1e-12);
    }

    #[test]
    fn sign_normalization_makes_first_nonzero_positive() {
        let mut m = Mat::from_row_slice(3, 2, &[0.0, -1.0, -2.0, 0.5, 1.0, 0.0]);
        normalize_column_signs(&mut m);
        assert_eq!(m[(1, 0)], 2.0);
        assert_eq!(m[(0, 1)], 1.0);
    }

    #[test]
    fn pinv_of_rank_deficient_matrix() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = pinv(&m, None).unwrap();
        assert!(max_abs(&(&m * &p * &m - &m)) < 1e-12);
        assert!((p[(0, 0)] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn ridge_fallback_flags_singular_systems() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = Mat::from_column_slice(2, 1, &[1.0, 1.0]);
        let (_, fallback) = solve_spd(&a, &b).unwrap();
        assert!(fallback);
    }
}
