//! Dense order-3 tensors, matricizations, mode products and the truncated
//! higher-order SVD.
//!
//! Storage is a single buffer with the first index varying fastest, so the
//! element `(i, j, k)` of a `p₁ × p₂ × p₃` tensor lives at
//! `i + p₁·(j + p₂·k)` (all indices 0-based in code).
//!
//! Matricizations follow the Kolda–Bader convention: in the mode-`m`
//! unfolding the remaining two indices are merged with the lower mode varying
//! fastest. For a VAR coefficient tensor with frontal slices `A₁,…,A_P` this
//! gives
//!
//! * mode 1: `(A₁, …, A_P)`,
//! * mode 2: `(A₁', …, A_P')`,
//! * mode 3: the matrix whose `k`-th row is `vec(A_k)'`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

/// One of the three tensor modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    One,
    Two,
    Three,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::One, Mode::Two, Mode::Three];

    pub fn index(self) -> usize {
        match self {
            Mode::One => 0,
            Mode::Two => 1,
            Mode::Three => 2,
        }
    }

    /// The two remaining modes, lower first.
    fn others(self) -> (usize, usize) {
        match self {
            Mode::One => (1, 2),
            Mode::Two => (0, 2),
            Mode::Three => (0, 1),
        }
    }
}

impl TryFrom<usize> for Mode {
    type Error = Error;

    /// Converts the 1-based mode number used in documentation.
    fn try_from(m: usize) -> Result<Self> {
        match m {
            1 => Ok(Mode::One),
            2 => Ok(Mode::Two),
            3 => Ok(Mode::Three),
            _ => Err(Error::Argument(format!("tensor mode must be 1, 2 or 3, got {m}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index() + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Tensor3 { dims, data: vec![0.0; dims[0] * dims[1] * dims[2]] }
    }

    /// Builds a tensor from a buffer in mode-1-fastest order.
    pub fn from_vec(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Argument(format!("tensor dimensions must be positive, got {dims:?}")));
        }
        let len = dims[0] * dims[1] * dims[2];
        if data.len() != len {
            return Err(Error::Argument(format!(
                "tensor of dims {dims:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor3 { dims, data })
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Tensor3::zeros(dims);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let idx = t.offset(i, j, k);
                    t.data[idx] = f(i, j, k);
                }
            }
        }
        t
    }

    /// Stacks `N × N` transition matrices `A₁,…,A_P` as frontal slices.
    pub fn from_frontal_slices(slices: &[Mat]) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::Argument("at least one slice is required".into()))?;
        let (r, c) = first.shape();
        if slices.iter().any(|s| s.shape() != (r, c)) {
            return Err(Error::Argument("frontal slices must share one shape".into()));
        }
        let mut data = Vec::with_capacity(r * c * slices.len());
        for s in slices {
            data.extend_from_slice(s.as_slice());
        }
        Tensor3::from_vec([r, c, slices.len()], data)
    }

    pub fn frontal_slice(&self, k: usize) -> Mat {
        let n = self.dims[0] * self.dims[1];
        Mat::from_column_slice(self.dims[0], self.dims[1], &self.data[k * n..(k + 1) * n])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    /// Element access with 0-based indices. Panics when out of range.
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        assert!(i < self.dims[0] && j < self.dims[1] && k < self.dims[2], "index out of range");
        self.data[self.offset(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        assert!(i < self.dims[0] && j < self.dims[1] && k < self.dims[2], "index out of range");
        let idx = self.offset(i, j, k);
        self.data[idx] = value;
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn l0_norm(&self) -> usize {
        self.data.iter().filter(|x| **x != 0.0).count()
    }

    pub fn scaled(&self, s: f64) -> Tensor3 {
        Tensor3 { dims: self.dims, data: self.data.iter().map(|x| x * s).collect() }
    }

    pub fn add(&self, other: &Tensor3) -> Result<Tensor3> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor3) -> Result<Tensor3> {
        self.zip(other, |a, b| a - b)
    }

    fn zip(&self, other: &Tensor3, f: impl Fn(f64, f64) -> f64) -> Result<Tensor3> {
        if self.dims != other.dims {
            return Err(Error::Argument(format!(
                "tensor dims differ: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect();
        Ok(Tensor3 { dims: self.dims, data })
    }

    /// Mode-`m` unfolding: a `p_m × ∏_{j≠m} p_j` matrix.
    pub fn matricize(&self, mode: Mode) -> Mat {
        let m = mode.index();
        let (a, b) = mode.others();
        let rows = self.dims[m];
        let (pa, pb) = (self.dims[a], self.dims[b]);
        let mut out = Mat::zeros(rows, pa * pb);
        let mut idx = [0usize; 3];
        for ib in 0..pb {
            idx[b] = ib;
            for ia in 0..pa {
                idx[a] = ia;
                let col = ia + pa * ib;
                for r in 0..rows {
                    idx[m] = r;
                    out[(r, col)] = self.data[self.offset(idx[0], idx[1], idx[2])];
                }
            }
        }
        out
    }

    /// Inverse of [`Tensor3::matricize`].
    pub fn tensorize(mat: &Mat, dims: [usize; 3], mode: Mode) -> Result<Tensor3> {
        let m = mode.index();
        let (a, b) = mode.others();
        let expected = (dims[m], dims[a] * dims[b]);
        if mat.shape() != expected || dims.iter().any(|&d| d == 0) {
            return Err(Error::Argument(format!(
                "a {}x{} matrix cannot be folded into dims {dims:?} along mode {mode}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        let mut t = Tensor3::zeros(dims);
        let mut idx = [0usize; 3];
        for ib in 0..dims[b] {
            idx[b] = ib;
            for ia in 0..dims[a] {
                idx[a] = ia;
                let col = ia + dims[a] * ib;
                for r in 0..dims[m] {
                    idx[m] = r;
                    let off = t.offset(idx[0], idx[1], idx[2]);
                    t.data[off] = mat[(r, col)];
                }
            }
        }
        Ok(t)
    }

    /// `t ×_m M`, replacing `p_m` by the row count of `M`.
    pub fn mode_product(&self, m: &Mat, mode: Mode) -> Result<Tensor3> {
        let idx = mode.index();
        if m.ncols() != self.dims[idx] {
            return Err(Error::Argument(format!(
                "mode-{mode} product needs a matrix with {} columns, got {}x{}",
                self.dims[idx],
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::Argument("mode product with an empty matrix".into()));
        }
        let mut dims = self.dims;
        dims[idx] = m.nrows();
        Tensor3::tensorize(&(m * self.matricize(mode)), dims, mode)
    }
}

/// A Tucker decomposition `G ×₁ U₁ ×₂ U₂ ×₃ U₃`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuckerDecomp {
    pub core: Tensor3,
    pub factors: [Mat; 3],
}

impl TuckerDecomp {
    pub fn new(core: Tensor3, factors: [Mat; 3]) -> Result<Self> {
        let d = TuckerDecomp { core, factors };
        d.check_shapes()?;
        Ok(d)
    }

    fn check_shapes(&self) -> Result<()> {
        let r = self.core.dims();
        for (i, u) in self.factors.iter().enumerate() {
            if u.ncols() != r[i] || u.nrows() == 0 {
                return Err(Error::Argument(format!(
                    "factor {} is {}x{} but the core has rank {} in that mode",
                    i + 1,
                    u.nrows(),
                    u.ncols(),
                    r[i]
                )));
            }
        }
        Ok(())
    }

    pub fn ranks(&self) -> [usize; 3] {
        self.core.dims()
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.factors[0].nrows(), self.factors[1].nrows(), self.factors[2].nrows()]
    }

    pub fn reconstruct(&self) -> Result<Tensor3> {
        self.check_shapes()?;
        self.core
            .mode_product(&self.factors[0], Mode::One)?
            .mode_product(&self.factors[1], Mode::Two)?
            .mode_product(&self.factors[2], Mode::Three)
    }

    /// Mode-1 unfolding of the reconstruction computed as `U₁ G₍₁₎ (U₃ ⊗ U₂)'`.
    pub fn mode1_kronecker_form(&self) -> Mat {
        let kr = linalg::kron(&self.factors[2], &self.factors[1]);
        &self.factors[0] * self.core.matricize(Mode::One) * kr.transpose()
    }
}

/// Truncated HOSVD: `U_i` are the top `r_i` left singular vectors of the
/// mode-`i` unfolding (first nonzero entry of each column positive), and the
/// core is `t ×₁ U₁' ×₂ U₂' ×₃ U₃'`.
pub fn hosvd_truncated(t: &Tensor3, ranks: [usize; 3]) -> Result<TuckerDecomp> {
    let dims = t.dims();
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
    let mut factors: Vec<Mat> = Vec::with_capacity(3);
    for mode in Mode::ALL {
        let unfolded = t.matricize(mode);
        let u = if unfolded.ncols() >= ranks[mode.index()] {
            linalg::leading_left_singular_vectors(&unfolded, ranks[mode.index()])?
        } else {
            // Fewer columns than the requested rank: pad through the Gram matrix.
            let gram = &unfolded * unfolded.transpose();
            linalg::leading_left_singular_vectors(&gram, ranks[mode.index()])?
        };
        factors.push(u);
    }
    let factors: [Mat; 3] = factors.try_into().expect("three factors");
    let core = t
        .mode_product(&factors[0].transpose(), Mode::One)?
        .mode_product(&factors[1].transpose(), Mode::Two)?
        .mode_product(&factors[2].transpose(), Mode::Three)?;
    TuckerDecomp::new(core, factors)
}

/// Multilinear ranks at relative tolerance `tol`.
pub fn multilinear_ranks(t: &Tensor3, tol: f64) -> Result<[usize; 3]> {
    let mut out = [0; 3];
    for mode in Mode::ALL {
        out[mode.index()] = linalg::numerical_rank(&t.matricize(mode), tol)?;
    }
    Ok(out)
}

/// A permutation of `{0, …, n−1}` acting on vectors by `(T v)[r] = v[source[r]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    source: Vec<usize>,
}

impl Permutation {
    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.source.iter().map(|&s| v[s]).collect()
    }

    /// Permutes the rows of `m`, i.e. computes `T · m`.
    pub fn apply_rows(&self, m: &Mat) -> Mat {
        let mut out = Mat::zeros(m.nrows(), m.ncols());
        for (r, &s) in self.source.iter().enumerate() {
            out.set_row(r, &m.row(s));
        }
        out
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.source.len()];
        for (r, &s) in self.source.iter().enumerate() {
            inv[s] = r;
        }
        Permutation { source: inv }
    }

    pub fn to_matrix(&self) -> Mat {
        let n = self.source.len();
        let mut m = Mat::zeros(n, n);
        for (r, &s) in self.source.iter().enumerate() {
            m[(r, s)] = 1.0;
        }
        m
    }
}

/// `T_ij` with `vec(t₍ⱼ₎) = T_ij · vec(t₍ᵢ₎)` for every tensor of the given dims.
pub fn permutation_matrix(dims: [usize; 3], from: Mode, to: Mode) -> Result<Permutation> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Argument(format!("tensor dimensions must be positive, got {dims:?}")));
    }
    let position = |mode: Mode, idx: [usize; 3]| -> usize {
        let m = mode.index();
        let (a, b) = mode.others();
        let col = idx[a] + dims[a] * idx[b];
        idx[m] + dims[m] * col
    };
    let n = dims[0] * dims[1] * dims[2];
    let mut source = vec![0; n];
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let idx = [i, j, k];
                source[position(to, idx)] = position(from, idx);
            }
        }
    }
    Ok(Permutation { source })
}
