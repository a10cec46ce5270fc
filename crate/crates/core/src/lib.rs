//! Multilinear low-rank vector autoregression.
//!
//! The transition matrices `A₁,…,A_P` of a VAR(P) model are stacked into an
//! `N × N × P` tensor and constrained to a Tucker form
//! `G ×₁ U₁ ×₂ U₂ ×₃ U₃`. The crate provides the least-squares estimator under
//! that constraint (alternating least squares), a sparse and orthogonal
//! variant solved by nested ADMM, rank and penalty selection, the usual
//! convex baselines, asymptotic covariances, factor-model comparisons and a
//! seeded Monte Carlo harness.
//!
//! ```
//! use mlrvar::{regression, var_process::{make_dgp, DgpSpec}};
//!
//! let dgp = make_dgp(&DgpSpec::superdiagonal(10, 5, vec![2.0, 2.0, 2.0]), 7).unwrap();
//! let model = dgp.var_model().unwrap();
//! let ts = mlrvar::var_process::simulate(model, 400, 500, 11).unwrap();
//! let design = regression::build_design(&ts, 5).unwrap();
//! let ols = regression::fit_ols(&design).unwrap();
//! assert_eq!(ols.dims(), [10, 10, 5]);
//! ```

pub mod error;
pub mod factor;
pub mod harness;
pub mod linalg;
pub mod mlr;
pub mod regression;
pub mod selection;
mod serde_nan;
pub mod shorr;
pub mod tensor3;
pub mod var_process;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use tensor3::{Mode, Tensor3, TuckerDecomp};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/tensors.md")]
    struct Tensors;
    #[doc = include_str!("../../../book/src/processes.md")]
    struct Processes;
    #[doc = include_str!("../../../book/src/estimation.md")]
    struct Estimation;
    #[doc = include_str!("../../../book/src/sparse.md")]
    struct Sparse;
    #[doc = include_str!("../../../book/src/selection.md")]
    struct Selection;
    #[doc = include_str!("../../../book/src/factors.md")]
    struct Factors;
    #[doc = include_str!("../../../book/src/harness.md")]
    struct Harness;
}
