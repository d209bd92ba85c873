//! Active-set solver for convex quadratic programs with piecewise-linear
//! terms in the objective.
//!
//! The solver targets problems of the form
//!
//! ```text
//!     minimize    c'x + 1/2 x'Qx + sum_i ((Cx + d)_i)_+ + ||Dx||_1
//!     subject to  Ax = b,    a_l <= x <= a_u,
//! ```
//!
//! with `Q` positive semi-definite, `D` a diagonal weight matrix and the
//! bounds possibly infinite. Hinge sums, weighted l1 terms and
//! max-of-affine terms all reduce to this shape.
//!
//! The method is an inexact proximal method of multipliers (outer loop,
//! [`pmm`]) whose sub-problems are solved by a semismooth Newton method
//! (inner loop, [`ssn`]). The Newton systems are symmetric quasi-definite
//! saddle-point systems solved by MINRES with a block-diagonal active-set
//! preconditioner ([`krylov`]). Problem generators for CVaR / mean absolute
//! semi-deviation portfolio selection, penalized quantile regression and
//! elastic-net linear SVMs live in [`apps`].

#![allow(clippy::needless_range_loop)] // indexed loops over parallel arrays

pub mod apps;
pub mod io;
pub mod linalg;
pub mod model;
pub mod pmm;
pub mod ssn;

pub mod krylov;

#[cfg(test)]
pub(crate) mod test_fixtures;

pub use linalg::{CholeskyFactor, DenseMatrix, SparseMatrix};
pub use model::{InternalProblem, KktResiduals, ProblemSpec};
pub use pmm::{solve, PmmConfig, SolveOutput, SolveReport, SolveStatus};
pub use ssn::SsnConfig;

pub use krylov::MinresConfig;

/// Errors produced by the solver library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("matrix is not positive definite (pivot {index})")]
    NotPositiveDefinite { index: usize },
    #[error("negative entry {value} at position {index} where a nonnegative value is required")]
    NegativeEntry { index: usize, value: f64 },
    #[error("dimension {dim} exceeds cap {cap} for dense eigenvalue routines")]
    DimensionCap { dim: usize, cap: usize },
    #[error("invalid problem: {0:?}")]
    InvalidProblem(Vec<String>),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line search failed after {backtracks} backtracks")]
    LineSearchFailure { backtracks: usize },
    #[error("search direction is not a descent direction")]
    NonDescent,
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
