//! Sparse and small-dense linear-algebra kernel.
//!
//! Column-compressed sparse matrices with matrix-vector products, Gram
//! assembly over selected columns, Cholesky factorization (sparse with a
//! dense fallback for small blocks) and dense eigenvalue diagnostics used
//! by the spectral test suites. All values are immutable after
//! construction and all operations are pure functions with a
//! deterministic summation order.

mod cholesky;
mod dense;
pub mod mm;
mod sparse;
pub mod vecops;

pub use cholesky::{cholesky, CholeskyFactor};
pub use dense::{dense_eigs, dense_eigs_pencil, DenseMatrix, EIG_DIM_CAP};
pub use sparse::{gram_plus_shift, SparseMatrix};

/// Dense vectors are plain `Vec<f64>`; see [`vecops`] for the few shared
/// kernels (dot products, norms, axpy).
pub type DenseVector = Vec<f64>;
