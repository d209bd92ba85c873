//! Cholesky factorization of symmetric positive definite matrices.
//!
//! Matrices of dimension at most 64 fall back to a dense factorization;
//! larger ones use an up-looking simplicial factorization driven by the
//! elimination tree (natural ordering, no fill-reducing permutation).

use super::dense::DenseMatrix;
use super::sparse::SparseMatrix;
use crate::{Error, Result};

const DENSE_DIM_CAP: usize = 64;
const NONE: usize = usize::MAX;

#[derive(Debug, Clone)]
pub enum CholeskyFactor {
    Dense { l: DenseMatrix },
    Sparse(SparseLower),
}

/// Lower factor in column-compressed form; row indices strictly
/// increasing within each column, diagonal entry first.
#[derive(Debug, Clone)]
pub struct SparseLower {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        match self {
            CholeskyFactor::Dense { l } => l.nrows(),
            CholeskyFactor::Sparse(f) => f.n,
        }
    }

    /// Solve `L L' u = r`.
    pub fn solve(&self, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.dim() {
            return Err(Error::Dimension {
                context: "cholesky solve",
                expected: self.dim(),
                got: r.len(),
            });
        }
        match self {
            CholeskyFactor::Dense { l } => {
                let y = l.forward_solve(r);
                Ok(l.backward_solve_t(&y))
            }
            CholeskyFactor::Sparse(f) => {
                let mut x = r.to_vec();
                // forward: L y = r, columns left to right
                for j in 0..f.n {
                    let (a, b) = (f.col_ptr[j], f.col_ptr[j + 1]);
                    let xj = x[j] / f.values[a];
                    x[j] = xj;
                    for p in a + 1..b {
                        x[f.row_idx[p]] -= f.values[p] * xj;
                    }
                }
                // backward: L' u = y, columns right to left
                for j in (0..f.n).rev() {
                    let (a, b) = (f.col_ptr[j], f.col_ptr[j + 1]);
                    let mut s = x[j];
                    for p in a + 1..b {
                        s -= f.values[p] * x[f.row_idx[p]];
                    }
                    x[j] = s / f.values[a];
                }
                Ok(x)
            }
        }
    }

    /// Dense copy of the lower factor, for small-scale inspection.
    pub fn lower_dense(&self) -> DenseMatrix {
        match self {
            CholeskyFactor::Dense { l } => l.clone(),
            CholeskyFactor::Sparse(f) => {
                let mut d = DenseMatrix::zeros(f.n, f.n);
                for j in 0..f.n {
                    for p in f.col_ptr[j]..f.col_ptr[j + 1] {
                        d[(f.row_idx[p], j)] = f.values[p];
                    }
                }
                d
            }
        }
    }
}

/// Factorize a symmetric positive definite matrix stored with both
/// triangles.
pub fn cholesky(s: &SparseMatrix) -> Result<CholeskyFactor> {
    if s.nrows() != s.ncols() {
        return Err(Error::Dimension {
            context: "cholesky input",
            expected: s.nrows(),
            got: s.ncols(),
        });
    }
    let n = s.nrows();
    if n <= DENSE_DIM_CAP {
        let l = s.to_dense().cholesky_lower()?;
        return Ok(CholeskyFactor::Dense { l });
    }
    sparse_cholesky(s).map(CholeskyFactor::Sparse)
}

/// Elimination tree of the upper-triangular pattern.
fn etree(s: &SparseMatrix) -> Vec<usize> {
    let n = s.ncols();
    let mut parent = vec![NONE; n];
    let mut ancestor = vec![NONE; n];
    for k in 0..n {
        let (rows, _) = s.col(k);
        for &row in rows {
            let mut i = row;
            while i != NONE && i < k {
                let inext = ancestor[i];
                ancestor[i] = k;
                if inext == NONE {
                    parent[i] = k;
                }
                i = inext;
            }
        }
    }
    parent
}

/// Pattern of row `k` of `L`: the rows reachable from the upper entries of
/// column `k` through the elimination tree. Returns indices pushed onto
/// `stack[top..]` in topological (ascending) order.
fn ereach(
    s: &SparseMatrix,
    k: usize,
    parent: &[usize],
    mark: &mut [usize],
    stack: &mut [usize],
) -> usize {
    let n = s.ncols();
    let mut top = n;
    mark[k] = k + 1;
    let (rows, _) = s.col(k);
    let mut path = Vec::new();
    for &row in rows {
        if row >= k {
            continue;
        }
        let mut i = row;
        path.clear();
        while mark[i] != k + 1 {
            path.push(i);
            mark[i] = k + 1;
            i = parent[i];
            if i == NONE {
                break;
            }
        }
        for &p in path.iter().rev() {
            top -= 1;
            stack[top] = p;
        }
    }
    // entries were pushed per start node; globally sort the slice so the
    // numeric sweep visits columns in ascending order
    stack[top..n].sort_unstable();
    top
}

fn sparse_cholesky(s: &SparseMatrix) -> Result<SparseLower> {
    let n = s.ncols();
    let parent = etree(s);

    // symbolic pass: count entries per column of L
    let mut counts = vec![1usize; n]; // diagonal
    {
        let mut mark = vec![0usize; n];
        let mut stack = vec![0usize; n];
        for k in 0..n {
            let top = ereach(s, k, &parent, &mut mark, &mut stack);
            for &j in &stack[top..n] {
                counts[j] += 1;
            }
        }
    }
    let mut col_ptr = vec![0usize; n + 1];
    for j in 0..n {
        col_ptr[j + 1] = col_ptr[j] + counts[j];
    }
    let nnz = col_ptr[n];
    let mut row_idx = vec![0usize; nnz];
    let mut values = vec![0.0f64; nnz];
    let mut fill = col_ptr.clone(); // next free slot per column

    let mut x = vec![0.0f64; n];
    let mut mark = vec![0usize; n];
    let mut stack = vec![0usize; n];
    for k in 0..n {
        let top = ereach(s, k, &parent, &mut mark, &mut stack);
        // scatter upper part of column k of S
        let mut d = 0.0;
        {
            let (rows, vals) = s.col(k);
            for (&i, &v) in rows.iter().zip(vals) {
                if i < k {
                    x[i] = v;
                } else if i == k {
                    d = v;
                }
            }
        }
        // sparse triangular solve along the row pattern
        for &j in &stack[top..n] {
            let lkj = x[j] / values[col_ptr[j]];
            x[j] = 0.0;
            for p in col_ptr[j] + 1..fill[j] {
                x[row_idx[p]] -= values[p] * lkj;
            }
            d -= lkj * lkj;
            let p = fill[j];
            row_idx[p] = k;
            values[p] = lkj;
            fill[j] += 1;
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { index: k });
        }
        let p = fill[k];
        debug_assert_eq!(p, col_ptr[k]);
        row_idx[p] = k;
        values[p] = d.sqrt();
        fill[k] += 1;
    }
    Ok(SparseLower {
        n,
        col_ptr,
        row_idx,
        values,
    })
}
