//! Small dense matrices and eigenvalue diagnostics.
//!
//! These back the dense fallback of the Cholesky factorization and the
//! spectral checks of the preconditioner analysis. The eigensolver is a
//! cyclic Jacobi iteration; fine for the dimension cap enforced below.

use crate::{Error, Result};
use std::ops::{Index, IndexMut};

/// Hard cap for the dense eigenvalue routines; they are test diagnostics,
/// not production kernels.
pub const EIG_DIM_CAP: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>, // row-major
}

impl DenseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        DenseMatrix {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let nrows = rows.len();
        let ncols = if nrows == 0 { 0 } else { rows[0].len() };
        let mut m = Self::zeros(nrows, ncols);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), ncols, "ragged rows");
            m.data[i * ncols..(i + 1) * ncols].copy_from_slice(r);
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.ncols);
        let mut out = vec![0.0; self.nrows];
        for i in 0..self.nrows {
            let row = &self.data[i * self.ncols..(i + 1) * self.ncols];
            out[i] = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
        out
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.ncols, other.nrows);
        let mut out = DenseMatrix::zeros(self.nrows, other.ncols);
        for i in 0..self.nrows {
            for k in 0..self.ncols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.ncols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.ncols, self.nrows);
        for i in 0..self.nrows {
            for j in 0..self.ncols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Lower Cholesky factor of a symmetric positive definite matrix.
    pub fn cholesky_lower(&self) -> Result<DenseMatrix> {
        assert_eq!(self.nrows, self.ncols);
        let n = self.nrows;
        let mut l = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { index: j });
            }
            let dj = d.sqrt();
            l[(j, j)] = dj;
            for i in j + 1..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / dj;
            }
        }
        Ok(l)
    }

    /// Solve `L y = r` for a lower-triangular `self`.
    pub fn forward_solve(&self, r: &[f64]) -> Vec<f64> {
        let n = self.nrows;
        let mut y = r.to_vec();
        for i in 0..n {
            for k in 0..i {
                let v = y[k];
                y[i] -= self[(i, k)] * v;
            }
            y[i] /= self[(i, i)];
        }
        y
    }

    /// Solve `L' y = r` for a lower-triangular `self`.
    pub fn backward_solve_t(&self, r: &[f64]) -> Vec<f64> {
        let n = self.nrows;
        let mut y = r.to_vec();
        for i in (0..n).rev() {
            for k in i + 1..n {
                let v = y[k];
                y[i] -= self[(k, i)] * v;
            }
            y[i] /= self[(i, i)];
        }
        y
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.ncols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.ncols + j]
    }
}

/// All eigenvalues of a small symmetric matrix, ascending.
pub fn dense_eigs(s: &DenseMatrix) -> Result<Vec<f64>> {
    let n = s.nrows();
    if n != s.ncols() {
        return Err(Error::Dimension {
            context: "dense_eigs",
            expected: n,
            got: s.ncols(),
        });
    }
    if n > EIG_DIM_CAP {
        return Err(Error::DimensionCap {
            dim: n,
            cap: EIG_DIM_CAP,
        });
    }
    let mut a = s.clone();
    jacobi_sweep(&mut a);
    let mut eigs: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(eigs)
}

/// Generalized eigenvalues of the pencil `(S, B)` with `B` symmetric
/// positive definite, ascending.
pub fn dense_eigs_pencil(s: &DenseMatrix, b: &DenseMatrix) -> Result<Vec<f64>> {
    let n = s.nrows();
    if b.nrows() != n || b.ncols() != n {
        return Err(Error::Dimension {
            context: "dense_eigs_pencil",
            expected: n,
            got: b.nrows(),
        });
    }
    if n > EIG_DIM_CAP {
        return Err(Error::DimensionCap {
            dim: n,
            cap: EIG_DIM_CAP,
        });
    }
    // reduce S u = lambda B u to the standard problem via B = L L'
    let l = b.cholesky_lower()?;
    let mut c = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let col: Vec<f64> = (0..n).map(|i| s[(i, j)]).collect();
        let y = l.forward_solve(&col);
        for i in 0..n {
            c[(i, j)] = y[i];
        }
    }
    let mut red = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let row: Vec<f64> = (0..n).map(|j| c[(i, j)]).collect();
        let y = l.forward_solve(&row);
        for j in 0..n {
            red[(i, j)] = y[j];
        }
    }
    // symmetrize against rounding before the Jacobi sweep
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (red[(i, j)] + red[(j, i)]);
            red[(i, j)] = v;
            red[(j, i)] = v;
        }
    }
    dense_eigs(&red)
}

fn jacobi_sweep(a: &mut DenseMatrix) {
    let n = a.nrows();
    if n <= 1 {
        return;
    }
    let scale = a.max_abs().max(1.0);
    let tol = 1e-14 * scale;
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                off = off.max(a[(i, j)].abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() <= tol * 1e-2 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
}
