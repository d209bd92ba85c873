//! Column-compressed sparse matrices.
//!
//! Row indices are strictly increasing within each column and the offset
//! array is monotone; both are enforced at construction. System assembly
//! selects columns (rows of a stored transpose), which is why the storage
//! is column-major.

use super::dense::DenseMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        for &(i, j, _) in triplets {
            if i >= nrows {
                return Err(Error::Dimension {
                    context: "triplet row index",
                    expected: nrows,
                    got: i,
                });
            }
            if j >= ncols {
                return Err(Error::Dimension {
                    context: "triplet column index",
                    expected: ncols,
                    got: j,
                });
            }
        }
        let mut entries: Vec<(usize, usize, f64)> =
            triplets.iter().map(|&(i, j, v)| (j, i, v)).collect();
        entries.sort_by_key(|e| (e.0, e.1));

        let mut row_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut col_counts = vec![0usize; ncols];
        let mut last: Option<(usize, usize)> = None;
        for (j, i, v) in entries {
            if last == Some((j, i)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_idx.push(i);
                values.push(v);
                col_counts[j] += 1;
                last = Some((j, i));
            }
        }
        let mut col_ptr = vec![0usize; ncols + 1];
        for (j, c) in col_counts.iter().enumerate() {
            col_ptr[j + 1] = col_ptr[j] + c;
        }
        Ok(SparseMatrix {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        SparseMatrix {
            nrows,
            ncols,
            col_ptr: vec![0; ncols + 1],
            row_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            nrows: n,
            ncols: n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let n = d.len();
        SparseMatrix {
            nrows: n,
            ncols: n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            values: d.to_vec(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Row indices and values of column `j`.
    pub fn col(&self, j: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.col_ptr[j], self.col_ptr[j + 1]);
        (&self.row_idx[a..b], &self.values[a..b])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols).flat_map(move |j| {
            let (rows, vals) = self.col(j);
            rows.iter().zip(vals).map(move |(&i, &v)| (i, j, v))
        })
    }

    pub fn diag(&self) -> Vec<f64> {
        let n = self.nrows.min(self.ncols);
        let mut d = vec![0.0; n];
        for j in 0..n {
            let (rows, vals) = self.col(j);
            if let Ok(p) = rows.binary_search(&j) {
                d[j] = vals[p];
            }
        }
        d
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut starts = vec![0usize; self.nrows + 1];
        for &i in &self.row_idx {
            starts[i + 1] += 1;
        }
        for i in 0..self.nrows {
            starts[i + 1] += starts[i];
        }
        let mut next = starts.clone();
        let mut row_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for j in 0..self.ncols {
            let (rows, vals) = self.col(j);
            for (&i, &v) in rows.iter().zip(vals) {
                let p = next[i];
                row_idx[p] = j;
                values[p] = v;
                next[i] += 1;
            }
        }
        SparseMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            col_ptr: starts,
            row_idx,
            values,
        }
    }

    /// `M v` (or `M' v` when `transpose` is set); deterministic column-order
    /// accumulation.
    pub fn spmv(&self, v: &[f64], transpose: bool) -> Result<Vec<f64>> {
        if transpose {
            if v.len() != self.nrows {
                return Err(Error::Dimension {
                    context: "spmv transpose input",
                    expected: self.nrows,
                    got: v.len(),
                });
            }
            let mut out = vec![0.0; self.ncols];
            for j in 0..self.ncols {
                let (rows, vals) = self.col(j);
                let mut acc = 0.0;
                for (&i, &a) in rows.iter().zip(vals) {
                    acc += a * v[i];
                }
                out[j] = acc;
            }
            Ok(out)
        } else {
            if v.len() != self.ncols {
                return Err(Error::Dimension {
                    context: "spmv input",
                    expected: self.ncols,
                    got: v.len(),
                });
            }
            let mut out = vec![0.0; self.nrows];
            for j in 0..self.ncols {
                let vj = v[j];
                if vj == 0.0 {
                    continue;
                }
                let (rows, vals) = self.col(j);
                for (&i, &a) in rows.iter().zip(vals) {
                    out[i] += a * vj;
                }
            }
            Ok(out)
        }
    }

    /// Maximum absolute difference between stored entries of `M` and `M'`.
    pub fn max_asymmetry(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        let t = self.transpose();
        let mut m = 0.0f64;
        for j in 0..self.ncols {
            let (ra, va) = self.col(j);
            let (rb, vb) = t.col(j);
            let mut pa = 0;
            let mut pb = 0;
            while pa < ra.len() || pb < rb.len() {
                let ia = ra.get(pa).copied().unwrap_or(usize::MAX);
                let ib = rb.get(pb).copied().unwrap_or(usize::MAX);
                if ia == ib {
                    m = m.max((va[pa] - vb[pb]).abs());
                    pa += 1;
                    pb += 1;
                } else if ia < ib {
                    m = m.max(va[pa].abs());
                    pa += 1;
                } else {
                    m = m.max(vb[pb].abs());
                    pb += 1;
                }
            }
        }
        m
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.iter() {
            d[(i, j)] += v;
        }
        d
    }

    /// Keep the rows selected by `mask`, renumbering them by rank order.
    pub fn select_rows(&self, mask: &[bool]) -> SparseMatrix {
        debug_assert_eq!(mask.len(), self.nrows);
        let mut rank = vec![usize::MAX; self.nrows];
        let mut nsel = 0;
        for (i, &keep) in mask.iter().enumerate() {
            if keep {
                rank[i] = nsel;
                nsel += 1;
            }
        }
        let mut col_ptr = vec![0usize; self.ncols + 1];
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for j in 0..self.ncols {
            let (rows, vals) = self.col(j);
            for (&i, &v) in rows.iter().zip(vals) {
                if rank[i] != usize::MAX {
                    row_idx.push(rank[i]);
                    values.push(v);
                }
            }
            col_ptr[j + 1] = row_idx.len();
        }
        SparseMatrix {
            nrows: nsel,
            ncols: self.ncols,
            col_ptr,
            row_idx,
            values,
        }
    }

    /// Stack `self` on top of `other` (column counts must agree).
    pub fn vstack(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.ncols != other.ncols {
            return Err(Error::Dimension {
                context: "vstack",
                expected: self.ncols,
                got: other.ncols,
            });
        }
        let mut col_ptr = vec![0usize; self.ncols + 1];
        let mut row_idx = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        for j in 0..self.ncols {
            let (ra, va) = self.col(j);
            let (rb, vb) = other.col(j);
            row_idx.extend_from_slice(ra);
            values.extend_from_slice(va);
            for (&i, &v) in rb.iter().zip(vb) {
                row_idx.push(i + self.nrows);
                values.push(v);
            }
            col_ptr[j + 1] = row_idx.len();
        }
        Ok(SparseMatrix {
            nrows: self.nrows + other.nrows,
            ncols: self.ncols,
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn scaled(&self, a: f64) -> SparseMatrix {
        let mut s = self.clone();
        for v in &mut s.values {
            *v *= a;
        }
        s
    }
}

/// Assemble `G * diag(e) * G' + shift * I`. Only columns with `e_i > 0`
/// contribute; the result is symmetric and positive definite for
/// `shift > 0`.
pub fn gram_plus_shift(g: &SparseMatrix, e: &[f64], shift: f64) -> Result<SparseMatrix> {
    if e.len() != g.ncols() {
        return Err(Error::Dimension {
            context: "gram_plus_shift weights",
            expected: g.ncols(),
            got: e.len(),
        });
    }
    if let Some((i, &v)) = e.iter().enumerate().find(|(_, &v)| v < 0.0) {
        return Err(Error::NegativeEntry { index: i, value: v });
    }
    let m = g.nrows();
    // S column k = sum_j e_j * G[k, j] * (column j of G); iterate over the
    // rows of G via its transpose so the pattern stays sparse.
    let gt = g.transpose();
    let mut col_ptr = vec![0usize; m + 1];
    let mut row_idx: Vec<usize> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut work = vec![0.0f64; m];
    let mut stamp = vec![usize::MAX; m];
    let mut touched: Vec<usize> = Vec::new();
    for k in 0..m {
        touched.clear();
        let (cols_k, vals_k) = gt.col(k); // row k of G
        for (&j, &gkj) in cols_k.iter().zip(vals_k) {
            let ej = e[j];
            if ej == 0.0 {
                continue;
            }
            let w = ej * gkj;
            let (rows_j, vals_j) = g.col(j);
            for (&i, &gij) in rows_j.iter().zip(vals_j) {
                if stamp[i] != k {
                    stamp[i] = k;
                    work[i] = 0.0;
                    touched.push(i);
                }
                work[i] += w * gij;
            }
        }
        if shift != 0.0 {
            if stamp[k] != k {
                stamp[k] = k;
                work[k] = 0.0;
                touched.push(k);
            }
            work[k] += shift;
        }
        touched.sort_unstable();
        for &i in &touched {
            row_idx.push(i);
            values.push(work[i]);
        }
        col_ptr[k + 1] = row_idx.len();
    }
    Ok(SparseMatrix {
        nrows: m,
        ncols: m,
        col_ptr,
        row_idx,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_spmv(d: &DenseMatrix, v: &[f64], transpose: bool) -> Vec<f64> {
        let (nr, nc) = if transpose {
            (d.ncols(), d.nrows())
        } else {
            (d.nrows(), d.ncols())
        };
        let mut out = vec![0.0; nr];
        for i in 0..nr {
            for j in 0..nc {
                out[i] += if transpose { d[(j, i)] } else { d[(i, j)] } * v[j];
            }
        }
        out
    }

    #[test]
    fn identity_spmv() {
        let m = SparseMatrix::identity(3);
        let v = vec![1.0, 2.0, 3.0];
        assert_eq!(m.spmv(&v, false).unwrap(), v);
    }

    #[test]
    fn zero_matrix_spmv() {
        let m = SparseMatrix::zeros(4, 3);
        assert_eq!(m.spmv(&[1.0, 2.0, 3.0], false).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn spmv_matches_dense_reference() {
        // fixed pseudo-random 5x4 instance
        let trip = vec![
            (0, 0, 0.7),
            (0, 3, -1.2),
            (1, 1, 2.5),
            (2, 0, -0.3),
            (2, 2, 1.1),
            (3, 3, 0.9),
            (4, 1, -2.0),
            (4, 2, 0.4),
        ];
        let m = SparseMatrix::from_triplets(5, 4, &trip).unwrap();
        let d = m.to_dense();
        let v = vec![0.3, -1.4, 2.2, 0.5];
        let w = vec![1.0, 0.5, -0.25, 2.0, -1.0];
        let got = m.spmv(&v, false).unwrap();
        let want = dense_spmv(&d, &v, false);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-14);
        }
        let got_t = m.spmv(&w, true).unwrap();
        let want_t = dense_spmv(&d, &w, true);
        for (a, b) in got_t.iter().zip(&want_t) {
            assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn spmv_dimension_mismatch() {
        let m = SparseMatrix::identity(3);
        assert!(m.spmv(&[1.0], false).is_err());
    }

    #[test]
    fn duplicate_triplets_are_summed() {
        let m = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.0)]).unwrap();
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.col(0).1, &[3.0]);
    }

    #[test]
    fn gram_identity_case() {
        let g = SparseMatrix::identity(2);
        let s = gram_plus_shift(&g, &[1.0, 1.0], 0.5).unwrap();
        let d = s.to_dense();
        assert_eq!(d[(0, 0)], 1.5);
        assert_eq!(d[(1, 1)], 1.5);
        assert_eq!(d[(0, 1)], 0.0);
    }

    #[test]
    fn gram_dropped_columns() {
        let g = SparseMatrix::from_triplets(2, 3, &[(0, 0, 1.0), (1, 1, 2.0), (0, 2, 3.0)]).unwrap();
        let beta_inv = 0.02;
        let s = gram_plus_shift(&g, &[0.0, 0.0, 0.0], beta_inv).unwrap();
        let d = s.to_dense();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { beta_inv } else { 0.0 };
                assert!((d[(i, j)] - want).abs() <= 1e-16);
            }
        }
    }

    #[test]
    fn gram_matches_dense_reference() {
        let trip = vec![
            (0, 0, 1.0),
            (0, 2, -0.5),
            (1, 1, 2.0),
            (1, 4, 0.3),
            (2, 3, -1.5),
            (3, 0, 0.8),
            (3, 5, 1.1),
            (2, 5, 0.6),
        ];
        let g = SparseMatrix::from_triplets(4, 6, &trip).unwrap();
        let e = vec![0.5, 1.0, 0.0, 2.0, 0.7, 1.3];
        let shift = 0.25;
        let s = gram_plus_shift(&g, &e, shift).unwrap();
        let gd = g.to_dense();
        let mut want = DenseMatrix::zeros(4, 4);
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = 0.0;
                for k in 0..6 {
                    acc += gd[(i, k)] * e[k] * gd[(j, k)];
                }
                want[(i, j)] = acc + if i == j { shift } else { 0.0 };
            }
        }
        let sd = s.to_dense();
        for i in 0..4 {
            for j in 0..4 {
                assert!(
                    (sd[(i, j)] - want[(i, j)]).abs() <= 1e-13,
                    "mismatch at ({i},{j})"
                );
            }
        }
        assert_eq!(s.max_asymmetry(), 0.0);
    }

    #[test]
    fn gram_rejects_negative_weight() {
        let g = SparseMatrix::identity(2);
        assert!(matches!(
            gram_plus_shift(&g, &[1.0, -1.0], 0.0),
            Err(Error::NegativeEntry { index: 1, .. })
        ));
    }

    #[test]
    fn transpose_roundtrip() {
        let trip = vec![(0, 1, 2.0), (2, 0, -1.0), (1, 1, 3.0), (2, 3, 4.0)];
        let m = SparseMatrix::from_triplets(3, 4, &trip).unwrap();
        let tt = m.transpose().transpose();
        assert_eq!(m, tt);
    }

    #[test]
    fn select_rows_renumbers() {
        let m =
            SparseMatrix::from_triplets(3, 2, &[(0, 0, 1.0), (1, 0, 2.0), (2, 1, 3.0)]).unwrap();
        let s = m.select_rows(&[true, false, true]);
        assert_eq!(s.nrows(), 2);
        let d = s.to_dense();
        assert_eq!(d[(0, 0)], 1.0);
        assert_eq!(d[(1, 1)], 3.0);
    }
}
