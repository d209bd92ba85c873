//! Problem representation, canonicalization of nonsmooth terms, objective
//! evaluation and the KKT residuals that define convergence.
//!
//! User problems carry three kinds of nonsmooth structure: a general hinge
//! block `sum_i ((Chat x + dhat)_i)_+`, a separable weighted l1 term
//! `||Dx||_1`, and box bounds. Internally every l1 entry with positive
//! weight `w_i` is rewritten as an extra hinge row using
//!
//! ```text
//!     w|x_i| = -w x_i + (2 w x_i)_+
//! ```
//!
//! so the solver only ever sees one uniform hinge block `C = [Chat; D2]`
//! with `D2` holding rows `2 w_i e_i'` and a zero right-hand side on the
//! l1 part. Zero-weight entries are dropped.

use crate::linalg::{vecops, SparseMatrix};
use crate::{Error, Result};

/// User-facing problem instance.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub n: usize,
    pub m: usize,
    pub s: usize,
    pub c: Vec<f64>,
    /// n x n sparse symmetric positive semi-definite.
    pub q: SparseMatrix,
    /// m x n equality constraint matrix.
    pub a: SparseMatrix,
    pub b: Vec<f64>,
    /// s x n hinge block.
    pub chat: SparseMatrix,
    pub dhat: Vec<f64>,
    /// Nonnegative diagonal of the l1 weight matrix `D`.
    pub l1_weights: Vec<f64>,
    /// Lower bounds, entries may be `-inf`.
    pub lower: Vec<f64>,
    /// Upper bounds, entries may be `+inf`.
    pub upper: Vec<f64>,
    pub objective_constant: f64,
}

impl ProblemSpec {
    /// A problem with no constraints, hinges, l1 term or bounds.
    pub fn unconstrained(n: usize, c: Vec<f64>, q: SparseMatrix) -> Self {
        ProblemSpec {
            n,
            m: 0,
            s: 0,
            c,
            q,
            a: SparseMatrix::zeros(0, n),
            b: vec![],
            chat: SparseMatrix::zeros(0, n),
            dhat: vec![],
            l1_weights: vec![0.0; n],
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            objective_constant: 0.0,
        }
    }

    /// All violated structural invariants, empty when well formed.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let mut dim = |name: &str, got: usize, want: usize| {
            if got != want {
                errs.push(format!("{name}: expected length {want}, got {got}"));
            }
        };
        dim("c", self.c.len(), self.n);
        dim("b", self.b.len(), self.m);
        dim("dhat", self.dhat.len(), self.s);
        dim("l1_weights", self.l1_weights.len(), self.n);
        dim("lower", self.lower.len(), self.n);
        dim("upper", self.upper.len(), self.n);
        if self.q.nrows() != self.n || self.q.ncols() != self.n {
            errs.push(format!(
                "Q: expected {}x{}, got {}x{}",
                self.n,
                self.n,
                self.q.nrows(),
                self.q.ncols()
            ));
        }
        if self.a.nrows() != self.m || self.a.ncols() != self.n {
            errs.push(format!(
                "A: expected {}x{}, got {}x{}",
                self.m,
                self.m.max(self.n),
                self.a.nrows(),
                self.a.ncols()
            ));
        }
        if self.chat.nrows() != self.s || self.chat.ncols() != self.n {
            errs.push(format!(
                "Chat: expected {}x{}, got {}x{}",
                self.s,
                self.n,
                self.chat.nrows(),
                self.chat.ncols()
            ));
        }
        if !errs.is_empty() {
            return errs; // dimension errors make the checks below unsafe
        }
        for i in 0..self.n {
            if self.lower[i] > self.upper[i] {
                errs.push(format!(
                    "empty box at index {i}: [{}, {}]",
                    self.lower[i], self.upper[i]
                ));
            }
            if self.lower[i].is_nan() || self.upper[i].is_nan() {
                errs.push(format!("NaN bound at index {i}"));
            }
            if self.l1_weights[i] < 0.0 {
                errs.push(format!(
                    "negative l1 weight {} at index {i}",
                    self.l1_weights[i]
                ));
            }
        }
        if self.q.max_asymmetry() != 0.0 {
            errs.push("Q is not symmetric on its stored structure".into());
        }
        // all-zero rows of A make the equality block trivially rank deficient
        let mut row_nnz = vec![0usize; self.m];
        for (i, _, v) in self.a.iter() {
            if v != 0.0 {
                row_nnz[i] += 1;
            }
        }
        for (i, &nnz) in row_nnz.iter().enumerate() {
            if nnz == 0 {
                errs.push(format!("A has an all-zero row {i}"));
            }
        }
        for (name, vs) in [
            ("c", &self.c),
            ("b", &self.b),
            ("dhat", &self.dhat),
            ("l1_weights", &self.l1_weights),
        ] {
            if !vecops::all_finite(vs) {
                errs.push(format!("{name} has non-finite entries"));
            }
        }
        errs
    }
}

/// Where an internal hinge row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HingeRowSource {
    /// Row of the user hinge block `Chat`.
    Hinge(usize),
    /// l1 term on this variable index.
    L1(usize),
}

/// Canonical form: every nonsmooth objective term is a hinge row.
#[derive(Debug, Clone)]
pub struct InternalProblem {
    pub n: usize,
    pub m: usize,
    /// Rows of the user hinge block (first `s` internal rows).
    pub s: usize,
    /// Total hinge rows, `s +` number of positive l1 weights.
    pub l: usize,
    pub c: Vec<f64>,
    pub q: SparseMatrix,
    pub q_diag: Vec<f64>,
    pub a: SparseMatrix,
    pub a_t: SparseMatrix,
    pub b: Vec<f64>,
    pub chat: SparseMatrix,
    pub chat_t: SparseMatrix,
    /// Right-hand side of all `l` hinge rows (zero on the l1 part).
    pub d: Vec<f64>,
    /// l1 hinge rows: variable index and coefficient `2 w_i`, one per row
    /// `s..l` in order.
    pub l1_rows: Vec<(usize, f64)>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub constant: f64,
    pub row_source: Vec<HingeRowSource>,
}

/// Rewrite the l1 term into hinge rows per the identity in the module
/// docs; fails on an invalid spec.
pub fn internalize(spec: &ProblemSpec) -> Result<InternalProblem> {
    let errs = spec.validate();
    if !errs.is_empty() {
        return Err(Error::InvalidProblem(errs));
    }
    let mut c = spec.c.clone();
    let mut l1_rows = Vec::new();
    let mut row_source: Vec<HingeRowSource> = (0..spec.s).map(HingeRowSource::Hinge).collect();
    for (i, &w) in spec.l1_weights.iter().enumerate() {
        if w > 0.0 {
            c[i] -= w;
            l1_rows.push((i, 2.0 * w));
            row_source.push(HingeRowSource::L1(i));
        }
    }
    let l = spec.s + l1_rows.len();
    let mut d = vec![0.0; l];
    d[..spec.s].copy_from_slice(&spec.dhat);
    Ok(InternalProblem {
        n: spec.n,
        m: spec.m,
        s: spec.s,
        l,
        c,
        q_diag: spec.q.diag(),
        q: spec.q.clone(),
        a_t: spec.a.transpose(),
        a: spec.a.clone(),
        b: spec.b.clone(),
        chat_t: spec.chat.transpose(),
        chat: spec.chat.clone(),
        d,
        l1_rows,
        lower: spec.lower.clone(),
        upper: spec.upper.clone(),
        constant: spec.objective_constant,
        row_source,
    })
}

impl InternalProblem {
    /// `C x + d` over all `l` hinge rows.
    pub fn hinge_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut w = self.chat.spmv(x, false)?;
        w.iter_mut().zip(&self.d[..self.s]).for_each(|(v, d)| *v += d);
        w.reserve(self.l1_rows.len());
        for &(i, coef) in &self.l1_rows {
            w.push(coef * x[i]);
        }
        Ok(w)
    }

    /// `C' y` for a multiplier vector over all `l` hinge rows.
    pub fn hinge_transpose_mul(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.l {
            return Err(Error::Dimension {
                context: "hinge_transpose_mul",
                expected: self.l,
                got: y.len(),
            });
        }
        let mut out = self.chat.spmv(&y[..self.s], true)?;
        for (r, &(i, coef)) in self.l1_rows.iter().enumerate() {
            out[i] += coef * y[self.s + r];
        }
        Ok(out)
    }
}

/// Result of evaluating the internal objective at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectiveValue {
    Finite(f64),
    /// The point violates the box bounds by more than the stated slack.
    InfeasibleBox { worst_violation: f64 },
}

impl ObjectiveValue {
    pub fn value(&self) -> Option<f64> {
        match self {
            ObjectiveValue::Finite(v) => Some(*v),
            ObjectiveValue::InfeasibleBox { .. } => None,
        }
    }
}

const BOX_FEAS_SLACK: f64 = 1e-8;

/// `c'x + 1/2 x'Qx + sum_i ((Cx+d)_i)_+ + constant` on the internal form.
pub fn objective_value(p: &InternalProblem, x: &[f64]) -> Result<ObjectiveValue> {
    if x.len() != p.n {
        return Err(Error::Dimension {
            context: "objective_value",
            expected: p.n,
            got: x.len(),
        });
    }
    let mut worst = 0.0f64;
    for i in 0..p.n {
        worst = worst.max(p.lower[i] - x[i]).max(x[i] - p.upper[i]);
    }
    if worst > BOX_FEAS_SLACK {
        return Ok(ObjectiveValue::InfeasibleBox {
            worst_violation: worst,
        });
    }
    let qx = p.q.spmv(x, false)?;
    let mut v = vecops::dot(&p.c, x) + 0.5 * vecops::dot(x, &qx) + p.constant;
    for w in p.hinge_values(x)? {
        if w > 0.0 {
            v += w;
        }
    }
    Ok(ObjectiveValue::Finite(v))
}

/// Rewrite `sum_i max{(C1 x + d1)_i, (C2 x + d2)_i}` as a linear shift
/// plus a hinge block:
/// returns `(c_shift, C_block, d_block, constant)` with
/// `C_block = C1 - C2`, `d_block = d1 - d2`, `c_shift = C2' 1` and
/// `constant = 1'd2`.
pub fn max2_to_hinge(
    c1: &SparseMatrix,
    d1: &[f64],
    c2: &SparseMatrix,
    d2: &[f64],
) -> Result<(Vec<f64>, SparseMatrix, Vec<f64>, f64)> {
    if c1.nrows() != c2.nrows() || c1.ncols() != c2.ncols() {
        return Err(Error::Dimension {
            context: "max2_to_hinge shapes",
            expected: c1.nrows(),
            got: c2.nrows(),
        });
    }
    if d1.len() != c1.nrows() || d2.len() != c2.nrows() {
        return Err(Error::Dimension {
            context: "max2_to_hinge offsets",
            expected: c1.nrows(),
            got: d1.len().min(d2.len()),
        });
    }
    let ones = vec![1.0; c2.nrows()];
    let c_shift = c2.spmv(&ones, true)?;
    let mut trips: Vec<(usize, usize, f64)> = c1.iter().collect();
    trips.extend(c2.iter().map(|(i, j, v)| (i, j, -v)));
    let c_block = SparseMatrix::from_triplets(c1.nrows(), c1.ncols(), &trips)?;
    let d_block = vecops::sub(d1, d2);
    let constant = d2.iter().sum();
    Ok((c_shift, c_block, d_block, constant))
}

/// Scaled optimality measures; `max_res` is the solver's termination
/// quantity.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KktResiduals {
    pub dual_res: f64,
    pub primal_res: f64,
    pub complementarity_res: f64,
    pub max_res: f64,
}

/// Residuals of the optimality system at `(x, y1, y2, z)`:
///
/// ```text
///   dual:   ||c + Qx - A'y1 + C'y2 + z|| / (1 + ||c||)
///   primal: ||(Ax - b; y2 - P_[0,1](y2 + Cx + d))|| / (1 + ||(b; d)||)
///   compl:  ||x - P_K(x + z)||            (unscaled)
/// ```
pub fn kkt_residuals(
    p: &InternalProblem,
    x: &[f64],
    y1: &[f64],
    y2: &[f64],
    z: &[f64],
) -> Result<KktResiduals> {
    if x.len() != p.n || z.len() != p.n {
        return Err(Error::Dimension {
            context: "kkt_residuals x/z",
            expected: p.n,
            got: x.len().max(z.len()),
        });
    }
    if y1.len() != p.m {
        return Err(Error::Dimension {
            context: "kkt_residuals y1",
            expected: p.m,
            got: y1.len(),
        });
    }
    if y2.len() != p.l {
        return Err(Error::Dimension {
            context: "kkt_residuals y2",
            expected: p.l,
            got: y2.len(),
        });
    }
    // stationarity
    let mut g = p.q.spmv(x, false)?;
    for i in 0..p.n {
        g[i] += p.c[i] + z[i];
    }
    let aty1 = p.a.spmv(y1, true)?;
    for i in 0..p.n {
        g[i] -= aty1[i];
    }
    let cty2 = p.hinge_transpose_mul(y2)?;
    for i in 0..p.n {
        g[i] += cty2[i];
    }
    let dual_res = vecops::norm2(&g) / (1.0 + vecops::norm2(&p.c));

    // primal feasibility and dual-box consistency
    let ax = p.a.spmv(x, false)?;
    let mut primal_sq = 0.0;
    for i in 0..p.m {
        let r = ax[i] - p.b[i];
        primal_sq += r * r;
    }
    let w = p.hinge_values(x)?;
    for i in 0..p.l {
        let r = y2[i] - (y2[i] + w[i]).clamp(0.0, 1.0);
        primal_sq += r * r;
    }
    let bd_norm = (vecops::dot(&p.b, &p.b) + vecops::dot(&p.d, &p.d)).sqrt();
    let primal_res = primal_sq.sqrt() / (1.0 + bd_norm);

    // box complementarity
    let mut compl_sq = 0.0;
    for i in 0..p.n {
        let r = x[i] - (x[i] + z[i]).clamp(p.lower[i], p.upper[i]);
        compl_sq += r * r;
    }
    let complementarity_res = compl_sq.sqrt();

    let max_res = dual_res.max(primal_res).max(complementarity_res);
    Ok(KktResiduals {
        dual_res,
        primal_res,
        complementarity_res,
        max_res,
    })
}
