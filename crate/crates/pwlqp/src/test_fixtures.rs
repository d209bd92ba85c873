//! Shared fixtures and oracles for the unit tests.

use crate::linalg::SparseMatrix;
use crate::model::ProblemSpec;

/// 1-D box QP: min -x + x^2/2 on [0, 0.5]. Optimum x* = 0.5, z* = 0.5,
/// objective -0.375.
pub fn fix_a() -> ProblemSpec {
    let mut spec = ProblemSpec::unconstrained(1, vec![-1.0], SparseMatrix::from_diag(&[1.0]));
    spec.lower = vec![0.0];
    spec.upper = vec![0.5];
    spec
}

/// 1-D hinge QP: min (x-2)^2/2 + (x-1)_+ on [0, 1]. Optimum x* = 1,
/// y2* = 1, z* = 0, objective 0.5.
pub fn fix_b() -> ProblemSpec {
    let mut spec = ProblemSpec::unconstrained(1, vec![-2.0], SparseMatrix::from_diag(&[1.0]));
    spec.s = 1;
    spec.chat = SparseMatrix::from_triplets(1, 1, &[(0, 0, 1.0)]).unwrap();
    spec.dhat = vec![-1.0];
    spec.lower = vec![0.0];
    spec.upper = vec![1.0];
    spec.objective_constant = 2.0;
    spec
}

/// Deterministic pseudo-random stream for tests (SplitMix-style), uniform
/// on [-1, 1).
pub struct TestRng(pub u64);

impl TestRng {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (self.next_f64() + 1.0) * 0.5 * (hi - lo)
    }

    pub fn index(&mut self, n: usize) -> usize {
        (self.uniform(0.0, n as f64) as usize).min(n - 1)
    }
}

/// Dense LU solve with partial pivoting; independent oracle for small
/// indefinite systems in the tests.
pub fn lu_solve(a: &crate::linalg::DenseMatrix, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    assert_eq!(b.len(), n);
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| a[(i, j)]).collect())
        .collect();
    let mut x = b.to_vec();
    for k in 0..n {
        let mut piv = k;
        for i in k + 1..n {
            if m[i][k].abs() > m[piv][k].abs() {
                piv = i;
            }
        }
        if m[piv][k].abs() < 1e-12 {
            return None;
        }
        m.swap(k, piv);
        x.swap(k, piv);
        for i in k + 1..n {
            let f = m[i][k] / m[k][k];
            m[i][k] = 0.0;
            for j in k + 1..n {
                let v = m[k][j];
                m[i][j] -= f * v;
            }
            x[i] -= f * x[k];
        }
    }
    for i in (0..n).rev() {
        for j in i + 1..n {
            let v = x[j];
            x[i] -= m[i][j] * v;
        }
        x[i] /= m[i][i];
    }
    Some(x)
}
