//! Inner semismooth Newton loop.
//!
//! The gradient of the proximal augmented Lagrangian is piecewise smooth;
//! a generalized Jacobian is selected from the Bouligand subdifferential
//! of the two projections (0/1 diagonal masks). Instead of forming
//!
//! ```text
//!   J = Q + 1/rho I + beta A'A + beta C' B_h C + beta (I - B_delta)
//! ```
//!
//! explicitly, the Newton step solves the equivalent symmetric
//! quasi-definite system
//!
//! ```text
//!   [ -H            A'        -Chat_B1'  ] [ dx ]   [ xi1 + Chat_N1'(w2)_N1 ]
//!   [  A         1/beta I         0      ] [ w1 ] = [ xi2                   ]
//!   [ -Chat_B1       0        1/beta I   ] [ w2 ]   [ (xi3)_B1              ]
//! ```
//!
//! with `H = Q + 1/rho I + beta (I - B_delta) + beta D2' B2_h D2`, the
//! hinge rows outside the active set `B1_h` eliminated in closed form,
//! and the step accepted through Armijo backtracking (the first inner
//! iteration is accepted without line search).

use crate::krylov::{self, MinresConfig, PrecondCache, SymmetricOperator};
use crate::linalg::vecops;
use crate::model::InternalProblem;
use crate::pmm::{aug_lagrangian_gradient, aug_lagrangian_value, Counters, PmmState, SolveTrace};
use crate::{Error, Result};
use serde::Serialize;

/// Inner-loop configuration: Armijo slope `mu`, backtrack factor `delta`,
/// forcing exponent `gamma` and cap `eta_bar`, at most 40 Newton steps
/// per outer iteration.
#[derive(Debug, Clone)]
pub struct SsnConfig {
    pub mu: f64,
    pub delta: f64,
    pub gamma: f64,
    pub eta_bar: f64,
    pub max_inner: usize,
    pub max_backtracks: usize,
}

impl Default for SsnConfig {
    fn default() -> Self {
        SsnConfig {
            mu: 1e-4,
            delta: 0.5,
            gamma: 0.5,
            eta_bar: 0.1,
            max_inner: 40,
            max_backtracks: 50,
        }
    }
}

impl SsnConfig {
    fn check(&self) -> Result<()> {
        let ok = self.mu > 0.0
            && self.mu < 0.5
            && self.delta > 0.0
            && self.delta < 1.0
            && self.gamma > 0.0
            && self.gamma <= 1.0
            && self.eta_bar > 0.0
            && self.eta_bar < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(
                "ssn parameters must satisfy mu in (0,1/2), delta in (0,1), gamma in (0,1], eta_bar in (0,1)".into(),
            ))
        }
    }
}

/// Bouligand index sets at the current iterate.
///
/// `b_delta` marks box projection arguments strictly inside their
/// interval, `b1_h` marks user hinge rows with projection argument in the
/// open unit interval, `b2_h` marks l1 rows with argument in the closed
/// unit interval. `b_list`/`b_mask` hold `B = B_delta ∩ N2_h`, the
/// columns kept by the preconditioner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSets {
    pub b_delta: Vec<bool>,
    pub b1_h: Vec<bool>,
    pub b2_h: Vec<bool>,
    pub b1_list: Vec<usize>,
    pub b_mask: Vec<bool>,
    pub b_list: Vec<usize>,
}

impl ActiveSets {
    fn derive(p: &InternalProblem, b_delta: Vec<bool>, b1_h: Vec<bool>, b2_h: Vec<bool>) -> Self {
        let b1_list: Vec<usize> = (0..p.s).filter(|&i| b1_h[i]).collect();
        let mut b_mask = b_delta.clone();
        for (r, &(i, _)) in p.l1_rows.iter().enumerate() {
            if b2_h[r] {
                b_mask[i] = false;
            }
        }
        let b_list: Vec<usize> = (0..p.n).filter(|&i| b_mask[i]).collect();
        ActiveSets {
            b_delta,
            b1_h,
            b2_h,
            b1_list,
            b_mask,
            b_list,
        }
    }
}

/// Select the Bouligand masks at `x`. The projection arguments are
/// `z/beta + x` for the box and `y2 + beta (Cx + d)` for the hinge rows;
/// the box and user hinge rows use open intervals (endpoints give 0),
/// the l1 rows a closed interval (endpoints give 1).
pub fn select_bouligand(p: &InternalProblem, x: &[f64], state: &PmmState) -> ActiveSets {
    let beta = state.beta;
    let b_delta: Vec<bool> = (0..p.n)
        .map(|i| {
            let v = state.z[i] / beta + x[i];
            v > p.lower[i] && v < p.upper[i]
        })
        .collect();
    let cx = p.chat.spmv(x, false).expect("dimension checked");
    let b1_h: Vec<bool> = (0..p.s)
        .map(|i| {
            let w = state.y2[i] + beta * (cx[i] + p.d[i]);
            w > 0.0 && w < 1.0
        })
        .collect();
    let b2_h: Vec<bool> = p
        .l1_rows
        .iter()
        .enumerate()
        .map(|(r, &(i, coef))| {
            let w = state.y2[p.s + r] + beta * coef * x[i];
            (0.0..=1.0).contains(&w)
        })
        .collect();
    ActiveSets::derive(p, b_delta, b1_h, b2_h)
}

/// Matrix-free form of the reduced Newton system's coefficient matrix.
pub struct ReducedOperator<'a> {
    pub p: &'a InternalProblem,
    pub sets: &'a ActiveSets,
    pub beta: f64,
    pub rho_inv: f64,
}

impl<'a> ReducedOperator<'a> {
    pub fn new(p: &'a InternalProblem, sets: &'a ActiveSets, state: &PmmState) -> Self {
        ReducedOperator {
            p,
            sets,
            beta: state.beta,
            rho_inv: 1.0 / state.rho,
        }
    }

    pub fn n(&self) -> usize {
        self.p.n
    }

    pub fn block_dims(&self) -> (usize, usize, usize) {
        (self.p.n, self.p.m, self.sets.b1_list.len())
    }

    /// `H v` with `H = Q + 1/rho I + beta (I - B_delta) + beta D2' B2 D2`.
    pub fn h_matvec(&self, v: &[f64], out: &mut [f64]) {
        let p = self.p;
        let qv = p.q.spmv(v, false).expect("dimension checked");
        for i in 0..p.n {
            let box_pen = if self.sets.b_delta[i] { 0.0 } else { self.beta };
            out[i] = qv[i] + (self.rho_inv + box_pen) * v[i];
        }
        for (r, &(i, coef)) in p.l1_rows.iter().enumerate() {
            if self.sets.b2_h[r] {
                out[i] += self.beta * coef * coef * v[i];
            }
        }
    }

    /// `J v` for the unreduced Newton derivative; used to verify the
    /// forcing condition on the true residual.
    pub fn jacobian_matvec(&self, v: &[f64]) -> Vec<f64> {
        let p = self.p;
        let mut out = vec![0.0; p.n];
        self.h_matvec(v, &mut out);
        if p.m > 0 {
            let av = p.a.spmv(v, false).expect("dimension checked");
            let atav = p.a.spmv(&av, true).expect("dimension checked");
            for i in 0..p.n {
                out[i] += self.beta * atav[i];
            }
        }
        if p.s > 0 {
            let mut cv = p.chat.spmv(v, false).expect("dimension checked");
            for (i, keep) in self.sets.b1_h.iter().enumerate() {
                if !keep {
                    cv[i] = 0.0;
                }
            }
            let ctcv = p.chat.spmv(&cv, true).expect("dimension checked");
            for i in 0..p.n {
                out[i] += self.beta * ctcv[i];
            }
        }
        out
    }
}

impl SymmetricOperator for ReducedOperator<'_> {
    fn dim(&self) -> usize {
        let (n, m, nb) = self.block_dims();
        n + m + nb
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let p = self.p;
        let (n, m, nb) = self.block_dims();
        let (v1, rest) = v.split_at(n);
        let (v2, v3) = rest.split_at(m);
        let (o1, orest) = out.split_at_mut(n);
        let (o2, o3) = orest.split_at_mut(m);

        self.h_matvec(v1, o1);
        for v in o1.iter_mut() {
            *v = -*v;
        }
        if m > 0 {
            let atv2 = p.a.spmv(v2, true).expect("dimension checked");
            for i in 0..n {
                o1[i] += atv2[i];
            }
            let av1 = p.a.spmv(v1, false).expect("dimension checked");
            for i in 0..m {
                o2[i] = av1[i] + v2[i] / self.beta;
            }
        }
        if nb > 0 {
            // expand v3 onto the s rows, multiply by Chat'
            let mut full = vec![0.0; p.s];
            for (r, &row) in self.sets.b1_list.iter().enumerate() {
                full[row] = v3[r];
            }
            let ctv3 = p.chat.spmv(&full, true).expect("dimension checked");
            for i in 0..n {
                o1[i] -= ctv3[i];
            }
            let cv1 = p.chat.spmv(v1, false).expect("dimension checked");
            for (r, &row) in self.sets.b1_list.iter().enumerate() {
                o3[r] = -cv1[row] + v3[r] / self.beta;
            }
        }
    }
}

/// Assemble the reduced Newton system at `x`. Returns the operator, the
/// right-hand side, and the eliminated hinge multipliers
/// `(w2)_{N1_h} = (P_C(y2 + beta(Cx+d)))_{N1_h}` as `(row, value)` pairs.
#[allow(clippy::type_complexity)]
pub fn assemble_reduced_system<'a>(
    p: &'a InternalProblem,
    x: &[f64],
    state: &PmmState,
    sets: &'a ActiveSets,
) -> Result<(ReducedOperator<'a>, Vec<f64>, Vec<(usize, f64)>)> {
    if x.len() != p.n {
        return Err(Error::Dimension {
            context: "assemble_reduced_system",
            expected: p.n,
            got: x.len(),
        });
    }
    let beta = state.beta;
    let rho_inv = 1.0 / state.rho;
    let op = ReducedOperator::new(p, sets, state);
    let (n, m, nb) = op.block_dims();

    // xi1 = c + Qx + D2' P(w_l1) + ztilde + (x - x_k)/rho
    let mut xi1 = p.q.spmv(x, false)?;
    for i in 0..n {
        let ztilde = state.z[i] + beta * x[i]
            - beta * (state.z[i] / beta + x[i]).clamp(p.lower[i], p.upper[i]);
        xi1[i] += p.c[i] + ztilde + rho_inv * (x[i] - state.x[i]);
    }
    for (r, &(i, coef)) in p.l1_rows.iter().enumerate() {
        let w = state.y2[p.s + r] + beta * coef * x[i];
        xi1[i] += coef * w.clamp(0.0, 1.0);
    }

    // projected user-hinge multipliers and the eliminated block
    let cx = p.chat.spmv(x, false)?;
    let proj_s: Vec<f64> = (0..p.s)
        .map(|i| (state.y2[i] + beta * (cx[i] + p.d[i])).clamp(0.0, 1.0))
        .collect();
    let mut w2_on_n = Vec::new();
    if p.s > 0 {
        let mut eliminated = vec![0.0; p.s];
        for i in 0..p.s {
            if !sets.b1_h[i] {
                eliminated[i] = proj_s[i];
                w2_on_n.push((i, proj_s[i]));
            }
        }
        let corr = p.chat.spmv(&eliminated, true)?;
        for i in 0..n {
            xi1[i] += corr[i];
        }
    }

    let mut rhs = xi1;
    rhs.reserve(m + nb);
    let ax = p.a.spmv(x, false)?;
    for i in 0..m {
        rhs.push(state.y1[i] / beta - (ax[i] - p.b[i]));
    }
    for &row in &sets.b1_list {
        rhs.push(proj_s[row] / beta);
    }
    Ok((op, rhs, w2_on_n))
}

/// Record of one forcing-rule verification.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ForcingRecord {
    pub grad_norm: f64,
    pub forcing_tol: f64,
    pub true_residual: f64,
    pub satisfied: bool,
}

/// Record of one accepted Armijo step (inner index >= 1 only).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ArmijoRecord {
    pub inner_step: usize,
    pub phi_old: f64,
    pub phi_new: f64,
    pub alpha: f64,
    pub slope: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonInfo {
    pub true_residual: f64,
    pub satisfied: bool,
}

/// Solve the reduced system to the forcing tolerance and extract the
/// `dx` block. The Krylov stop is on the preconditioned residual of the
/// reduced system, so the Newton-equation residual `||J dx + grad||` is
/// re-verified directly and the solve re-run once, tighter, when it
/// fails. A direction that still violates the forcing rule is returned
/// with `satisfied = false`; the line search safeguards progress.
pub fn newton_direction(
    op: &ReducedOperator<'_>,
    rhs: &[f64],
    grad: &[f64],
    forcing_tol: f64,
    cache: &mut PrecondCache,
    mcfg: &MinresConfig,
    counters: &mut Counters,
) -> Result<(Vec<f64>, NewtonInfo)> {
    let n = op.n();
    let newton_residual = |dx: &[f64]| -> f64 {
        let jdx = op.jacobian_matvec(dx);
        let mut s = 0.0;
        for i in 0..n {
            let r = jdx[i] + grad[i];
            s += r * r;
        }
        s.sqrt()
    };

    let out = krylov::solve_with_policy(op, rhs, cache, mcfg, forcing_tol)?;
    counters.krylov += out.krylov_iters;
    counters.factorizations += out.factorizations;
    let mut dx = out.solution[..n].to_vec();
    let mut res = newton_residual(&dx);

    if res > forcing_tol && res.is_finite() {
        // observed amplification between the reduced-system residual and
        // the Newton residual sets the retry tolerance
        let tol2 = forcing_tol * (0.5 * forcing_tol / res).min(0.1);
        let retry = krylov::solve_with_policy(op, rhs, cache, mcfg, tol2)?;
        counters.krylov += retry.krylov_iters;
        counters.factorizations += retry.factorizations;
        let dx2 = retry.solution[..n].to_vec();
        let res2 = newton_residual(&dx2);
        if res2 < res {
            dx = dx2;
            res = res2;
        }
    }
    Ok((
        dx,
        NewtonInfo {
            true_residual: res,
            satisfied: res <= forcing_tol,
        },
    ))
}

pub struct LineSearchOutcome {
    pub alpha: f64,
    pub phi_new: f64,
    pub backtracks: usize,
}

/// Armijo backtracking: smallest `m >= 0` with
/// `phi(x + delta^m dx) <= phi(x) + mu delta^m grad'dx`.
/// A zero direction is accepted trivially with step 1; an ascent
/// direction is rejected with [`Error::NonDescent`] so the caller can
/// fall back to steepest descent.
pub fn line_search<F>(
    mut phi: F,
    phi_x: f64,
    grad: &[f64],
    x: &[f64],
    dx: &[f64],
    cfg: &SsnConfig,
) -> Result<LineSearchOutcome>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let slope = vecops::dot(grad, dx);
    if dx.iter().all(|&v| v == 0.0) {
        return Ok(LineSearchOutcome {
            alpha: 1.0,
            phi_new: phi_x,
            backtracks: 0,
        });
    }
    if slope > 0.0 {
        return Err(Error::NonDescent);
    }
    let mut alpha = 1.0;
    let mut trial = vec![0.0; x.len()];
    for m in 0..cfg.max_backtracks {
        for i in 0..x.len() {
            trial[i] = x[i] + alpha * dx[i];
        }
        let val = phi(&trial)?;
        if val <= phi_x + cfg.mu * alpha * slope {
            return Ok(LineSearchOutcome {
                alpha,
                phi_new: val,
                backtracks: m,
            });
        }
        alpha *= cfg.delta;
    }
    Err(Error::LineSearchFailure {
        backtracks: cfg.max_backtracks,
    })
}

#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub x: Vec<f64>,
    pub grad_norm: f64,
    /// Whether `||grad phi|| <= eps_k` was reached.
    pub converged: bool,
    pub steps: usize,
    pub krylov_iters: usize,
    pub factorizations: usize,
}

/// Run the semismooth Newton loop from the anchor in `state` until
/// `||grad phi|| <= eps` or the step cap. Line-search failure ends the
/// loop with `converged = false`; the outer loop then escalates the
/// penalty and retries.
#[allow(clippy::too_many_arguments)]
pub fn run_inner(
    p: &InternalProblem,
    state: &PmmState,
    eps: f64,
    cfg: &SsnConfig,
    mcfg: &MinresConfig,
    cache: &mut PrecondCache,
    counters: &mut Counters,
    trace: &mut SolveTrace,
) -> Result<InnerOutcome> {
    cfg.check()?;
    let krylov0 = counters.krylov;
    let fact0 = counters.factorizations;
    let mut x = state.x.clone();
    let mut grad = aug_lagrangian_gradient(p, &x, state)?;
    let mut gnorm = vecops::norm2(&grad);
    let mut steps = 0;

    while gnorm > eps && steps < cfg.max_inner {
        let sets = select_bouligand(p, &x, state);
        let (op, rhs, _) = assemble_reduced_system(p, &x, state, &sets)?;
        let forcing = cfg.eta_bar.min(gnorm.powf(1.0 + cfg.gamma));
        let (mut dx, info) = newton_direction(&op, &rhs, &grad, forcing, cache, mcfg, counters)?;
        counters.ssn += 1;
        trace.forcing.push(ForcingRecord {
            grad_norm: gnorm,
            forcing_tol: forcing,
            true_residual: info.true_residual,
            satisfied: info.satisfied,
        });
        if !vecops::all_finite(&dx) {
            break; // outer loop escalates beta
        }

        let alpha = if steps == 0 {
            // predictor-corrector heuristic: first step without line search
            1.0
        } else {
            let phi_x = aug_lagrangian_value(p, &x, state)?;
            let searched = line_search(
                |t| aug_lagrangian_value(p, t, state),
                phi_x,
                &grad,
                &x,
                &dx,
                cfg,
            );
            let searched = match searched {
                Err(Error::NonDescent) => {
                    dx = grad.iter().map(|g| -g).collect();
                    line_search(
                        |t| aug_lagrangian_value(p, t, state),
                        phi_x,
                        &grad,
                        &x,
                        &dx,
                        cfg,
                    )
                }
                other => other,
            };
            match searched {
                Ok(out) => {
                    trace.armijo.push(ArmijoRecord {
                        inner_step: steps,
                        phi_old: phi_x,
                        phi_new: out.phi_new,
                        alpha: out.alpha,
                        slope: vecops::dot(&grad, &dx),
                        mu: cfg.mu,
                    });
                    out.alpha
                }
                Err(Error::LineSearchFailure { .. }) => break,
                Err(e) => return Err(e),
            }
        };

        for i in 0..p.n {
            x[i] += alpha * dx[i];
        }
        steps += 1;
        grad = aug_lagrangian_gradient(p, &x, state)?;
        gnorm = vecops::norm2(&grad);
        if !gnorm.is_finite() {
            break;
        }
    }

    Ok(InnerOutcome {
        x,
        grad_norm: gnorm,
        converged: gnorm <= eps,
        steps,
        krylov_iters: counters.krylov - krylov0,
        factorizations: counters.factorizations - fact0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{DenseMatrix, SparseMatrix};
    use crate::model::{internalize, ProblemSpec};
    use crate::pmm::PmmConfig;
    use crate::test_fixtures::{fix_a, fix_b, lu_solve, TestRng};

    fn state_for(p: &InternalProblem, beta: f64, rho: f64) -> PmmState {
        PmmState {
            x: vec![0.0; p.n],
            y1: vec![0.0; p.m],
            y2: vec![0.0; p.l],
            z: vec![0.0; p.n],
            beta,
            rho,
            tau: beta / rho,
            k: 0,
        }
    }

    #[test]
    fn bouligand_interior_box() {
        let mut spec = fix_a();
        spec.lower = vec![0.0];
        spec.upper = vec![1.0];
        let p = internalize(&spec).unwrap();
        let state = state_for(&p, 1.0, 2.0);
        let sets = select_bouligand(&p, &[0.5], &state);
        assert!(sets.b_delta[0]);
        assert_eq!(sets.b_list, vec![0]);
    }

    #[test]
    fn bouligand_endpoint_conventions() {
        // hinge row with projection argument exactly 0 -> excluded;
        // l1 row with argument exactly 0 -> included
        let mut spec = fix_b();
        spec.l1_weights = vec![0.5];
        let p = internalize(&spec).unwrap();
        let mut state = state_for(&p, 1.0, 2.0);
        state.y2 = vec![1.0, 0.0]; // hinge arg = 1 + (x - 1); l1 arg = 0 + x
        let sets = select_bouligand(&p, &[1.0], &state);
        // hinge: w = 1 + 1*(1 - 1) = 1, endpoint of (0,1) -> 0
        assert!(!sets.b1_h[0]);
        // l1: w = 0 + 1*(2*0.5)*0 ... x = 0 gives w = 0, closed -> 1
        let sets0 = select_bouligand(&p, &[0.0], &state);
        assert!(sets0.b2_h[0]);
    }

    #[test]
    fn bouligand_infinite_bounds_all_inside() {
        let spec = ProblemSpec::unconstrained(3, vec![0.0; 3], SparseMatrix::zeros(3, 3));
        let p = internalize(&spec).unwrap();
        let state = state_for(&p, 50.0, 100.0);
        let sets = select_bouligand(&p, &[1e9, -1e9, 0.0], &state);
        assert!(sets.b_delta.iter().all(|&b| b));
    }

    /// Materialize the reduced operator densely through unit vectors.
    fn dense_operator(op: &ReducedOperator<'_>) -> DenseMatrix {
        let dim = op.dim();
        let mut m = DenseMatrix::zeros(dim, dim);
        let mut e = vec![0.0; dim];
        let mut col = vec![0.0; dim];
        for j in 0..dim {
            e[j] = 1.0;
            op.apply(&e, &mut col);
            for i in 0..dim {
                m[(i, j)] = col[i];
            }
            e[j] = 0.0;
        }
        m
    }

    #[test]
    fn reduced_system_collapses_without_blocks() {
        // no hinge, no l1, no A: 1x1 system -(Q + 1/rho + beta(1-Bdelta)) dx = grad
        let p = internalize(&fix_a()).unwrap();
        let mut state = state_for(&p, 2.0, 4.0);
        state.x = vec![0.25];
        let x = vec![0.25];
        let sets = select_bouligand(&p, &x, &state);
        let (op, rhs, _) = assemble_reduced_system(&p, &x, &state, &sets).unwrap();
        assert_eq!(op.dim(), 1);
        let grad = aug_lagrangian_gradient(&p, &x, &state).unwrap();
        assert!((rhs[0] - grad[0]).abs() < 1e-15, "xi1 must equal grad phi");
        // interior: H = Q + 1/rho = 1.25; smooth Newton step
        let m = dense_operator(&op);
        assert!((m[(0, 0)] + 1.25).abs() < 1e-15);
    }

    #[test]
    fn reduced_system_fix_b_inactive_hinge() {
        let p = internalize(&fix_b()).unwrap();
        let state = state_for(&p, 10.0, 20.0);
        let x = vec![0.0];
        let sets = select_bouligand(&p, &x, &state);
        // w = 0 + 10*(0 - 1) < 0: hinge row inactive
        assert!(sets.b1_list.is_empty());
        let (op, _, w2n) = assemble_reduced_system(&p, &x, &state, &sets).unwrap();
        assert_eq!(op.dim(), 1);
        // x = 0 sits on the lower bound: B_delta = 0, so H = 1 + 1/rho + beta
        let m = dense_operator(&op);
        assert!((m[(0, 0)] + (1.0 + 0.05 + 10.0)).abs() < 1e-12);
        assert_eq!(w2n.len(), 1);
        assert_eq!(w2n[0].1, 0.0); // projection of a negative argument
    }

    fn random_instance(rng: &mut TestRng, n: usize, m: usize, s: usize, l1: usize) -> ProblemSpec {
        let mut qt = Vec::new();
        for i in 0..n {
            qt.push((i, i, rng.uniform(0.1, 2.0)));
        }
        let q = SparseMatrix::from_triplets(n, n, &qt).unwrap();
        let mut spec =
            ProblemSpec::unconstrained(n, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect(), q);
        if m > 0 {
            let mut at = Vec::new();
            for i in 0..m {
                for j in 0..n {
                    if rng.next_f64() > 0.0 || j == i {
                        at.push((i, j, rng.uniform(-1.0, 1.0)));
                    }
                }
            }
            spec.m = m;
            spec.a = SparseMatrix::from_triplets(m, n, &at).unwrap();
            spec.b = (0..m).map(|_| rng.uniform(-1.0, 1.0)).collect();
        }
        if s > 0 {
            let mut ct = Vec::new();
            for i in 0..s {
                for j in 0..n {
                    if rng.next_f64() > -0.2 {
                        ct.push((i, j, rng.uniform(-1.0, 1.0)));
                    }
                }
            }
            spec.s = s;
            spec.chat = SparseMatrix::from_triplets(s, n, &ct).unwrap();
            spec.dhat = (0..s).map(|_| rng.uniform(-0.5, 0.5)).collect();
        }
        for _ in 0..l1 {
            let i = rng.index(n);
            spec.l1_weights[i] = rng.uniform(0.1, 1.0);
        }
        for i in 0..n {
            spec.lower[i] = rng.uniform(-2.0, -0.5);
            spec.upper[i] = rng.uniform(0.5, 2.0);
        }
        spec
    }

    fn random_state(rng: &mut TestRng, p: &InternalProblem, beta: f64) -> PmmState {
        PmmState {
            x: (0..p.n).map(|_| rng.uniform(-1.0, 1.0)).collect(),
            y1: (0..p.m).map(|_| rng.uniform(-1.0, 1.0)).collect(),
            y2: (0..p.l).map(|_| rng.uniform(0.0, 1.0)).collect(),
            z: (0..p.n).map(|_| rng.uniform(-1.0, 1.0)).collect(),
            beta,
            rho: beta / 0.5,
            tau: 0.5,
            k: 0,
        }
    }

    #[test]
    fn operator_is_symmetric_by_matvec_probes() {
        let mut rng = TestRng(21);
        for _ in 0..20 {
            let spec = random_instance(&mut rng, 6, 2, 4, 2);
            let p = internalize(&spec).unwrap();
            let state = random_state(&mut rng, &p, 25.0);
            let x: Vec<f64> = (0..p.n).map(|_| rng.uniform(-1.5, 1.5)).collect();
            let sets = select_bouligand(&p, &x, &state);
            let (op, _, _) = assemble_reduced_system(&p, &x, &state, &sets).unwrap();
            let dim = op.dim();
            let u: Vec<f64> = (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let v: Vec<f64> = (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let mut mu_ = vec![0.0; dim];
            let mut mv = vec![0.0; dim];
            op.apply(&u, &mut mu_);
            op.apply(&v, &mut mv);
            let s1 = vecops::dot(&v, &mu_);
            let s2 = vecops::dot(&u, &mv);
            assert!(
                (s1 - s2).abs() <= 1e-12 * s1.abs().max(1.0),
                "asymmetry: {s1} vs {s2}"
            );
        }
    }

    #[test]
    fn operator_blocks_are_quasi_definite() {
        let mut rng = TestRng(22);
        let spec = random_instance(&mut rng, 5, 2, 3, 1);
        let p = internalize(&spec).unwrap();
        let state = random_state(&mut rng, &p, 50.0);
        let x: Vec<f64> = (0..p.n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let sets = select_bouligand(&p, &x, &state);
        let (op, _, _) = assemble_reduced_system(&p, &x, &state, &sets).unwrap();
        let dim = op.dim();
        let (n, _, _) = op.block_dims();
        // (1,1) block: v'(-H)v <= -v'v/rho < 0 on the x block
        let mut probe = vec![0.0; dim];
        let mut out = vec![0.0; dim];
        for t in 0..5 {
            for (i, v) in probe.iter_mut().enumerate().take(n) {
                *v = rng.uniform(-1.0, 1.0) * ((i + t) % 2 + 1) as f64;
            }
            for v in probe.iter_mut().skip(n) {
                *v = 0.0;
            }
            op.apply(&probe, &mut out);
            let quad = vecops::dot(&probe[..n], &out[..n]);
            let nrm = vecops::dot(&probe[..n], &probe[..n]);
            assert!(quad <= -nrm / state.rho + 1e-12, "H not definite enough");
        }
        // trailing blocks: exactly v/beta on the diagonal
        for r in n..dim {
            probe.iter_mut().for_each(|v| *v = 0.0);
            probe[r] = 1.0;
            op.apply(&probe, &mut out);
            assert!((out[r] - 1.0 / state.beta).abs() < 1e-14);
        }
    }

    /// The reduced system must reproduce the unreduced Newton equation
    /// J dx = -grad phi.
    #[test]
    fn reduced_equals_unreduced_and_direct_jacobian() {
        let mut rng = TestRng(23);
        for trial in 0..25 {
            let spec = random_instance(&mut rng, 5, 2, 4, 2);
            let p = internalize(&spec).unwrap();
            let state = random_state(&mut rng, &p, 10.0 + trial as f64);
            let x: Vec<f64> = (0..p.n).map(|_| rng.uniform(-1.5, 1.5)).collect();
            let sets = select_bouligand(&p, &x, &state);
            let (op, rhs, w2n) = assemble_reduced_system(&p, &x, &state, &sets).unwrap();

            // dense solve of the reduced system
            let m = dense_operator(&op);
            let sol = lu_solve(&m, &rhs).expect("quasi-definite systems are invertible");
            let dx_reduced = &sol[..p.n];

            // dense solve of J dx = -grad
            let grad = aug_lagrangian_gradient(&p, &x, &state).unwrap();
            let mut j = DenseMatrix::zeros(p.n, p.n);
            let mut e = vec![0.0; p.n];
            for col in 0..p.n {
                e[col] = 1.0;
                let jv = op.jacobian_matvec(&e);
                for row in 0..p.n {
                    j[(row, col)] = jv[row];
                }
                e[col] = 0.0;
            }
            let neg_grad: Vec<f64> = grad.iter().map(|g| -g).collect();
            let dx_direct = lu_solve(&j, &neg_grad).expect("J is positive definite");
            for i in 0..p.n {
                assert!(
                    (dx_reduced[i] - dx_direct[i]).abs() <= 1e-8,
                    "trial {trial}: reduced {} vs direct {}",
                    dx_reduced[i],
                    dx_direct[i]
                );
            }

            // unreduced system of the equivalent form: check the
            // eliminated block really is the projection on N1_h
            for &(row, val) in &w2n {
                let w = state.y2[row] + state.beta * ((p.chat.spmv(&x, false).unwrap())[row] + p.d[row]);
                assert_eq!(val, w.clamp(0.0, 1.0));
            }
        }
    }

    #[test]
    fn forcing_tolerance_formula() {
        let cfg = SsnConfig::default();
        let gnorm = 0.01f64;
        let forcing = cfg.eta_bar.min(gnorm.powf(1.0 + cfg.gamma));
        assert!((forcing - 0.001).abs() < 1e-15);
    }

    #[test]
    fn newton_direction_one_dimensional() {
        // the raw 1-D solve: -2 dx = -4 -> dx = 2, one MINRES iteration
        let spec = ProblemSpec::unconstrained(1, vec![0.0], SparseMatrix::from_diag(&[1.5]));
        let p = internalize(&spec).unwrap();
        let state = state_for(&p, 1.0, 2.0); // H = 1.5 + 0.5 = 2
        let x = vec![0.0];
        let sets = select_bouligand(&p, &x, &state);
        let (op, _, _) = assemble_reduced_system(&p, &x, &state, &sets).unwrap();
        let raw = crate::krylov::minres_solve(&op, &[-4.0], None, 1e-10, 10).unwrap();
        assert!((raw.solution[0] - 2.0).abs() < 1e-10);
        assert_eq!(raw.iterations, 1);

        // full direction with the consistent right-hand side (xi1 = grad)
        let mut cache = PrecondCache::default();
        let mut counters = Counters::default();
        let grad = vec![4.0];
        let (dx, info) = newton_direction(
            &op,
            &grad,
            &grad,
            1e-10,
            &mut cache,
            &MinresConfig::default(),
            &mut counters,
        )
        .unwrap();
        assert!((dx[0] - (-2.0)).abs() < 1e-10);
        assert!(info.satisfied);
        assert_eq!(counters.krylov, 1);
    }

    #[test]
    fn newton_direction_meets_forcing_on_random_fixture() {
        let mut rng = TestRng(31);
        let spec = random_instance(&mut rng, 10, 3, 5, 2);
        let p = internalize(&spec).unwrap();
        let state = random_state(&mut rng, &p, 50.0);
        let x: Vec<f64> = (0..p.n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let sets = select_bouligand(&p, &x, &state);
        let (op, rhs, _) = assemble_reduced_system(&p, &x, &state, &sets).unwrap();
        let grad = aug_lagrangian_gradient(&p, &x, &state).unwrap();
        let forcing = 1e-8;
        let mut cache = PrecondCache::default();
        let mut counters = Counters::default();
        let (dx, info) = newton_direction(
            &op,
            &rhs,
            &grad,
            forcing,
            &mut cache,
            &MinresConfig::default(),
            &mut counters,
        )
        .unwrap();
        assert!(info.satisfied, "residual {}", info.true_residual);
        let jdx = op.jacobian_matvec(&dx);
        let mut r = 0.0;
        for i in 0..p.n {
            r += (jdx[i] + grad[i]).powi(2);
        }
        assert!(r.sqrt() <= forcing * 1.0000001);
    }

    #[test]
    fn line_search_exact_newton_step() {
        let cfg = SsnConfig::default();
        let phi = |t: &[f64]| Ok(0.5 * t[0] * t[0]);
        let out = line_search(phi, 0.5, &[1.0], &[1.0], &[-1.0], &cfg).unwrap();
        assert_eq!(out.alpha, 1.0);
    }

    #[test]
    fn line_search_backtracks_overshoot() {
        let cfg = SsnConfig::default();
        let phi = |t: &[f64]| Ok(0.5 * t[0] * t[0]);
        let out = line_search(phi, 0.5, &[1.0], &[1.0], &[-4.0], &cfg).unwrap();
        assert_eq!(out.alpha, 0.25);
    }

    #[test]
    fn line_search_zero_direction_trivially_accepted() {
        let cfg = SsnConfig::default();
        let phi = |t: &[f64]| Ok(0.5 * t[0] * t[0]);
        let out = line_search(phi, 0.5, &[1.0], &[1.0], &[0.0], &cfg).unwrap();
        assert_eq!(out.alpha, 1.0);
        assert_eq!(out.phi_new, 0.5);
    }

    #[test]
    fn line_search_rejects_ascent() {
        let cfg = SsnConfig::default();
        let phi = |t: &[f64]| Ok(0.5 * t[0] * t[0]);
        assert!(matches!(
            line_search(phi, 0.5, &[1.0], &[1.0], &[1.0], &cfg),
            Err(Error::NonDescent)
        ));
    }

    #[test]
    fn run_inner_converges_on_fix_a() {
        let p = internalize(&fix_a()).unwrap();
        let cfg = PmmConfig::default();
        let state = PmmState::cold_start(&p, &cfg);
        let mut cache = PrecondCache::default();
        let mut counters = Counters::default();
        let mut trace = SolveTrace::default();
        let out = run_inner(
            &p,
            &state,
            1e-8,
            &cfg.ssn,
            &cfg.minres,
            &mut cache,
            &mut counters,
            &mut trace,
        )
        .unwrap();
        assert!(out.converged);
        assert!(out.steps <= 5, "took {} steps", out.steps);
    }

    #[test]
    fn run_inner_one_step_on_quadratic() {
        // 1-D strictly convex quadratic, free box: one exact Newton step
        let spec = ProblemSpec::unconstrained(1, vec![-3.0], SparseMatrix::from_diag(&[2.0]));
        let p = internalize(&spec).unwrap();
        let cfg = PmmConfig::default();
        let mut state = PmmState::cold_start(&p, &cfg);
        state.x = vec![5.0];
        let mut cache = PrecondCache::default();
        let mut counters = Counters::default();
        let mut trace = SolveTrace::default();
        let out = run_inner(
            &p,
            &state,
            1e-10,
            &cfg.ssn,
            &cfg.minres,
            &mut cache,
            &mut counters,
            &mut trace,
        )
        .unwrap();
        assert!(out.converged);
        assert_eq!(out.steps, 1);
        assert!(out.grad_norm <= 1e-10);
    }

    #[test]
    fn run_inner_returns_immediately_when_target_met() {
        let p = internalize(&fix_a()).unwrap();
        let cfg = PmmConfig::default();
        let state = PmmState::cold_start(&p, &cfg);
        let mut cache = PrecondCache::default();
        let mut counters = Counters::default();
        let mut trace = SolveTrace::default();
        let out = run_inner(
            &p,
            &state,
            1e9,
            &cfg.ssn,
            &cfg.minres,
            &mut cache,
            &mut counters,
            &mut trace,
        )
        .unwrap();
        assert!(out.converged);
        assert_eq!(out.steps, 0);
    }

    #[test]
    fn armijo_holds_on_all_logged_steps() {
        let mut rng = TestRng(77);
        let spec = random_instance(&mut rng, 6, 2, 5, 2);
        let out = crate::pmm::solve(&spec, &PmmConfig::default());
        // some random instances are infeasible; the trace contract only
        // applies when the solve ran
        if let Ok(out) = out {
            assert!(!out.trace.armijo.is_empty() || out.report.ssn_iters <= out.report.pmm_iters);
            for rec in &out.trace.armijo {
                assert!(
                    rec.phi_new <= rec.phi_old + rec.mu * rec.alpha * rec.slope,
                    "armijo violated: {rec:?}"
                );
                assert!(rec.phi_new <= rec.phi_old, "phi increased on a j>=1 step");
            }
        }
    }
}
