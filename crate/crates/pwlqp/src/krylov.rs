//! MINRES for the reduced Newton systems, with a block-diagonal
//! active-set preconditioner.
//!
//! The preconditioner is
//!
//! ```text
//!   P = blkdiag( H_tilde,  G E G' + 1/beta I )
//! ```
//!
//! with `H_tilde = Diag(Q) + 1/rho I + beta (I - B_delta) + beta D2' B2 D2`
//! diagonal, `G = [A; -Chat_B1]`, and `E` the diagonal matrix carrying
//! `1/H_tilde_ii` on the kept column set `B = B_delta ∩ N2_h` and zero
//! elsewhere. Dropping the complement columns keeps the Schur block's
//! Cholesky factor small; its spectral quality does not degrade as the
//! penalties grow, which [`spectral_check`] verifies numerically.
//!
//! A solve first runs MINRES without a preconditioner; only when that
//! exceeds its iteration trigger is the preconditioner built (or fetched
//! from the cache keyed on the active sets and penalties) and the solve
//! repeated.

use crate::linalg::{
    cholesky, dense_eigs, dense_eigs_pencil, gram_plus_shift, vecops, CholeskyFactor, DenseMatrix,
};
use crate::model::InternalProblem;
use crate::pmm::PmmState;
use crate::ssn::{ActiveSets, ReducedOperator};
use crate::{Error, Result};
use serde::Serialize;

/// Abstract symmetric operator for the Krylov solver.
pub trait SymmetricOperator {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64], out: &mut [f64]);
}

impl SymmetricOperator for DenseMatrix {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.matvec(v));
    }
}

/// MINRES limits: at most 150 iterations per solve; the preconditioner is
/// engaged only after 100 unpreconditioned iterations fail to converge.
#[derive(Debug, Clone)]
pub struct MinresConfig {
    pub max_iters: usize,
    pub unpreconditioned_trigger: usize,
}

impl Default for MinresConfig {
    fn default() -> Self {
        MinresConfig {
            max_iters: 150,
            unpreconditioned_trigger: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct PrecondKey {
    b_delta: Vec<bool>,
    b1_h: Vec<bool>,
    b2_h: Vec<bool>,
    beta_bits: u64,
    rho_bits: u64,
}

impl PrecondKey {
    fn new(sets: &ActiveSets, beta: f64, rho_inv: f64) -> Self {
        PrecondKey {
            b_delta: sets.b_delta.clone(),
            b1_h: sets.b1_h.clone(),
            b2_h: sets.b2_h.clone(),
            beta_bits: beta.to_bits(),
            rho_bits: rho_inv.to_bits(),
        }
    }
}

/// Block-diagonal preconditioner; immutable once built.
#[derive(Debug, Clone)]
pub struct Preconditioner {
    pub h_tilde: Vec<f64>,
    pub schur_factor: CholeskyFactor,
    pub n: usize,
    pub schur_dim: usize,
    key: PrecondKey,
}

/// Single-slot factorization cache. Rebuilding is forced by any change in
/// the active sets or the penalties and never happens otherwise.
#[derive(Debug, Clone, Default)]
pub struct PrecondCache {
    slot: Option<Preconditioner>,
}

impl PrecondCache {
    /// Fetch the cached preconditioner or build one; the flag reports
    /// whether a factorization happened.
    pub fn get_or_build(
        &mut self,
        p: &InternalProblem,
        op: &ReducedOperator<'_>,
    ) -> Result<(&Preconditioner, bool)> {
        let key = PrecondKey::new(op.sets, op.beta, op.rho_inv);
        let hit = matches!(&self.slot, Some(pre) if pre.key == key);
        if !hit {
            self.slot = Some(build_preconditioner_uncached(p, op, key)?);
        }
        Ok((self.slot.as_ref().unwrap(), !hit))
    }

    pub fn clear(&mut self) {
        self.slot = None;
    }
}

/// Diagonal of `H_tilde` for the current sets and penalties.
fn h_tilde_diag(p: &InternalProblem, sets: &ActiveSets, beta: f64, rho_inv: f64) -> Vec<f64> {
    let mut h = vec![0.0; p.n];
    for i in 0..p.n {
        let box_pen = if sets.b_delta[i] { 0.0 } else { beta };
        h[i] = p.q_diag[i] + rho_inv + box_pen;
    }
    for (r, &(i, coef)) in p.l1_rows.iter().enumerate() {
        if sets.b2_h[r] {
            h[i] += beta * coef * coef;
        }
    }
    h
}

/// The compound matrix `G = [A; -Chat_B1]`.
fn compound_g(p: &InternalProblem, sets: &ActiveSets) -> Result<crate::SparseMatrix> {
    let selected = p.chat.select_rows(&sets.b1_h).scaled(-1.0);
    p.a.vstack(&selected)
}

fn build_preconditioner_uncached(
    p: &InternalProblem,
    op: &ReducedOperator<'_>,
    key: PrecondKey,
) -> Result<Preconditioner> {
    let h_tilde = h_tilde_diag(p, op.sets, op.beta, op.rho_inv);
    let e: Vec<f64> = (0..p.n)
        .map(|i| if op.sets.b_mask[i] { 1.0 / h_tilde[i] } else { 0.0 })
        .collect();
    let g = compound_g(p, op.sets)?;
    let schur = gram_plus_shift(&g, &e, 1.0 / op.beta)?;
    let schur_factor = cholesky(&schur)?;
    Ok(Preconditioner {
        h_tilde,
        n: p.n,
        schur_dim: g.nrows(),
        schur_factor,
        key,
    })
}

/// Build (or fetch) the preconditioner for the given iterate.
pub fn build_preconditioner<'c>(
    p: &InternalProblem,
    op: &ReducedOperator<'_>,
    cache: &'c mut PrecondCache,
) -> Result<(&'c Preconditioner, bool)> {
    cache.get_or_build(p, op)
}

/// `P^{-1} r`: divide the leading block by `H_tilde`, solve the Schur
/// block with its Cholesky factor.
pub fn apply_preconditioner(pre: &Preconditioner, r: &[f64]) -> Result<Vec<f64>> {
    if r.len() != pre.n + pre.schur_dim {
        return Err(Error::Dimension {
            context: "apply_preconditioner",
            expected: pre.n + pre.schur_dim,
            got: r.len(),
        });
    }
    let mut out = Vec::with_capacity(r.len());
    for i in 0..pre.n {
        out.push(r[i] / pre.h_tilde[i]);
    }
    out.extend(pre.schur_factor.solve(&r[pre.n..])?);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct MinresOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Final preconditioned residual norm estimate.
    pub residual: f64,
}

/// Preconditioned MINRES with an absolute tolerance on the
/// preconditioned residual norm. Lanczos breakdown (the Krylov space is
/// exhausted) returns the current iterate with `converged` reflecting the
/// residual estimate.
pub fn minres_solve(
    op: &dyn SymmetricOperator,
    rhs: &[f64],
    pre: Option<&Preconditioner>,
    tol_abs: f64,
    max_iters: usize,
) -> Result<MinresOutcome> {
    let n = op.dim();
    if rhs.len() != n {
        return Err(Error::Dimension {
            context: "minres rhs",
            expected: n,
            got: rhs.len(),
        });
    }
    let precondition = |r: &[f64]| -> Result<Vec<f64>> {
        match pre {
            Some(p) => apply_preconditioner(p, r),
            None => Ok(r.to_vec()),
        }
    };

    let mut x = vec![0.0; n];
    let mut r1 = rhs.to_vec();
    let mut r2 = rhs.to_vec();
    let mut y = precondition(&r2)?;
    let beta1_sq = vecops::dot(&r2, &y);
    if beta1_sq < 0.0 {
        return Err(Error::NumericalBreakdown(
            "preconditioner is not positive definite".into(),
        ));
    }
    let beta1 = beta1_sq.sqrt();
    if beta1 <= tol_abs {
        return Ok(MinresOutcome {
            solution: x,
            iterations: 0,
            converged: true,
            residual: beta1,
        });
    }

    let mut beta = beta1;
    let mut oldb = 0.0f64;
    let mut dbar = 0.0f64;
    let mut epsln = 0.0f64;
    let mut oldeps;
    let mut phibar = beta1;
    let mut cs = -1.0f64;
    let mut sn = 0.0f64;
    let mut w = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..max_iters {
        iterations += 1;
        // Lanczos with the P^{-1} inner product
        let s = 1.0 / beta;
        let v: Vec<f64> = y.iter().map(|yi| yi * s).collect();
        let mut ynew = vec![0.0; n];
        op.apply(&v, &mut ynew);
        if iterations >= 2 {
            let f = beta / oldb;
            for i in 0..n {
                ynew[i] -= f * r1[i];
            }
        }
        let alfa = vecops::dot(&v, &ynew);
        {
            let f = alfa / beta;
            for i in 0..n {
                ynew[i] -= f * r2[i];
            }
        }
        r1 = std::mem::take(&mut r2);
        r2 = ynew;
        y = precondition(&r2)?;
        oldb = beta;
        let beta_sq = vecops::dot(&r2, &y);
        if beta_sq < 0.0 {
            return Err(Error::NumericalBreakdown(
                "preconditioner is not positive definite".into(),
            ));
        }
        let beta_new = beta_sq.sqrt();

        // previous rotation applied to the new tridiagonal column
        oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta_new;
        dbar = -cs * beta_new;

        // current rotation
        let gamma = (gbar * gbar + beta_new * beta_new).sqrt().max(f64::MIN_POSITIVE);
        cs = gbar / gamma;
        sn = beta_new / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        // solution update
        let denom = 1.0 / gamma;
        let w1 = std::mem::take(&mut w2);
        w2 = std::mem::take(&mut w);
        w = (0..n)
            .map(|i| denom * (v[i] - oldeps * w1[i] - delta * w2[i]))
            .collect();
        for i in 0..n {
            x[i] += phi * w[i];
        }

        beta = beta_new;
        if phibar <= tol_abs {
            converged = true;
            break;
        }
        if beta <= f64::EPSILON * beta1 {
            // Krylov space exhausted; the iterate is exact up to roundoff
            converged = phibar <= tol_abs.max(f64::EPSILON * beta1);
            break;
        }
    }
    Ok(MinresOutcome {
        solution: x,
        iterations,
        converged,
        residual: phibar,
    })
}

#[derive(Debug, Clone)]
pub struct PolicyOutcome {
    pub solution: Vec<f64>,
    pub krylov_iters: usize,
    pub factorizations: usize,
    pub converged: bool,
}

/// Two-phase solve: unpreconditioned MINRES up to the trigger, then a
/// preconditioned retry up to the full iteration cap. Counters include
/// both phases.
pub fn solve_with_policy(
    op: &ReducedOperator<'_>,
    rhs: &[f64],
    cache: &mut PrecondCache,
    cfg: &MinresConfig,
    tol_abs: f64,
) -> Result<PolicyOutcome> {
    let mut krylov_iters = 0;
    if cfg.unpreconditioned_trigger > 0 {
        let first = minres_solve(
            op,
            rhs,
            None,
            tol_abs,
            cfg.unpreconditioned_trigger.min(cfg.max_iters),
        )?;
        krylov_iters += first.iterations;
        if first.converged {
            return Ok(PolicyOutcome {
                solution: first.solution,
                krylov_iters,
                factorizations: 0,
                converged: true,
            });
        }
    }
    let (pre, did_factorize) = cache.get_or_build(op.p, op)?;
    let second = minres_solve(op, rhs, Some(pre), tol_abs, cfg.max_iters)?;
    krylov_iters += second.iterations;
    Ok(PolicyOutcome {
        solution: second.solution,
        krylov_iters,
        factorizations: did_factorize as usize,
        converged: second.converged,
    })
}

const SPECTRAL_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct LemmaCheck {
    /// Generalized eigenvalues of the pencil `(S_P, S)` where
    /// `S_P = G H_tilde^{-1} G' + 1/beta I` is the true Schur complement
    /// and `S = G E G' + 1/beta I` its active-set approximation.
    pub eigs: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
    pub sigma2_max_fhat: f64,
    pub sigma2_max_power_iteration: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoremCheck {
    /// Generalized eigenvalues of the pencil `(M, P)`.
    pub eigs: Vec<f64>,
    pub i_minus: (f64, f64),
    pub i_plus: (f64, f64),
    pub alpha_h: f64,
    pub beta_h: f64,
    pub alpha_ne: f64,
    pub beta_ne: f64,
    pub ok: bool,
}

/// Spectral diagnostics for the preconditioner bounds (test-only, dense).
#[derive(Debug, Clone, Serialize)]
pub struct SpectralReport {
    pub dim: usize,
    pub schur_dim: usize,
    pub beta: f64,
    pub tau: f64,
    pub slack: f64,
    pub lemma: LemmaCheck,
    pub theorem: TheoremCheck,
}

fn dense_from_op(op: &ReducedOperator<'_>) -> DenseMatrix {
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

fn power_iteration_sigma2(m: &DenseMatrix, steps: usize) -> f64 {
    // largest eigenvalue of M'M via power iteration on the Gram operator
    let n = m.ncols();
    if n == 0 || m.nrows() == 0 {
        return 0.0;
    }
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = 0.0;
    for _ in 0..steps {
        let mv = m.matvec(&v);
        let mtmv = m.transpose().matvec(&mv);
        let nrm = vecops::norm2(&mtmv);
        if nrm == 0.0 {
            return 0.0;
        }
        for i in 0..n {
            v[i] = mtmv[i] / nrm;
        }
        let mv = m.matvec(&v);
        lambda = vecops::dot(&mv, &mv);
    }
    lambda
}

/// Verify the spectral bounds of the preconditioned system at the given
/// iterate: the Schur-approximation eigenvalue bound and the interval
/// membership of the preconditioned-matrix spectrum.
pub fn spectral_check(
    p: &InternalProblem,
    state: &PmmState,
    sets: &ActiveSets,
) -> Result<SpectralReport> {
    let op = ReducedOperator::new(p, sets, state);
    let dim = op.dim();
    if dim > crate::linalg::EIG_DIM_CAP {
        return Err(Error::DimensionCap {
            dim,
            cap: crate::linalg::EIG_DIM_CAP,
        });
    }
    let beta = state.beta;
    let tau = state.tau;
    let rho_inv = 1.0 / state.rho;

    let h_tilde = h_tilde_diag(p, sets, beta, rho_inv);
    let g = compound_g(p, sets)?.to_dense();
    let schur_dim = g.nrows();

    // Schur complement pair
    let mut s_p = DenseMatrix::zeros(schur_dim, schur_dim);
    let mut s_approx = DenseMatrix::zeros(schur_dim, schur_dim);
    for i in 0..schur_dim {
        for j in 0..schur_dim {
            let mut full = 0.0;
            let mut kept = 0.0;
            for k in 0..p.n {
                let prod = g[(i, k)] * g[(j, k)] / h_tilde[k];
                full += prod;
                if sets.b_mask[k] {
                    kept += prod;
                }
            }
            s_p[(i, j)] = full + if i == j { 1.0 / beta } else { 0.0 };
            s_approx[(i, j)] = kept + if i == j { 1.0 / beta } else { 0.0 };
        }
    }
    let lemma_eigs = dense_eigs_pencil(&s_p, &s_approx)?;

    // sigma_max^2 of Fhat = [A; -Chat] (all hinge rows, not only B1)
    let fhat = p.a.vstack(&p.chat.scaled(-1.0))?.to_dense();
    let sigma2 = {
        let gram = fhat.transpose().matmul(&fhat);
        let eigs = dense_eigs(&gram)?;
        eigs.last().copied().unwrap_or(0.0).max(0.0)
    };
    let sigma2_power = power_iteration_sigma2(&fhat, 20);
    let lemma_upper = 1.0 + sigma2 / (2.0 + tau / (beta * beta));
    let lemma_ok = lemma_eigs
        .iter()
        .all(|&l| l >= 1.0 - SPECTRAL_SLACK && l <= lemma_upper + SPECTRAL_SLACK);

    // interval bounds for the preconditioned matrix
    let mut h = DenseMatrix::zeros(p.n, p.n);
    {
        let mut e = vec![0.0; p.n];
        let mut col = vec![0.0; p.n];
        for j in 0..p.n {
            e[j] = 1.0;
            op.h_matvec(&e, &mut col);
            for i in 0..p.n {
                h[(i, j)] = col[i];
            }
            e[j] = 0.0;
        }
    }
    let mut h_bar = DenseMatrix::zeros(p.n, p.n);
    for i in 0..p.n {
        for j in 0..p.n {
            h_bar[(i, j)] = h[(i, j)] / (h_tilde[i] * h_tilde[j]).sqrt();
        }
    }
    let h_eigs = dense_eigs(&h_bar)?;
    let (alpha_h, beta_h) = (h_eigs[0], *h_eigs.last().unwrap());
    let (alpha_ne, beta_ne) = (lemma_eigs[0], *lemma_eigs.last().unwrap());

    let m_dense = dense_from_op(&op);
    let mut p_dense = DenseMatrix::zeros(dim, dim);
    for i in 0..p.n {
        p_dense[(i, i)] = h_tilde[i];
    }
    for i in 0..schur_dim {
        for j in 0..schur_dim {
            p_dense[(p.n + i, p.n + j)] = s_approx[(i, j)];
        }
    }
    let thm_eigs = dense_eigs_pencil(&m_dense, &p_dense)?;
    let i_minus = (-beta_h - beta_ne.sqrt(), -alpha_h);
    let i_plus = (1.0 / (1.0 + beta_h), 1.0 + (beta_ne - 1.0).max(0.0).sqrt());
    let thm_ok = thm_eigs.iter().all(|&l| {
        (l >= i_minus.0 - SPECTRAL_SLACK && l <= i_minus.1 + SPECTRAL_SLACK)
            || (l >= i_plus.0 - SPECTRAL_SLACK && l <= i_plus.1 + SPECTRAL_SLACK)
    });

    Ok(SpectralReport {
        dim,
        schur_dim,
        beta,
        tau,
        slack: SPECTRAL_SLACK,
        lemma: LemmaCheck {
            eigs: lemma_eigs,
            lower: 1.0,
            upper: lemma_upper,
            sigma2_max_fhat: sigma2,
            sigma2_max_power_iteration: sigma2_power,
            ok: lemma_ok,
        },
        theorem: TheoremCheck {
            eigs: thm_eigs,
            i_minus,
            i_plus,
            alpha_h,
            beta_h,
            alpha_ne,
            beta_ne,
            ok: thm_ok,
        },
    })
}
