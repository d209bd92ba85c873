//! Outer proximal method of multipliers.
//!
//! Each outer iteration approximately minimizes the proximal augmented
//! Lagrangian
//!
//! ```text
//!   phi(x) = f(x) - y1'(Ax-b) + beta/2 ||Ax-b||^2
//!            + (Cx+d)' P_C(y2 + beta (Cx+d))
//!            - 1/(2 beta) ||y2 - P_C(y2 + beta (Cx+d))||^2
//!            - 1/(2 beta) ||z||^2
//!            + 1/(2 beta) ||z + beta x - beta P_K(z/beta + x)||^2
//!            + 1/(2 rho) ||x - x_k||^2
//! ```
//!
//! where `P_C` projects onto `[0,1]^l` and `P_K` onto the box, then
//! updates the multipliers
//!
//! ```text
//!   y1 <- y1 - beta (Ax - b)
//!   y2 <- P_C(y2 + beta (Cx + d))
//!   z  <- (z + beta x) - beta P_K(z/beta + x)
//! ```
//!
//! and grows the penalty `beta` at a rate driven by the residual
//! reduction of that iteration. Termination is on the scaled KKT
//! residuals of [`crate::model::kkt_residuals`].

use crate::linalg::vecops;
use crate::model::{self, InternalProblem, KktResiduals, ProblemSpec};
use crate::ssn::{self, ArmijoRecord, ForcingRecord, SsnConfig};
use crate::krylov::{MinresConfig, PrecondCache};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Outer-loop configuration. The defaults follow the reference
/// implementation: `beta0 = 50`, `rho0 = 100` (so `tau0 = 0.5`), at most
/// 200 outer iterations.
#[derive(Debug, Clone)]
pub struct PmmConfig {
    pub beta0: f64,
    pub rho0: f64,
    /// Penalty cap; bounds the conditioning of the inner systems.
    pub beta_max: f64,
    pub tau_min: f64,
    pub max_outer: usize,
    pub tol: f64,
    /// Penalty growth factor when the residual reduction is poor
    /// (`res_now > thresh_slow * res_prev`).
    pub growth_slow: f64,
    /// Growth factor for moderate reduction.
    pub growth_mid: f64,
    /// Growth factor when the residual at least halved.
    pub growth_base: f64,
    pub thresh_slow: f64,
    pub thresh_mid: f64,
    /// Declare a stall when the relative residual improvement over this
    /// many consecutive outer iterations is below `stall_rel_improvement`.
    pub stall_window: usize,
    pub stall_rel_improvement: f64,
    pub ssn: SsnConfig,
    pub minres: MinresConfig,
}

impl Default for PmmConfig {
    fn default() -> Self {
        PmmConfig {
            beta0: 50.0,
            rho0: 100.0,
            beta_max: 1e8,
            tau_min: 1e-8,
            max_outer: 200,
            tol: 1e-5,
            growth_slow: 5.0,
            growth_mid: 2.0,
            growth_base: 1.2,
            thresh_slow: 0.9,
            thresh_mid: 0.5,
            stall_window: 20,
            stall_rel_improvement: 1e-3,
            ssn: SsnConfig::default(),
            minres: MinresConfig::default(),
        }
    }
}

/// Current primal-dual iterate plus penalties. `x` is the proximal anchor
/// of the running inner solve; `rho = beta / tau` is maintained on every
/// update.
#[derive(Debug, Clone)]
pub struct PmmState {
    pub x: Vec<f64>,
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    pub z: Vec<f64>,
    pub beta: f64,
    pub rho: f64,
    pub tau: f64,
    pub k: usize,
}

impl PmmState {
    /// Cold start: `x0 = P_K(0)`, zero multipliers.
    pub fn cold_start(p: &InternalProblem, cfg: &PmmConfig) -> Self {
        let tau = cfg.beta0 / cfg.rho0;
        PmmState {
            x: project_box(&vec![0.0; p.n], &p.lower, &p.upper),
            y1: vec![0.0; p.m],
            y2: vec![0.0; p.l],
            z: vec![0.0; p.n],
            beta: cfg.beta0,
            rho: cfg.rho0,
            tau,
            k: 0,
        }
    }
}

/// Componentwise clamp onto `[lower, upper]`; infinite bounds pass values
/// through unchanged.
pub fn project_box(v: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    v.iter()
        .zip(lower.iter().zip(upper))
        .map(|(&x, (&lo, &hi))| x.clamp(lo, hi))
        .collect()
}

/// Componentwise clamp onto `[0, 1]`.
pub fn project_unit_box(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.clamp(0.0, 1.0)).collect()
}

/// Value of the proximal augmented Lagrangian at `x` for the multipliers
/// and anchor held in `state`. The objective constant is not included.
pub fn aug_lagrangian_value(p: &InternalProblem, x: &[f64], state: &PmmState) -> Result<f64> {
    let beta = state.beta;
    let qx = p.q.spmv(x, false)?;
    let mut phi = vecops::dot(&p.c, x) + 0.5 * vecops::dot(x, &qx);

    // equality block
    let ax = p.a.spmv(x, false)?;
    for i in 0..p.m {
        let r = ax[i] - p.b[i];
        phi += -state.y1[i] * r + 0.5 * beta * r * r;
    }

    // hinge block through its Moreau envelope
    let w = p.hinge_values(x)?;
    for i in 0..p.l {
        let pw = (state.y2[i] + beta * w[i]).clamp(0.0, 1.0);
        let dy = state.y2[i] - pw;
        phi += w[i] * pw - dy * dy / (2.0 * beta);
    }

    // box block
    let mut znorm2 = 0.0;
    let mut shift2 = 0.0;
    for i in 0..p.n {
        let zi = state.z[i];
        znorm2 += zi * zi;
        let t = zi + beta * x[i]
            - beta * (zi / beta + x[i]).clamp(p.lower[i], p.upper[i]);
        shift2 += t * t;
    }
    phi += (shift2 - znorm2) / (2.0 * beta);

    // proximal term
    let mut prox = 0.0;
    for i in 0..p.n {
        let dxi = x[i] - state.x[i];
        prox += dxi * dxi;
    }
    phi += prox / (2.0 * state.rho);
    Ok(phi)
}

/// Gradient of the proximal augmented Lagrangian at `x`.
pub fn aug_lagrangian_gradient(
    p: &InternalProblem,
    x: &[f64],
    state: &PmmState,
) -> Result<Vec<f64>> {
    let beta = state.beta;
    let mut g = p.q.spmv(x, false)?;
    for i in 0..p.n {
        g[i] += p.c[i];
    }

    if p.m > 0 {
        let ax = p.a.spmv(x, false)?;
        let mut r = vec![0.0; p.m];
        for i in 0..p.m {
            r[i] = beta * (ax[i] - p.b[i]) - state.y1[i];
        }
        let at_r = p.a.spmv(&r, true)?;
        for i in 0..p.n {
            g[i] += at_r[i];
        }
    }

    if p.l > 0 {
        let w = p.hinge_values(x)?;
        let proj: Vec<f64> = (0..p.l)
            .map(|i| (state.y2[i] + beta * w[i]).clamp(0.0, 1.0))
            .collect();
        let ct = p.hinge_transpose_mul(&proj)?;
        for i in 0..p.n {
            g[i] += ct[i];
        }
    }

    let rho_inv = 1.0 / state.rho;
    for i in 0..p.n {
        let proj = (state.z[i] / beta + x[i]).clamp(p.lower[i], p.upper[i]);
        g[i] += state.z[i] + beta * x[i] - beta * proj + rho_inv * (x[i] - state.x[i]);
    }
    Ok(g)
}

/// Multiplier updates and anchor move after an accepted inner solve.
pub fn update_multipliers(p: &InternalProblem, state: &mut PmmState, x_next: &[f64]) -> Result<()> {
    let beta = state.beta;
    if p.m > 0 {
        let ax = p.a.spmv(x_next, false)?;
        for i in 0..p.m {
            state.y1[i] -= beta * (ax[i] - p.b[i]);
        }
    }
    if p.l > 0 {
        let w = p.hinge_values(x_next)?;
        for i in 0..p.l {
            state.y2[i] = (state.y2[i] + beta * w[i]).clamp(0.0, 1.0);
        }
    }
    for i in 0..p.n {
        let proj = (state.z[i] / beta + x_next[i]).clamp(p.lower[i], p.upper[i]);
        state.z[i] += beta * (x_next[i] - proj);
    }
    state.x = x_next.to_vec();
    Ok(())
}

/// Residual-driven penalty growth; `beta` is nondecreasing and capped.
pub fn update_penalties(state: &mut PmmState, cfg: &PmmConfig, res_prev: f64, res_now: f64) {
    let g = if res_now > cfg.thresh_slow * res_prev {
        cfg.growth_slow
    } else if res_now > cfg.thresh_mid * res_prev {
        cfg.growth_mid
    } else {
        cfg.growth_base
    };
    state.beta = (g * state.beta).min(cfg.beta_max);
    state.tau = state.tau.max(cfg.tau_min);
    state.rho = state.beta / state.tau;
    state.k += 1;
}

/// Gradient-norm target for the inner solve at outer iteration `k`:
/// `max(0.1 tol, min(0.1 res, 1/(k+1)^2))`.
pub fn inner_tolerance(k: usize, outer_res: f64, tol: f64) -> f64 {
    let decay = 1.0 / ((k + 1) as f64).powi(2);
    (0.1 * tol).max((0.1 * outer_res).min(decay))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    IterationLimit,
    Stalled,
    NumericalBreakdown,
}

/// Work counters in the `PMM(SSN)[Fact.]{Krylov}` convention.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub pmm: usize,
    pub ssn: usize,
    pub factorizations: usize,
    pub krylov: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub pmm_iters: usize,
    pub ssn_iters: usize,
    pub factorizations: usize,
    pub krylov_iters: usize,
    pub residuals: KktResiduals,
    pub objective: f64,
    pub tol: f64,
    pub wall_time_sec: f64,
    /// `max_res` after every outer iteration, starting at the initial
    /// point.
    pub residual_history: Vec<f64>,
}

/// Per-outer-iteration trace entry.
#[derive(Debug, Clone, Serialize)]
pub struct OuterRecord {
    pub k: usize,
    pub eps_k: f64,
    pub beta: f64,
    pub grad_norm: f64,
    pub inner_converged: bool,
    pub ssn_steps: usize,
    pub krylov_iters: usize,
    pub factorizations: usize,
    pub max_res_after: f64,
}

/// Diagnostics collected during a solve; consumed by the test suites.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SolveTrace {
    pub outer: Vec<OuterRecord>,
    pub armijo: Vec<ArmijoRecord>,
    pub forcing: Vec<ForcingRecord>,
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub x: Vec<f64>,
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    pub z: Vec<f64>,
    pub report: SolveReport,
    pub trace: SolveTrace,
}

/// Solve a problem spec with the PMM / SSN / MINRES stack.
pub fn solve(spec: &ProblemSpec, cfg: &PmmConfig) -> Result<SolveOutput> {
    if !(cfg.beta0 > 0.0 && cfg.rho0 > 0.0) {
        return Err(Error::InvalidParameter("beta0 and rho0 must be positive".into()));
    }
    if cfg.beta0 > cfg.beta_max {
        return Err(Error::InvalidParameter("beta0 exceeds beta_max".into()));
    }
    let tau0 = cfg.beta0 / cfg.rho0;
    if !(cfg.tau_min > 0.0 && cfg.tau_min <= tau0) {
        return Err(Error::InvalidParameter(
            "tau_min must satisfy 0 < tau_min <= beta0/rho0".into(),
        ));
    }
    let p = model::internalize(spec)?;
    let started = std::time::Instant::now();

    let mut state = PmmState::cold_start(&p, cfg);
    let mut cache = PrecondCache::default();
    let mut counters = Counters::default();
    let mut trace = SolveTrace::default();

    let mut res = model::kkt_residuals(&p, &state.x, &state.y1, &state.y2, &state.z)?;
    let mut history = vec![res.max_res];
    let mut status = SolveStatus::IterationLimit;
    let mut breakdown_msg = String::new();

    while counters.pmm < cfg.max_outer {
        if res.max_res <= cfg.tol {
            status = SolveStatus::Converged;
            break;
        }
        let k = counters.pmm;
        let eps_k = inner_tolerance(k, res.max_res, cfg.tol);
        let inner = ssn::run_inner(
            &p,
            &state,
            eps_k,
            &cfg.ssn,
            &cfg.minres,
            &mut cache,
            &mut counters,
            &mut trace,
        )?;
        counters.pmm += 1;

        if !vecops::all_finite(&inner.x) {
            status = SolveStatus::NumericalBreakdown;
            breakdown_msg = format!("non-finite inner iterate at outer iteration {k}");
            break;
        }
        update_multipliers(&p, &mut state, &inner.x)?;
        let res_new = model::kkt_residuals(&p, &state.x, &state.y1, &state.y2, &state.z)?;
        if !res_new.max_res.is_finite() {
            status = SolveStatus::NumericalBreakdown;
            breakdown_msg = format!("non-finite residual at outer iteration {k}");
            break;
        }
        trace.outer.push(OuterRecord {
            k,
            eps_k,
            beta: state.beta,
            grad_norm: inner.grad_norm,
            inner_converged: inner.converged,
            ssn_steps: inner.steps,
            krylov_iters: inner.krylov_iters,
            factorizations: inner.factorizations,
            max_res_after: res_new.max_res,
        });
        history.push(res_new.max_res);

        if res_new.max_res <= cfg.tol {
            res = res_new;
            status = SolveStatus::Converged;
            break;
        }

        // penalty growth; a failed inner solve escalates at the slow rate
        if inner.converged {
            update_penalties(&mut state, cfg, res.max_res, res_new.max_res);
        } else {
            let forced = PmmConfig {
                thresh_slow: 0.0,
                ..cfg.clone()
            };
            update_penalties(&mut state, &forced, 1.0, 1.0);
        }
        res = res_new;

        // stall detection over a sliding window
        if history.len() > cfg.stall_window {
            let old = history[history.len() - 1 - cfg.stall_window];
            let now = history[history.len() - 1];
            if old.is_finite() && (old - now) / old.max(f64::MIN_POSITIVE) < cfg.stall_rel_improvement {
                status = SolveStatus::Stalled;
                break;
            }
        }
    }
    if status == SolveStatus::NumericalBreakdown {
        return Err(Error::NumericalBreakdown(breakdown_msg));
    }

    // objective at the box projection of the final iterate (a converged
    // iterate may sit within tol, but outside the 1e-8 feasibility slack)
    let x_proj = project_box(&state.x, &p.lower, &p.upper);
    let objective = match model::objective_value(&p, &x_proj)? {
        model::ObjectiveValue::Finite(v) => v,
        model::ObjectiveValue::InfeasibleBox { .. } => f64::NAN,
    };

    let report = SolveReport {
        status,
        pmm_iters: counters.pmm,
        ssn_iters: counters.ssn,
        factorizations: counters.factorizations,
        krylov_iters: counters.krylov,
        residuals: res,
        objective,
        tol: cfg.tol,
        wall_time_sec: started.elapsed().as_secs_f64(),
        residual_history: history,
    };
    Ok(SolveOutput {
        x: state.x,
        y1: state.y1,
        y2: state.y2,
        z: state.z,
        report,
        trace,
    })
}
