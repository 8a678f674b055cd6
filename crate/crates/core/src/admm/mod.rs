//! Separable ADMM for the battery-power program.
//!
//! The problem is split with a copy `zeta = -P_b` and the linear SOC model
//! `E = E0 + Psi zeta`:
//!
//! ```text
//!   P_b,k  <- proj[ argmin c_k(P_b) + rho1/2 (P_b + zeta_k + nu_k)^2 ]   (hybrid k; else lower bound)
//!   zeta   <- (rho1 I + rho2 Psi^T Psi)^-1 [ -rho1 (P_b + nu) - rho2 Psi^T (E0 - E + lambda) ]
//!   E      <- clip[E_lo, E_hi]( E0 + Psi zeta + lambda )
//!   lambda <- lambda + E0 + Psi zeta - E
//!   nu     <- nu + P_b + zeta
//! ```
//!
//! The iteration stops once both the primal residual `r = [P_b + zeta; E0 + Psi zeta - E]`
//! and the dual residual `s = [rho1 dzeta; rho2 Psi dzeta - rho2 dE]` have L2 norm `<= epsilon`.

mod factor;
mod newton;

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use factor::{FactorCache, FactorError, ZetaSystem};
pub use newton::{prox_newton, NewtonFailure, NewtonParams, ScalarCost};

use crate::par::{self, Execution};
use crate::problem::{psi_apply, psi_t_apply, trivial_solution, ConvexProblem, Solution, SolverInfo};

/// Tuned penalty weights for the default FTP-75 instance.
pub const RHO1_DEFAULT: f64 = 2.34e-4;
pub const RHO2_DEFAULT: f64 = 8.86e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdmmError {
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error("Newton failed at step {step}, ADMM iteration {iter}: iterate {iterate} W, value {value}, gradient {gradient}, hessian {hessian}")]
    Newton { step: usize, iter: usize, iterate: f64, value: f64, gradient: f64, hessian: f64 },
    #[error("invalid ADMM parameters: {0}")]
    Params(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmmParams {
    /// Weight on `P_b + zeta`, 1/W.
    pub rho1: f64,
    /// Weight on the SOC model mismatch, 1/J.
    pub rho2: f64,
    /// Threshold on both residual norms.
    pub epsilon: f64,
    pub max_iter: usize,
    pub newton: NewtonParams,
    pub execution: Execution,
    /// Record the objective per iteration (costs one extra pass over the horizon).
    pub trace: bool,
}

impl Default for AdmmParams {
    fn default() -> Self {
        Self {
            rho1: RHO1_DEFAULT,
            rho2: RHO2_DEFAULT,
            epsilon: 1e5,
            max_iter: 5000,
            newton: NewtonParams::default(),
            execution: Execution::default(),
            trace: false,
        }
    }
}

impl AdmmParams {
    pub fn validate(&self) -> Result<(), AdmmError> {
        if !(self.rho1 > 0.0 && self.rho2 > 0.0) {
            return Err(AdmmError::Params(format!("rho1 and rho2 must be positive, got {} and {}", self.rho1, self.rho2)));
        }
        if !(self.epsilon > 0.0) {
            return Err(AdmmError::Params(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        let n = &self.newton;
        if !(n.shrink > 0.0 && n.shrink < 1.0 && n.sufficient_decrease > 0.0 && n.sufficient_decrease < 1.0) {
            return Err(AdmmError::Params(format!("invalid backtracking parameters {n:?}")));
        }
        Ok(())
    }
}

/// One row of the iteration trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub r_norm: f64,
    pub s_norm: f64,
    /// NaN unless tracing was requested.
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmmState {
    pub p_b: Vec<f64>,
    pub zeta: Vec<f64>,
    /// `E_1 .. E_N`.
    pub e: Vec<f64>,
    pub lambda: Vec<f64>,
    pub nu: Vec<f64>,
    pub iter: usize,
    pub history: Vec<TraceRow>,
}

impl AdmmState {
    /// `P_b = P_b_hi`, `zeta = -P_b`, `E = clip(E0 + Psi zeta)`, `lambda = E0 + Psi zeta - E`, `nu = 0`.
    pub fn initialize(prob: &ConvexProblem) -> Self {
        let p_b = prob.p_b_hi.clone();
        let zeta: Vec<f64> = p_b.iter().map(|p| -p).collect();
        let model = soc_model(prob.e0, &zeta);
        let e: Vec<f64> = model.iter().map(|x| x.clamp(prob.e_lo, prob.e_hi)).collect();
        let lambda = model.iter().zip(&e).map(|(m, e)| m - e).collect();
        let nu = vec![0.0; p_b.len()];
        Self { p_b, zeta, e, lambda, nu, iter: 0, history: Vec::new() }
    }
}

/// `E0 + Psi zeta`.
fn soc_model(e0: f64, zeta: &[f64]) -> Vec<f64> {
    psi_apply(zeta).into_iter().map(|x| e0 + x).collect()
}

/// Battery-power update for step `k` given the current `zeta`, `nu` and warm start.
pub fn pb_update(k: usize, state: &AdmmState, prob: &ConvexProblem, params: &AdmmParams) -> Result<f64, AdmmError> {
    pb_update_at(k, state.p_b[k], &state.zeta, &state.nu, prob, params, state.iter)
}

fn pb_update_at(
    k: usize,
    warm: f64,
    zeta: &[f64],
    nu: &[f64],
    prob: &ConvexProblem,
    params: &AdmmParams,
    iter: usize,
) -> Result<f64, AdmmError> {
    let Some(cost) = prob.steps[k].cost.as_ref() else {
        return Ok(prob.p_b_lo[k]);
    };
    prox_newton(cost, prob.p_b_lo[k], prob.p_b_hi[k], -zeta[k] - nu[k], params.rho1, warm, &params.newton).map_err(
        |f| AdmmError::Newton {
            step: k,
            iter,
            iterate: f.iterate,
            value: f.value,
            gradient: f.gradient,
            hessian: f.hessian,
        },
    )
}

/// Right-hand side of the `zeta` system for the given `P_b` and current `E`, `lambda`, `nu`.
pub fn zeta_rhs(p_b: &[f64], state: &AdmmState, prob: &ConvexProblem, params: &AdmmParams) -> Vec<f64> {
    let inner: Vec<f64> = state.e.iter().zip(&state.lambda).map(|(e, l)| prob.e0 - e + l).collect();
    let pt = psi_t_apply(&inner);
    (0..p_b.len()).map(|i| -params.rho1 * (p_b[i] + state.nu[i]) - params.rho2 * pt[i]).collect()
}

pub fn zeta_update(p_b: &[f64], state: &AdmmState, prob: &ConvexProblem, params: &AdmmParams, system: &ZetaSystem) -> Vec<f64> {
    system.solve(&zeta_rhs(p_b, state, prob, params))
}

/// `E` projection and both dual updates. Returns `(E, lambda, nu)`.
pub fn e_and_dual_updates(
    p_b: &[f64],
    zeta: &[f64],
    lambda: &[f64],
    nu: &[f64],
    prob: &ConvexProblem,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let model = soc_model(prob.e0, zeta);
    let e: Vec<f64> = model.iter().zip(lambda).map(|(m, l)| (m + l).clamp(prob.e_lo, prob.e_hi)).collect();
    let lambda = (0..e.len()).map(|i| lambda[i] + model[i] - e[i]).collect();
    let nu = (0..e.len()).map(|i| nu[i] + p_b[i] + zeta[i]).collect();
    (e, lambda, nu)
}

/// Primal and dual residual norms between consecutive iterates.
pub fn residuals(prev: &AdmmState, next: &AdmmState, prob: &ConvexProblem, params: &AdmmParams) -> (f64, f64) {
    let model = soc_model(prob.e0, &next.zeta);
    let r1: f64 = next.p_b.iter().zip(&next.zeta).map(|(p, z)| (p + z).powi(2)).sum();
    let r2: f64 = model.iter().zip(&next.e).map(|(m, e)| (m - e).powi(2)).sum();
    let dz: Vec<f64> = prev.zeta.iter().zip(&next.zeta).map(|(a, b)| a - b).collect();
    let pdz = psi_apply(&dz);
    let s1: f64 = dz.iter().map(|d| (params.rho1 * d).powi(2)).sum();
    let s2: f64 = (0..dz.len())
        .map(|i| (params.rho2 * pdz[i] - params.rho2 * (prev.e[i] - next.e[i])).powi(2))
        .sum();
    ((r1 + r2).sqrt(), (s1 + s2).sqrt())
}

/// One full ADMM iteration.
pub fn step(state: &AdmmState, prob: &ConvexProblem, params: &AdmmParams, system: &ZetaSystem) -> Result<AdmmState, AdmmError> {
    let mut p_b = state.p_b.clone();
    let iter = state.iter;
    par::try_for_each_indexed(params.execution, &mut p_b, |k, x| {
        *x = pb_update_at(k, *x, &state.zeta, &state.nu, prob, params, iter)?;
        Ok::<(), AdmmError>(())
    })?;
    let zeta = zeta_update(&p_b, state, prob, params, system);
    let (e, lambda, nu) = e_and_dual_updates(&p_b, &zeta, &state.lambda, &state.nu, prob);
    Ok(AdmmState { p_b, zeta, e, lambda, nu, iter: iter + 1, history: Vec::new() })
}

/// Solver with an explicit factorisation cache.
#[derive(Debug)]
pub struct AdmmSolver<'c> {
    pub params: AdmmParams,
    cache: &'c FactorCache,
}

impl<'c> AdmmSolver<'c> {
    pub fn new(params: AdmmParams, cache: &'c FactorCache) -> Self {
        Self { params, cache }
    }

    /// Runs until both residuals are below `epsilon` or `max_iter` is reached.
    pub fn solve(&self, prob: &ConvexProblem) -> Result<Solution, AdmmError> {
        self.run(prob, true).map(|(s, _)| s)
    }

    /// Like [`Self::solve`], also returning the final iterate with its residual history.
    pub fn solve_with_state(&self, prob: &ConvexProblem) -> Result<(Solution, Option<AdmmState>), AdmmError> {
        self.run(prob, true)
    }

    /// Runs exactly `iterations` iterations (unless the problem is trivially solved).
    pub fn run_fixed(&self, prob: &ConvexProblem, iterations: usize) -> Result<Solution, AdmmError> {
        let mut solver = AdmmSolver { params: self.params, cache: self.cache };
        solver.params.max_iter = iterations;
        solver.run(prob, false).map(|(s, _)| s)
    }

    fn run(&self, prob: &ConvexProblem, stop_on_residual: bool) -> Result<(Solution, Option<AdmmState>), AdmmError> {
        let params = &self.params;
        params.validate()?;
        let start = Instant::now();
        if let Some(mut sol) = trivial_solution(prob) {
            sol.solve_time = start.elapsed().as_secs_f64();
            return Ok((sol, None));
        }
        let setup = Instant::now();
        let (system, _fresh) = self.cache.get(prob.len(), params.rho1, params.rho2)?;
        let setup_time = setup.elapsed().as_secs_f64();

        let iter_start = Instant::now();
        let mut state = AdmmState::initialize(prob);
        let mut history = Vec::new();
        let (mut r_norm, mut s_norm) = (f64::INFINITY, f64::INFINITY);
        let mut converged = false;
        while state.iter < params.max_iter {
            let next = step(&state, prob, params, &system)?;
            (r_norm, s_norm) = residuals(&state, &next, prob, params);
            let objective = if params.trace { prob.objective(&next.p_b) } else { f64::NAN };
            history.push(TraceRow { iter: next.iter, r_norm, s_norm, objective });
            state = next;
            if stop_on_residual && r_norm <= params.epsilon && s_norm <= params.epsilon {
                converged = true;
                break;
            }
        }
        let solve_time = iter_start.elapsed().as_secs_f64();
        state.history = history;
        let info = SolverInfo::Admm {
            iterations: state.iter,
            converged,
            r_norm,
            s_norm,
            epsilon: params.epsilon,
            rho1: params.rho1,
            rho2: params.rho2,
        };
        let mut sol = Solution::from_battery_power(prob, state.p_b.clone(), info);
        sol.solve_time = solve_time;
        sol.setup_time = setup_time;
        Ok((sol, Some(state)))
    }
}

/// Solves with the process-wide factorisation cache.
pub fn solve(prob: &ConvexProblem, params: &AdmmParams) -> Result<Solution, AdmmError> {
    AdmmSolver::new(*params, FactorCache::global()).solve(prob)
}

/// Writes `iter,r_norm,s_norm,objective`.
pub fn write_trace<W: Write>(out: W, history: &[TraceRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in history {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
