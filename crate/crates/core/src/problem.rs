//! The convex program in battery-power coordinates.
//!
//! After restricting each loss map to its non-decreasing branch, `g` is one-to-one and
//! the stage cost becomes `c_k(P_b) = f_k(P_drv,k - g_k^-1(P_b))`, convex and
//! non-increasing in `P_b`. Stored energy follows the linear dynamics
//! `E_{k+1} = E_k - P_b,k` (1 s steps) and is boxed in `[E_lo, E_hi]`. Only hybrid steps
//! carry a decision; all other steps have equal lower and upper battery-power bounds.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drive_cycle::DriveScenario;
use crate::vehicle_model::{
    battery_power, restricted_bounds, BatteryInverse, BatteryParams, ModelError, PowertrainModel, Quadratic,
    StepBounds, StepClass, StepQuadratics, DECLUTCHED_ENGINE_POWER,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("step {0} is not a hybrid step")]
    NotHybrid(usize),
    #[error("step {k}: battery power {p_b} W outside [{lo}, {hi}] W")]
    OutOfBounds { k: usize, p_b: f64, lo: f64, hi: f64 },
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("initial energy {e0} J outside [{e_lo}, {e_hi}] J")]
    InitialEnergy { e0: f64, e_lo: f64, e_hi: f64 },
}

/// Value and derivatives of a stage cost.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostEval {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// `f(P_drv - g^-1(P_b))` for one hybrid step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComposedCost {
    engine: Quadratic,
    inverse: BatteryInverse,
    p_drv: f64,
}

impl ComposedCost {
    pub fn new(engine: Quadratic, motor: &Quadratic, batt: &BatteryParams, p_drv: f64) -> Self {
        Self { engine, inverse: BatteryInverse::new(motor, batt), p_drv }
    }

    #[inline]
    pub fn eval(&self, p_b: f64) -> CostEval {
        let x = self.inverse.eval(p_b);
        let u = self.p_drv - x.value;
        let slope = self.engine.slope(u);
        CostEval {
            value: self.engine.eval(u),
            d1: -slope * x.d1,
            d2: 2.0 * self.engine.c2 * x.d1 * x.d1 - slope * x.d2,
        }
    }

    #[inline]
    pub fn value(&self, p_b: f64) -> f64 {
        self.engine.eval(self.engine_power(p_b))
    }

    /// Engine power recovered from battery power, `P_drv - g^-1(P_b)`.
    #[inline]
    pub fn engine_power(&self, p_b: f64) -> f64 {
        self.p_drv - self.inverse.eval(p_b).value
    }
}

/// Everything known about one horizon step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepData {
    pub class: StepClass,
    pub p_drv: f64,
    pub omega: f64,
    pub quads: StepQuadratics,
    pub bounds: StepBounds,
    /// Fuel burnt while declutched (`f_k` at the declutched engine power); zero on hybrid steps.
    pub idle_fuel: f64,
    /// Present on hybrid steps only.
    pub cost: Option<ComposedCost>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexProblem {
    pub steps: Vec<StepData>,
    pub p_b_lo: Vec<f64>,
    pub p_b_hi: Vec<f64>,
    pub e0: f64,
    pub e_lo: f64,
    pub e_hi: f64,
    pub battery: BatteryParams,
    /// Indices of hybrid steps.
    pub hybrid: Vec<usize>,
}

impl ConvexProblem {
    /// Assembles the program for a scenario.
    pub fn build(scenario: &DriveScenario, model: &PowertrainModel) -> Result<Self, ProblemError> {
        model.validate()?;
        let batt = model.battery;
        let (e_lo, e_hi) = (batt.e_lo(), batt.e_hi());
        if !(scenario.e0 >= e_lo && scenario.e0 <= e_hi) {
            return Err(ProblemError::InitialEnergy { e0: scenario.e0, e_lo, e_hi });
        }
        let mut steps = Vec::with_capacity(scenario.len());
        for k in 0..scenario.len() {
            let class = scenario.class[k];
            let p_drv = scenario.p_drv[k];
            let quads = model.step_quadratics(scenario.omega_eng[k], scenario.omega_em[k]);
            let bounds = restricted_bounds(k, class, p_drv, scenario.omega[k], &quads, model)?;
            let (idle_fuel, cost) = match class {
                StepClass::Hybrid => (0.0, Some(ComposedCost::new(quads.engine, &quads.motor, &batt, p_drv))),
                _ if model.idle_fuel => (quads.engine.eval(DECLUTCHED_ENGINE_POWER), None),
                _ => (0.0, None),
            };
            steps.push(StepData { class, p_drv, omega: scenario.omega[k], quads, bounds, idle_fuel, cost });
        }
        Ok(Self::from_steps(steps, scenario.e0, batt))
    }

    /// Assembles a problem from precomputed step data.
    pub fn from_steps(steps: Vec<StepData>, e0: f64, battery: BatteryParams) -> Self {
        let p_b_lo = steps.iter().map(|s| s.bounds.p_b_lo).collect();
        let p_b_hi = steps.iter().map(|s| s.bounds.p_b_hi).collect();
        let hybrid = steps.iter().enumerate().filter(|(_, s)| s.class == StepClass::Hybrid).map(|(k, _)| k).collect();
        Self { steps, p_b_lo, p_b_hi, e0, e_lo: battery.e_lo(), e_hi: battery.e_hi(), battery, hybrid }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_hybrid(&self, k: usize) -> bool {
        self.steps[k].class == StepClass::Hybrid
    }

    /// Stage cost and its derivatives at a hybrid step.
    pub fn composed_cost(&self, k: usize, p_b: f64) -> Result<CostEval, ProblemError> {
        let cost = self.steps.get(k).and_then(|s| s.cost.as_ref()).ok_or(ProblemError::NotHybrid(k))?;
        let (lo, hi) = (self.p_b_lo[k], self.p_b_hi[k]);
        if !(p_b >= lo && p_b <= hi) {
            return Err(ProblemError::OutOfBounds { k, p_b, lo, hi });
        }
        Ok(cost.eval(p_b))
    }

    /// Sum of hybrid stage costs.
    pub fn objective(&self, p_b: &[f64]) -> f64 {
        self.hybrid.iter().map(|&k| self.steps[k].cost.as_ref().unwrap().value(p_b[k])).sum()
    }

    /// Sum of the constant declutched fuel terms.
    pub fn idle_fuel(&self) -> f64 {
        self.steps.iter().map(|s| s.idle_fuel).sum()
    }

    pub fn capacity_j(&self) -> f64 {
        self.battery.capacity_j()
    }
}

/// `Psi z`: cumulative sum (lower-triangular matrix of ones).
pub fn psi_apply(z: &[f64]) -> Vec<f64> {
    z.iter()
        .scan(0.0, |acc, &x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

/// `Psi^T y`: reverse cumulative sum.
pub fn psi_t_apply(y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    let mut acc = 0.0;
    for i in (0..y.len()).rev() {
        acc += y[i];
        out[i] = acc;
    }
    out
}

/// `E_0, E_1, ..., E_N` under `E_{k+1} = E_k - P_b,k`.
pub fn soc_trajectory(e0: f64, p_b: &[f64]) -> Vec<f64> {
    let mut e = Vec::with_capacity(p_b.len() + 1);
    e.push(e0);
    let mut cur = e0;
    for &p in p_b {
        cur -= p;
        e.push(cur);
    }
    e
}

/// Solver-specific metadata attached to a [`Solution`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "solver", rename_all = "lowercase")]
pub enum SolverInfo {
    /// Maximal discharge was SOC-feasible; no iterations needed.
    Trivial,
    Admm {
        iterations: usize,
        converged: bool,
        r_norm: f64,
        s_norm: f64,
        epsilon: f64,
        rho1: f64,
        rho2: f64,
    },
    Dp {
        n_e: usize,
        n_p: usize,
        /// False when the rollout left the SOC mesh or started from an infeasible state.
        feasible: bool,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    /// Largest excursion of the SOC trajectory outside `[E_lo, E_hi]`, % of capacity.
    pub max_soc_violation_pct: f64,
    /// Largest excursion of `P_b` outside its step bounds, W.
    pub max_bound_violation_w: f64,
    /// Largest `|E_{k+1} - E_k + P_b,k|`, J.
    pub dynamics_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub p_b: Vec<f64>,
    pub p_eng: Vec<f64>,
    /// Fuel power per step (idle fuel on declutched steps).
    pub p_f: Vec<f64>,
    /// `E_0 .. E_N`, J.
    pub e_traj: Vec<f64>,
    /// Total fuel energy over the horizon including idle terms, J.
    pub fuel_cost: f64,
    /// Sum of hybrid stage costs, J.
    pub objective: f64,
    /// Iteration time excluding one-off setup, s.
    pub solve_time: f64,
    /// One-off setup time (factorisation, mesh allocation), s.
    pub setup_time: f64,
    pub info: SolverInfo,
    pub audit: AuditReport,
}

impl Solution {
    /// Completes a solution from battery powers, recovering engine power on hybrid steps.
    pub fn from_battery_power(prob: &ConvexProblem, p_b: Vec<f64>, info: SolverInfo) -> Self {
        let p_eng: Vec<f64> = prob
            .steps
            .iter()
            .zip(&p_b)
            .map(|(s, &pb)| match &s.cost {
                Some(c) => c.engine_power(pb),
                None => s.bounds.p_eng_lo,
            })
            .collect();
        let e_traj = soc_trajectory(prob.e0, &p_b);
        Self::assemble(prob, p_b, p_eng, e_traj, info)
    }

    pub(crate) fn assemble(
        prob: &ConvexProblem,
        p_b: Vec<f64>,
        p_eng: Vec<f64>,
        e_traj: Vec<f64>,
        info: SolverInfo,
    ) -> Self {
        let p_f: Vec<f64> = prob
            .steps
            .iter()
            .zip(&p_eng)
            .map(|(s, &pe)| if s.cost.is_some() { s.quads.engine.eval(pe) } else { s.idle_fuel })
            .collect();
        let objective = prob.hybrid.iter().map(|&k| p_f[k]).sum();
        let fuel_cost = p_f.iter().sum();
        let mut sol = Self {
            p_b,
            p_eng,
            p_f,
            e_traj,
            fuel_cost,
            objective,
            solve_time: 0.0,
            setup_time: 0.0,
            info,
            audit: AuditReport::default(),
        };
        sol.audit = audit(&sol, prob);
        sol
    }

    pub fn converged(&self) -> bool {
        match self.info {
            SolverInfo::Trivial => true,
            SolverInfo::Admm { converged, .. } => converged,
            SolverInfo::Dp { feasible, .. } => feasible,
        }
    }

    /// SOC trajectory as % of capacity.
    pub fn soc_pct(&self, capacity_j: f64) -> Vec<f64> {
        self.e_traj.iter().map(|e| 100.0 * e / capacity_j).collect()
    }
}

/// Returns the maximal-discharge solution when it never leaves the SOC band.
pub fn trivial_solution(prob: &ConvexProblem) -> Option<Solution> {
    let start = Instant::now();
    let e = soc_trajectory(prob.e0, &prob.p_b_hi);
    if e[1..].iter().all(|&x| x >= prob.e_lo && x <= prob.e_hi) {
        let mut sol = Solution::from_battery_power(prob, prob.p_b_hi.clone(), SolverInfo::Trivial);
        sol.solve_time = start.elapsed().as_secs_f64();
        Some(sol)
    } else {
        None
    }
}

/// L1 distance between two fuel-power vectors.
pub fn fuel_metric(p_f_star: &[f64], p_f_dagger: &[f64]) -> Result<f64, ProblemError> {
    if p_f_star.len() != p_f_dagger.len() {
        return Err(ProblemError::LengthMismatch(p_f_star.len(), p_f_dagger.len()));
    }
    Ok(p_f_star.iter().zip(p_f_dagger).map(|(a, b)| (a - b).abs()).sum())
}

/// Constraint audit of a solution; never modifies it.
pub fn audit(sol: &Solution, prob: &ConvexProblem) -> AuditReport {
    let cap = prob.capacity_j();
    let soc = sol.e_traj[1..]
        .iter()
        .map(|&e| (prob.e_lo - e).max(e - prob.e_hi).max(0.0))
        .fold(0.0, f64::max);
    let bound = sol
        .p_b
        .iter()
        .enumerate()
        .map(|(k, &p)| (prob.p_b_lo[k] - p).max(p - prob.p_b_hi[k]).max(0.0))
        .fold(0.0, f64::max);
    let dyn_res = sol
        .e_traj
        .windows(2)
        .zip(&sol.p_b)
        .map(|(w, &p)| (w[1] - w[0] + p).abs())
        .fold(0.0, f64::max);
    AuditReport { max_soc_violation_pct: 100.0 * soc / cap, max_bound_violation_w: bound, dynamics_residual: dyn_res }
}

/// Battery power at a step for a given engine power.
pub fn battery_power_for_engine(step: &StepData, p_eng: f64, batt: &BatteryParams) -> Result<f64, ModelError> {
    battery_power(step.p_drv - p_eng, &step.quads.motor, batt)
}
