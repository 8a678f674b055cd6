//! Dynamic programming over a uniform stored-energy mesh.
//!
//! The control is engine power. On hybrid steps it ranges over `n_p` evenly spaced values
//! in `[P_eng_lo+, P_eng_hi]`; every other step has a single admissible control. The
//! cost-to-go is interpolated linearly in `E` and is infinite off the mesh.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, Execution};
use crate::problem::{ConvexProblem, Solution, SolverInfo};
use crate::vehicle_model::battery_power;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error("invalid DP parameters: {0}")]
    Params(String),
    #[error("initial energy {e0} J is outside the mesh [{lo}, {hi}] J")]
    InitialState { e0: f64, lo: f64, hi: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpParams {
    /// Number of energy nodes.
    pub n_e: usize,
    /// `n_p = n_e / np_ratio` engine-power samples per hybrid step.
    pub np_ratio: usize,
    pub execution: Execution,
}

impl Default for DpParams {
    fn default() -> Self {
        Self { n_e: 120, np_ratio: 10, execution: Execution::default() }
    }
}

impl DpParams {
    pub fn with_n_e(n_e: usize) -> Self {
        Self { n_e, ..Self::default() }
    }

    pub fn n_p(&self) -> usize {
        (self.n_e / self.np_ratio.max(1)).max(2)
    }

    pub fn validate(&self) -> Result<(), DpError> {
        if self.n_e < 2 {
            return Err(DpError::Params(format!("n_e must be at least 2, got {}", self.n_e)));
        }
        if self.np_ratio == 0 {
            return Err(DpError::Params("np_ratio must be positive".into()));
        }
        Ok(())
    }
}

/// Candidate controls of one step: engine power, fuel power and battery power.
#[derive(Clone, Debug, PartialEq)]
struct Controls {
    p_eng: Vec<f64>,
    fuel: Vec<f64>,
    p_b: Vec<f64>,
}

fn step_controls(prob: &ConvexProblem, k: usize, n_p: usize) -> Controls {
    let s = &prob.steps[k];
    if s.cost.is_none() {
        return Controls { p_eng: vec![s.bounds.p_eng_lo], fuel: vec![s.idle_fuel], p_b: vec![prob.p_b_lo[k]] };
    }
    let (lo, hi) = (s.bounds.p_eng_lo_plus, s.bounds.p_eng_hi);
    let p_eng: Vec<f64> = (0..n_p)
        .map(|i| if i + 1 == n_p { hi } else { lo + (hi - lo) * i as f64 / (n_p - 1) as f64 })
        .collect();
    let mut fuel = Vec::with_capacity(n_p);
    let mut p_b = Vec::with_capacity(n_p);
    for &pe in &p_eng {
        match battery_power(s.p_drv - pe, &s.quads.motor, &prob.battery) {
            Ok(pb) => {
                fuel.push(s.quads.engine.eval(pe));
                p_b.push(pb);
            }
            Err(_) => {
                fuel.push(f64::INFINITY);
                p_b.push(f64::NAN);
            }
        }
    }
    Controls { p_eng, fuel, p_b }
}

/// Feasible energy interval of one column with the value and control at its end points.
///
/// Nodes outside `[lo, hi]` are infeasible. Carrying the end points explicitly keeps
/// interpolation next to the infeasible region exact instead of letting one infinite
/// node spoil a whole cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeasibleEdge {
    pub lo: f64,
    pub hi: f64,
    pub cost_lo: f64,
    pub cost_hi: f64,
    pub control_lo: f64,
    pub control_hi: f64,
}

/// Value function and optimal controls on the mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct DpMesh {
    /// Energy nodes, ascending, first `E_lo` and last `E_hi`.
    pub energy: Vec<f64>,
    /// `cost[k][i]`, `k = 0..=N`; the last column is zero.
    pub cost: Vec<Vec<f64>>,
    /// `control[k][i]`, engine power; NaN where `cost` is infinite.
    pub control: Vec<Vec<f64>>,
    /// Per column; `None` when no state of the column is feasible.
    pub edges: Vec<Option<FeasibleEdge>>,
    pub n_p: usize,
}

impl DpMesh {
    pub fn steps(&self) -> usize {
        self.control.len()
    }

    /// Cost-to-go at step `k` from energy `e`; infinite outside the feasible interval.
    pub fn cost_to_go(&self, k: usize, e: f64) -> f64 {
        self.cost_query(k, e, false)
    }

    /// With `snap`, queries just outside `[E_lo, E_hi]` are also snapped onto the band.
    fn cost_query(&self, k: usize, e: f64, snap: bool) -> f64 {
        let edge = self.edges[k].map(|d| (d.lo, d.hi, d.cost_lo, d.cost_hi));
        column_interp(&self.energy, &self.cost[k], edge, e, snap).unwrap_or(f64::INFINITY)
    }

    /// Optimal engine power at step `k` interpolated in `e`.
    pub fn control_at(&self, k: usize, e: f64) -> Option<f64> {
        let edge = self.edges[k].map(|d| (d.lo, d.hi, d.control_lo, d.control_hi));
        column_interp(&self.energy, &self.control[k], edge, e, false)
            .filter(|u| !u.is_nan())
    }

    /// Writes the value function as `k,energy,cost,control` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "energy", "cost", "control"])?;
        for k in 0..self.cost.len() {
            for (i, &e) in self.energy.iter().enumerate() {
                let u = self.control.get(k).map_or(f64::NAN, |c| c[i]);
                w.write_record([k.to_string(), e.to_string(), self.cost[k][i].to_string(), u.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Linear interpolation on a uniform ascending grid; `+inf` outside `[grid[0], grid[last]]`
/// and wherever a contributing node is infinite.
pub fn interp_cost(grid: &[f64], values: &[f64], e: f64) -> f64 {
    let n = grid.len();
    let (lo, hi) = (grid[0], grid[n - 1]);
    if !(e >= lo && e <= hi) {
        return f64::INFINITY;
    }
    let (i, w) = cell(grid, e);
    lerp(values[i], values[i + 1], w)
}

fn cell(grid: &[f64], e: f64) -> (usize, f64) {
    let n = grid.len();
    let h = (grid[n - 1] - grid[0]) / (n - 1) as f64;
    let i = (((e - grid[0]) / h).floor().max(0.0) as usize).min(n - 2);
    (i, ((e - grid[i]) / h).clamp(0.0, 1.0))
}

#[inline]
fn lerp(a: f64, b: f64, w: f64) -> f64 {
    if w == 0.0 {
        a
    } else if w == 1.0 {
        b
    } else {
        (1.0 - w) * a + w * b
    }
}

/// Interpolates node values restricted to `[lo, hi]`, substituting the edge values for the
/// neighbours that fall outside. Queries within a relative `1e-9` of the interval are
/// snapped onto it, except across the mesh ends unless `snap` is set; anything further
/// out is `None`.
fn column_interp(grid: &[f64], values: &[f64], edge: Option<(f64, f64, f64, f64)>, e: f64, snap: bool) -> Option<f64> {
    let (lo, hi, v_lo, v_hi) = edge?;
    let (g0, g1) = (grid[0], grid[grid.len() - 1]);
    let tol = 1e-9 * (g1 - g0);
    if !(e >= lo - tol && e <= hi + tol) || (!snap && (e < g0 || e > g1)) {
        return None;
    }
    let e = e.clamp(lo, hi);
    if hi - lo <= tol {
        return Some(if e - lo <= hi - e { v_lo } else { v_hi });
    }
    let (i, _) = cell(grid, e);
    let (mut x0, mut y0) = (grid[i], values[i]);
    let (mut x1, mut y1) = (grid[i + 1], values[i + 1]);
    if x0 < lo {
        (x0, y0) = (lo, v_lo);
    }
    if x1 > hi {
        (x1, y1) = (hi, v_hi);
    }
    if e <= x0 {
        return Some(y0);
    }
    if e >= x1 {
        return Some(y1);
    }
    Some(lerp(y0, y1, (e - x0) / (x1 - x0)))
}

fn energy_nodes(prob: &ConvexProblem, n_e: usize) -> Vec<f64> {
    let (lo, hi) = (prob.e_lo, prob.e_hi);
    (0..n_e).map(|i| if i + 1 == n_e { hi } else { lo + (hi - lo) * i as f64 / (n_e - 1) as f64 }).collect()
}

/// Best control index and value from energy `e`; the lowest index wins ties.
fn best_control(c: &Controls, mesh: &DpMesh, k_next: usize, e: f64, snap: bool) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for j in 0..c.fuel.len() {
        if !c.fuel[j].is_finite() {
            continue;
        }
        let v = c.fuel[j] + mesh.cost_query(k_next, e - c.p_b[j], snap);
        if v < best.1 {
            best = (j, v);
        }
    }
    best
}

/// Backward recursion over all steps.
pub fn backward_pass(prob: &ConvexProblem, params: &DpParams) -> Result<DpMesh, DpError> {
    params.validate()?;
    let n = prob.len();
    let n_p = params.n_p();
    let energy = energy_nodes(prob, params.n_e);
    let controls: Vec<Controls> = (0..n).map(|k| step_controls(prob, k, n_p)).collect();
    let mut mesh = DpMesh {
        cost: vec![Vec::new(); n + 1],
        control: vec![Vec::new(); n],
        edges: vec![None; n + 1],
        energy,
        n_p,
    };
    mesh.cost[n] = vec![0.0; params.n_e];
    mesh.edges[n] = Some(FeasibleEdge {
        lo: prob.e_lo,
        hi: prob.e_hi,
        cost_lo: 0.0,
        cost_hi: 0.0,
        control_lo: f64::NAN,
        control_hi: f64::NAN,
    });
    for k in (0..n).rev() {
        let c = &controls[k];
        let bounds = mesh.edges[k + 1].and_then(|next| {
            let usable = c.fuel.iter().zip(&c.p_b).filter(|(f, _)| f.is_finite()).map(|(_, &p)| p);
            let (pmin, pmax) = usable.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p), b.max(p)));
            let lo = (next.lo + pmin).max(prob.e_lo);
            let hi = (next.hi + pmax).min(prob.e_hi);
            (lo <= hi).then_some((lo, hi))
        });
        let mut col = vec![(f64::INFINITY, f64::NAN); params.n_e];
        if let Some((lo, hi)) = bounds {
            let m = &mesh;
            let energy = &m.energy;
            par::for_each_indexed(params.execution, &mut col, |i, out| {
                if energy[i] >= lo && energy[i] <= hi {
                    let (j, v) = best_control(c, m, k + 1, energy[i], false);
                    if v.is_finite() {
                        *out = (v, c.p_eng[j]);
                    }
                }
            });
            let (jl, vl) = best_control(c, &mesh, k + 1, lo, true);
            let (jh, vh) = best_control(c, &mesh, k + 1, hi, true);
            mesh.edges[k] = (vl.is_finite() && vh.is_finite()).then_some(FeasibleEdge {
                lo,
                hi,
                cost_lo: vl,
                cost_hi: vh,
                control_lo: c.p_eng[jl],
                control_hi: c.p_eng[jh],
            });
        }
        mesh.cost[k] = col.iter().map(|x| x.0).collect();
        mesh.control[k] = col.iter().map(|x| x.1).collect();
    }
    Ok(mesh)
}

/// Forward simulation from `E0` using the interpolated policy.
///
/// When the interpolated control would lead to a state with infinite cost-to-go, the
/// control is re-optimised at the actual state over the step's candidate set. Returns
/// battery power, engine power, the energy trajectory and whether every visited state
/// had finite cost-to-go.
pub fn forward_rollout(prob: &ConvexProblem, mesh: &DpMesh) -> (Vec<f64>, Vec<f64>, Vec<f64>, bool) {
    let n = prob.len();
    let mut p_b = Vec::with_capacity(n);
    let mut p_eng = Vec::with_capacity(n);
    let mut e_traj = Vec::with_capacity(n + 1);
    let mut e = prob.e0;
    e_traj.push(e);
    let mut feasible = mesh.cost_to_go(0, e).is_finite();
    for k in 0..n {
        let s = &prob.steps[k];
        let (pe, pb) = if s.cost.is_none() {
            (s.bounds.p_eng_lo, prob.p_b_lo[k])
        } else {
            let (lo, hi) = (s.bounds.p_eng_lo_plus, s.bounds.p_eng_hi);
            let policy = mesh.control_at(k, e).and_then(|u| {
                let u = u.clamp(lo, hi);
                battery_power(s.p_drv - u, &s.quads.motor, &prob.battery).ok().map(|pb| (u, pb))
            });
            match policy {
                Some((u, pb)) if mesh.cost_to_go(k + 1, e - pb).is_finite() => (u, pb),
                other => {
                    let c = step_controls(prob, k, mesh.n_p);
                    let (j, v) = best_control(&c, mesh, k + 1, e, false);
                    if v.is_finite() {
                        (c.p_eng[j], c.p_b[j])
                    } else {
                        feasible = false;
                        other.unwrap_or((c.p_eng[0], c.p_b[0]))
                    }
                }
            }
        };
        e -= pb;
        if !mesh.cost_to_go(k + 1, e).is_finite() {
            feasible = false;
        }
        p_eng.push(pe);
        p_b.push(pb);
        e_traj.push(e);
    }
    (p_b, p_eng, e_traj, feasible)
}

/// Backward pass plus rollout.
pub fn solve(prob: &ConvexProblem, params: &DpParams) -> Result<Solution, DpError> {
    solve_with_mesh(prob, params).map(|(s, _)| s)
}

pub fn solve_with_mesh(prob: &ConvexProblem, params: &DpParams) -> Result<(Solution, DpMesh), DpError> {
    params.validate()?;
    if !(prob.e0 >= prob.e_lo && prob.e0 <= prob.e_hi) {
        return Err(DpError::InitialState { e0: prob.e0, lo: prob.e_lo, hi: prob.e_hi });
    }
    let start = Instant::now();
    let mesh = backward_pass(prob, params)?;
    let (p_b, p_eng, e_traj, feasible) = forward_rollout(prob, &mesh);
    let solve_time = start.elapsed().as_secs_f64();
    let info = SolverInfo::Dp { n_e: params.n_e, n_p: mesh.n_p, feasible };
    let mut sol = Solution::assemble(prob, p_b, p_eng, e_traj, info);
    sol.solve_time = solve_time;
    Ok((sol, mesh))
}
