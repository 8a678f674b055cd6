use std::path::Path;
use std::time::Instant;

use hevmpc::admm::{write_trace, AdmmSolver, FactorCache};
use hevmpc::drive_cycle::CycleData;
use hevmpc::problem::SolverInfo;
use hevmpc::{dp, AdmmParams, ConvexProblem, DpParams, Execution, PowertrainModel, Solution};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::args::{AdmmArgs, Axis, ReferenceArgs, SolveArgs, SolverKind, SweepArgs, TrajArgs, TuneArgs};
use crate::reference::{ReferenceOptimum, ReferenceStore};
use crate::{build_problem, ensure_dir, load_inputs, log_grid, write_json, CliError, CliResult, HostInfo, Sidecar};

fn admm_params(a: &AdmmArgs, epsilon: f64, execution: Execution) -> AdmmParams {
    AdmmParams { rho1: a.rho1, rho2: a.rho2, epsilon, max_iter: a.max_iter, execution, ..AdmmParams::default() }
}

fn iterations(info: &SolverInfo) -> usize {
    match info {
        SolverInfo::Admm { iterations, .. } => *iterations,
        _ => 0,
    }
}

/// One row of `trajectory.csv`.
#[derive(Debug, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub k: usize,
    pub energy_j: f64,
    pub soc_pct: f64,
    pub p_b: Option<f64>,
    pub p_eng: Option<f64>,
    pub p_f: Option<f64>,
}

fn write_trajectory(path: &Path, sol: &Solution, capacity_j: f64) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (k, &e) in sol.e_traj.iter().enumerate() {
        w.serialize(TrajectoryRow {
            k,
            energy_j: e,
            soc_pct: 100.0 * e / capacity_j,
            p_b: sol.p_b.get(k).copied(),
            p_eng: sol.p_eng.get(k).copied(),
            p_f: sol.p_f.get(k).copied(),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SolveSummary {
    fuel_cost_j: f64,
    objective_j: f64,
    solve_time_s: f64,
    setup_time_s: f64,
    converged: bool,
    info: SolverInfo,
    max_soc_violation_pct: f64,
}

/// `solve`: writes `solution.json`, `trajectory.csv` and `solve.meta.json`.
pub fn solve(args: &SolveArgs) -> CliResult<()> {
    let (cycle, model) = load_inputs(&args.input)?;
    let prob = build_problem(&cycle, &model, args.theta_s, args.mu)?;
    let exec = args.input.execution.into();
    let (sol, trace, mesh) = match args.solver {
        SolverKind::Admm => {
            let params = admm_params(&args.admm, args.epsilon, exec);
            let (sol, state) = AdmmSolver::new(params, FactorCache::global()).solve_with_state(&prob)?;
            (sol, state.map(|s| s.history), None)
        }
        SolverKind::Dp => {
            let params = DpParams { n_e: args.ne, np_ratio: args.np_ratio, execution: exec };
            if args.mesh {
                let (sol, mesh) = dp::solve_with_mesh(&prob, &params)?;
                (sol, None, Some(mesh))
            } else {
                (dp::solve(&prob, &params)?, None, None)
            }
        }
    };
    ensure_dir(&args.out)?;
    write_json(&args.out.join("solution.json"), &sol)?;
    write_trajectory(&args.out.join("trajectory.csv"), &sol, prob.capacity_j())?;
    if let (true, Some(rows)) = (args.trace, &trace) {
        write_trace(std::fs::File::create(args.out.join("admm_trace.csv"))?, rows)?;
    }
    if let Some(mesh) = &mesh {
        mesh.write_csv(std::fs::File::create(args.out.join("dp_mesh.csv"))?)?;
    }
    let summary = SolveSummary {
        fuel_cost_j: sol.fuel_cost,
        objective_j: sol.objective,
        solve_time_s: sol.solve_time,
        setup_time_s: sol.setup_time,
        converged: sol.converged(),
        info: sol.info.clone(),
        max_soc_violation_pct: sol.audit.max_soc_violation_pct,
    };
    write_json(&args.out.join("solve.meta.json"), &Sidecar { command: "solve", config: args, host: HostInfo::current(), summary })?;
    match (&sol.info, sol.converged()) {
        (_, true) => Ok(()),
        (SolverInfo::Dp { .. }, false) => Err(CliError::Infeasible("DP rollout left the feasible SOC band".into())),
        (info, false) => Err(CliError::NotConverged(format!("{info:?}"))),
    }
}

#[allow(clippy::too_many_arguments)]
fn reference_for(
    r: &ReferenceArgs,
    out: &Path,
    prob: &ConvexProblem,
    cycle: &CycleData,
    model: &PowertrainModel,
    theta_s: f64,
    mu: f64,
    execution: Execution,
) -> CliResult<ReferenceOptimum> {
    let reference = match &r.reference {
        Some(path) => ReferenceOptimum::load(path)?,
        None => {
            let dir = r.cache_dir.clone().unwrap_or_else(|| out.join("cache"));
            let store = ReferenceStore { dir, params: DpParams { n_e: r.ref_ne, np_ratio: 10, execution } };
            store.get(prob, cycle, model, theta_s, mu)?
        }
    };
    if reference.p_f.len() != prob.len() || reference.e_traj.len() != prob.len() + 1 {
        return Err(CliError::Usage(format!(
            "reference covers {} steps but the scenario has {}; check --reference",
            reference.p_f.len(),
            prob.len()
        )));
    }
    Ok(reference)
}

/// One row of `rho_grid.csv`.
#[derive(Debug, Serialize, Deserialize)]
pub struct RhoRow {
    pub rho1: f64,
    pub rho2: f64,
    pub metric_j: f64,
    pub r_norm: f64,
    pub s_norm: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RhoArgmin {
    pub rho1: f64,
    pub rho2: f64,
    pub metric_j: f64,
}

/// `tune-rho`: writes `rho_grid.csv`, `rho_argmin.json` and `tune_rho.meta.json`.
pub fn tune_rho(args: &TuneArgs) -> CliResult<()> {
    if args.rho1_points == 0 || args.rho2_points == 0 || args.iterations == 0 {
        return Err(CliError::Usage("grid sizes and --iterations must be positive".into()));
    }
    let (cycle, model) = load_inputs(&args.input)?;
    let prob = build_problem(&cycle, &model, args.theta_s, args.mu)?;
    let exec = args.input.execution.into();
    let reference = reference_for(&args.reference, &args.out, &prob, &cycle, &model, args.theta_s, args.mu, exec)?;
    let cache = FactorCache::new();
    let mut rows = Vec::new();
    for &rho1 in &log_grid(args.rho1_min, args.rho1_max, args.rho1_points) {
        for &rho2 in &log_grid(args.rho2_min, args.rho2_max, args.rho2_points) {
            let params = AdmmParams { rho1, rho2, execution: exec, ..AdmmParams::default() };
            let sol = AdmmSolver::new(params, &cache).run_fixed(&prob, args.iterations)?;
            let (r_norm, s_norm) = match sol.info {
                SolverInfo::Admm { r_norm, s_norm, .. } => (r_norm, s_norm),
                _ => (0.0, 0.0),
            };
            rows.push(RhoRow { rho1, rho2, metric_j: reference.metric(&sol.p_f)?, r_norm, s_norm });
        }
    }
    let best = rows
        .iter()
        .filter(|r| r.metric_j.is_finite())
        .min_by(|a, b| a.metric_j.total_cmp(&b.metric_j))
        .map(|r| RhoArgmin { rho1: r.rho1, rho2: r.rho2, metric_j: r.metric_j })
        .ok_or_else(|| CliError::Other(anyhow::anyhow!("no grid point produced a finite metric")))?;
    ensure_dir(&args.out)?;
    let mut w = csv::Writer::from_path(args.out.join("rho_grid.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    write_json(&args.out.join("rho_argmin.json"), &best)?;
    write_json(&args.out.join("tune_rho.meta.json"), &Sidecar { command: "tune-rho", config: args, host: HostInfo::current(), summary: &best })?;
    Ok(())
}

/// One row of `sweep.csv`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchRecord {
    pub scenario_id: String,
    pub theta_s_deg: f64,
    pub mu: f64,
    pub solver: String,
    /// `epsilon` for ADMM, `n_e` for DP.
    pub param: String,
    pub param_value: f64,
    pub mean_time_s: f64,
    pub metric_j: f64,
    pub metric_pct: f64,
    pub fuel_j: f64,
    pub max_soc_violation_pct: f64,
    pub converged: bool,
    pub iterations: usize,
    pub error: String,
}

struct Scenario {
    theta_s: f64,
    mu: f64,
    prob: ConvexProblem,
    reference: ReferenceOptimum,
}

#[derive(Clone, Copy)]
struct Cell {
    scenario: usize,
    solver: SolverKind,
    value: f64,
}

fn scenario_id(theta_s: f64, mu: f64) -> String {
    format!("theta{theta_s:+}_mu{mu}")
}

fn run_cell(cell: &Cell, sc: &Scenario, args: &SweepArgs, exec: Execution) -> BenchRecord {
    let mut rec = BenchRecord {
        scenario_id: scenario_id(sc.theta_s, sc.mu),
        theta_s_deg: sc.theta_s,
        mu: sc.mu,
        solver: match cell.solver {
            SolverKind::Admm => "admm".into(),
            SolverKind::Dp => "dp".into(),
        },
        param: match cell.solver {
            SolverKind::Admm => "epsilon".into(),
            SolverKind::Dp => "n_e".into(),
        },
        param_value: cell.value,
        mean_time_s: f64::NAN,
        metric_j: f64::NAN,
        metric_pct: f64::NAN,
        fuel_j: f64::NAN,
        max_soc_violation_pct: f64::NAN,
        converged: false,
        iterations: 0,
        error: String::new(),
    };
    let once = || -> Result<(Solution, f64), String> {
        let start = Instant::now();
        let sol = match cell.solver {
            SolverKind::Admm => hevmpc::admm::solve(&sc.prob, &admm_params(&args.admm, cell.value, exec)).map_err(|e| e.to_string())?,
            SolverKind::Dp => {
                let p = DpParams { n_e: cell.value as usize, np_ratio: args.np_ratio, execution: exec };
                dp::solve(&sc.prob, &p).map_err(|e| e.to_string())?
            }
        };
        Ok((sol, start.elapsed().as_secs_f64()))
    };
    // warm the factorisation cache so every repeat measures the same work
    if cell.solver == SolverKind::Admm {
        if let Err(e) = FactorCache::global().get(sc.prob.len(), args.admm.rho1, args.admm.rho2) {
            rec.error = e.to_string();
            return rec;
        }
    }
    let mut total = 0.0;
    let mut last = None;
    for _ in 0..args.repeats {
        match once() {
            Ok((sol, t)) => {
                total += t;
                last = Some(sol);
            }
            Err(e) => {
                rec.error = e;
                return rec;
            }
        }
    }
    let sol = last.expect("at least one repeat");
    rec.mean_time_s = total / args.repeats as f64;
    match sc.reference.metric(&sol.p_f) {
        Ok(j) => {
            rec.metric_j = j;
            rec.metric_pct = 100.0 * j / sc.reference.fuel_cost;
        }
        Err(e) => rec.error = e.to_string(),
    }
    rec.fuel_j = sol.fuel_cost;
    rec.max_soc_violation_pct = sol.audit.max_soc_violation_pct;
    rec.converged = sol.converged();
    rec.iterations = iterations(&sol.info);
    rec
}

/// `sweep`: writes `sweep.csv` and `sweep.meta.json`.
pub fn sweep(args: &SweepArgs) -> CliResult<Vec<BenchRecord>> {
    if args.repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    let pairs: Vec<(f64, f64)> = match args.axis {
        Axis::Theta => args.theta_s.iter().map(|&t| (t, 1.0)).collect(),
        Axis::Mu => args.mu.iter().map(|&m| (args.mu_theta_s, m)).collect(),
    };
    if pairs.is_empty() || args.solvers.is_empty() {
        return Err(CliError::Usage("sweep needs at least one scenario and one solver".into()));
    }
    let (cycle, model) = load_inputs(&args.input)?;
    let exec: Execution = args.input.execution.into();
    let mut scenarios = Vec::new();
    for &(theta_s, mu) in &pairs {
        let prob = build_problem(&cycle, &model, theta_s, mu)?;
        let reference = reference_for(&args.reference, &args.out, &prob, &cycle, &model, theta_s, mu, exec)?;
        scenarios.push(Scenario { theta_s, mu, prob, reference });
    }
    let mut cells = Vec::new();
    for scenario in 0..scenarios.len() {
        for &solver in &args.solvers {
            let values: Vec<f64> = match solver {
                SolverKind::Admm => args.epsilon.clone(),
                SolverKind::Dp => args.ne.iter().map(|&n| n as f64).collect(),
            };
            cells.extend(values.into_iter().map(|value| Cell { scenario, solver, value }));
        }
    }
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(args.seed));
    let (cell_exec, solver_exec) = if args.timing_strict { (Execution::Sequential, exec) } else { (exec, exec) };
    let results = hevmpc::par::map(cell_exec, &order, |&i| (i, run_cell(&cells[i], &scenarios[cells[i].scenario], args, solver_exec)));
    let mut records = vec![None; cells.len()];
    for (i, rec) in results {
        records[i] = Some(rec);
    }
    let records: Vec<BenchRecord> = records.into_iter().map(|r| r.expect("every cell ran")).collect();
    ensure_dir(&args.out)?;
    let mut w = csv::Writer::from_path(args.out.join("sweep.csv"))?;
    for r in &records {
        w.serialize(r)?;
    }
    w.flush()?;
    #[derive(Serialize)]
    struct Summary {
        rows: usize,
        failed_cells: usize,
    }
    let summary = Summary { rows: records.len(), failed_cells: records.iter().filter(|r| !r.error.is_empty()).count() };
    write_json(&args.out.join("sweep.meta.json"), &Sidecar { command: "sweep", config: args, host: HostInfo::current(), summary })?;
    Ok(records)
}

/// One row of `traj.csv`.
#[derive(Debug, Serialize, Deserialize)]
pub struct TrajRow {
    pub k: usize,
    pub optimum_soc_pct: f64,
    pub admm_soc_pct: f64,
    pub dp_soc_pct: f64,
    pub soc_lo_pct: f64,
    pub soc_hi_pct: f64,
}

/// `traj`: writes `traj.csv` and `traj.meta.json`.
pub fn traj(args: &TrajArgs) -> CliResult<()> {
    let (cycle, model) = load_inputs(&args.input)?;
    let prob = build_problem(&cycle, &model, args.theta_s, args.mu)?;
    let exec = args.input.execution.into();
    let reference = reference_for(&args.reference, &args.out, &prob, &cycle, &model, args.theta_s, args.mu, exec)?;
    let admm = hevmpc::admm::solve(&prob, &admm_params(&args.admm, args.epsilon, exec))?;
    let dps = dp::solve(&prob, &DpParams { n_e: args.ne, np_ratio: args.np_ratio, execution: exec })?;
    let cap = prob.capacity_j();
    let pct = |e: f64| 100.0 * e / cap;
    ensure_dir(&args.out)?;
    let mut w = csv::Writer::from_path(args.out.join("traj.csv"))?;
    for k in 0..=prob.len() {
        w.serialize(TrajRow {
            k,
            optimum_soc_pct: pct(reference.e_traj[k]),
            admm_soc_pct: pct(admm.e_traj[k]),
            dp_soc_pct: pct(dps.e_traj[k]),
            soc_lo_pct: pct(prob.e_lo),
            soc_hi_pct: pct(prob.e_hi),
        })?;
    }
    w.flush()?;
    #[derive(Serialize)]
    struct Summary {
        admm_metric_j: f64,
        dp_metric_j: f64,
        admm_max_soc_violation_pct: f64,
        dp_max_soc_violation_pct: f64,
    }
    let summary = Summary {
        admm_metric_j: reference.metric(&admm.p_f)?,
        dp_metric_j: reference.metric(&dps.p_f)?,
        admm_max_soc_violation_pct: admm.audit.max_soc_violation_pct,
        dp_max_soc_violation_pct: dps.audit.max_soc_violation_pct,
    };
    write_json(&args.out.join("traj.meta.json"), &Sidecar { command: "traj", config: args, host: HostInfo::current(), summary })?;
    Ok(())
}
