//! Experiment harness behind the `hevmpc` binary.

// NaN-rejecting comparisons are written as negations on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod args;
pub mod commands;
pub mod reference;

use std::fmt;
use std::path::Path;

use hevmpc::admm::AdmmError;
use hevmpc::drive_cycle::{load_cycle, CycleData, CycleError, LoadOptions};
use hevmpc::problem::ProblemError;
use hevmpc::vehicle_model::ModelError;
use hevmpc::{ConvexProblem, PowertrainModel};
use serde::Serialize;

use crate::args::InputArgs;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;

/// Failure classes that map onto process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or unreadable/invalid input files.
    Usage(String),
    /// The scenario admits no feasible power split.
    Infeasible(String),
    /// Output was written but the solver hit its iteration cap.
    NotConverged(String),
    Other(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Infeasible(_) => EXIT_INFEASIBLE,
            CliError::NotConverged(_) => EXIT_NOT_CONVERGED,
            CliError::Other(_) => EXIT_FAILURE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Infeasible(m) => write!(f, "infeasible: {m}"),
            CliError::NotConverged(m) => write!(f, "not converged: {m}"),
            CliError::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Other(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(e.into())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InfeasibleBounds { .. }
            | ModelError::BatteryRadicand { .. }
            | ModelError::InverseDomain { .. }
            | ModelError::SpeedOutOfRange { .. } => CliError::Infeasible(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<CycleError> for CliError {
    fn from(e: CycleError) -> Self {
        match e {
            CycleError::Model(m) => m.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<ProblemError> for CliError {
    fn from(e: ProblemError) -> Self {
        match e {
            ProblemError::Model(m) => m.into(),
            ProblemError::InitialEnergy { .. } => CliError::Infeasible(e.to_string()),
            other => CliError::Other(anyhow::anyhow!(other)),
        }
    }
}

impl From<AdmmError> for CliError {
    fn from(e: AdmmError) -> Self {
        match e {
            AdmmError::Params(m) => CliError::Usage(m),
            other => CliError::Other(anyhow::anyhow!(other)),
        }
    }
}

impl From<hevmpc::DpError> for CliError {
    fn from(e: hevmpc::DpError) -> Self {
        match e {
            hevmpc::DpError::Params(m) => CliError::Usage(m),
            other => CliError::Infeasible(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Cycle and model named by the input flags.
pub fn load_inputs(args: &InputArgs) -> CliResult<(CycleData, PowertrainModel)> {
    let cycle = match &args.cycle {
        Some(path) => load_cycle(path, LoadOptions { units: args.units.into(), min_samples: args.min_samples })?,
        None => CycleData::ftp75(),
    };
    let model = match &args.model {
        Some(path) => PowertrainModel::from_json_path(path)?,
        None => PowertrainModel::default(),
    };
    Ok((cycle, model))
}

pub fn build_problem(cycle: &CycleData, model: &PowertrainModel, theta_s_deg: f64, mu: f64) -> CliResult<ConvexProblem> {
    let sc = hevmpc::make_scenario(cycle, theta_s_deg.to_radians(), mu, model)?;
    Ok(ConvexProblem::build(&sc, model)?)
}

/// `n` log-spaced values from `lo` to `hi` inclusive; integral decades are exact.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| {
            if i == 0 {
                return lo;
            }
            if i + 1 == n {
                return hi;
            }
            let e = a + (b - a) * i as f64 / (n - 1) as f64;
            if (e - e.round()).abs() < 1e-12 {
                format!("1e{}", e.round() as i64).parse().unwrap()
            } else {
                10f64.powf(e)
            }
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct HostInfo {
    pub os: &'static str,
    pub arch: &'static str,
    pub threads: usize,
    pub parallel_feature: bool,
    pub version: &'static str,
    pub unix_time: u64,
}

impl HostInfo {
    pub fn current() -> Self {
        Self {
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            parallel_feature: hevmpc::Execution::Parallel.is_parallel(),
            version: env!("CARGO_PKG_VERSION"),
            unix_time: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }
}

/// JSON sidecar echoing the command, its configuration and the host.
#[derive(Debug, Serialize)]
pub struct Sidecar<'a, C: Serialize, S: Serialize> {
    pub command: &'a str,
    pub config: &'a C,
    pub host: HostInfo,
    pub summary: S,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| anyhow::anyhow!("writing {}: {e}", path.display()))?;
    Ok(())
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| anyhow::anyhow!("creating {}: {e}", dir.display()))?;
    Ok(())
}
