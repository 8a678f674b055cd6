use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hevmpc::drive_cycle::{SpeedUnits, MIN_CYCLE_SAMPLES};
use hevmpc::Execution;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "hevmpc", version, about = "Energy-management solvers for parallel plug-in hybrids")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one scenario and write the solution.
    Solve(SolveArgs),
    /// Fixed-budget ADMM runs over a log-spaced rho1 x rho2 grid.
    TuneRho(TuneArgs),
    /// Time solvers across a family of scenarios.
    Sweep(SweepArgs),
    /// Export optimum, ADMM and DP state-of-charge trajectories side by side.
    Traj(TrajArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    Mps,
    Mph,
    Kph,
}

impl From<Units> for SpeedUnits {
    fn from(u: Units) -> Self {
        match u {
            Units::Mps => SpeedUnits::Mps,
            Units::Mph => SpeedUnits::Mph,
            Units::Kph => SpeedUnits::Kph,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Admm,
    Dp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecArg {
    Seq,
    Par,
}

impl From<ExecArg> for Execution {
    fn from(e: ExecArg) -> Self {
        match e {
            ExecArg::Seq => Execution::Sequential,
            ExecArg::Par => Execution::Parallel,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Theta,
    Mu,
}

/// Where the cycle and vehicle come from.
#[derive(Clone, Debug, Args, Serialize)]
pub struct InputArgs {
    /// `t,v[,theta]` CSV at 1 Hz; defaults to the bundled FTP-75 trace.
    #[arg(long)]
    pub cycle: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mps")]
    pub units: Units,
    #[arg(long, default_value_t = MIN_CYCLE_SAMPLES)]
    pub min_samples: usize,
    /// JSON powertrain description; defaults to the built-in vehicle.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "par")]
    pub execution: ExecArg,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct AdmmArgs {
    #[arg(long, default_value_t = hevmpc::admm::RHO1_DEFAULT)]
    pub rho1: f64,
    #[arg(long, default_value_t = hevmpc::admm::RHO2_DEFAULT)]
    pub rho2: f64,
    #[arg(long, default_value_t = 5000)]
    pub max_iter: usize,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct SolveArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Gradient magnitude, degrees.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub theta_s: f64,
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    #[arg(long, value_enum, default_value = "admm")]
    pub solver: SolverKind,
    #[arg(long, default_value_t = 1e5)]
    pub epsilon: f64,
    #[command(flatten)]
    pub admm: AdmmArgs,
    #[arg(long, default_value_t = 120)]
    pub ne: usize,
    #[arg(long, default_value_t = 10)]
    pub np_ratio: usize,
    /// Also write the residual trace (`admm_trace.csv`).
    #[arg(long)]
    pub trace: bool,
    /// Also write the DP cost-to-go mesh (`dp_mesh.csv`).
    #[arg(long)]
    pub mesh: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct ReferenceArgs {
    /// Solution JSON to use as the optimum instead of solving DP with `--ref-ne` nodes.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub ref_ne: usize,
    /// Cache for computed reference optima; defaults to `<out>/cache`.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct TuneArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub reference: ReferenceArgs,
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    pub theta_s: f64,
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub rho1_min: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub rho1_max: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub rho2_min: f64,
    #[arg(long, default_value_t = 1e-7)]
    pub rho2_max: f64,
    #[arg(long, default_value_t = 25)]
    pub rho1_points: usize,
    #[arg(long, default_value_t = 25)]
    pub rho2_points: usize,
    #[arg(long, default_value_t = 300)]
    pub iterations: usize,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub reference: ReferenceArgs,
    #[arg(long, value_enum, default_value = "theta")]
    pub axis: Axis,
    /// Gradient magnitudes in degrees (theta axis).
    #[arg(long, value_delimiter = ',', default_values_t = [-2.0, -1.0, 0.0, 1.0, 2.0], allow_negative_numbers = true)]
    pub theta_s: Vec<f64>,
    /// Horizon fractions (mu axis).
    #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.5, 0.75, 1.0])]
    pub mu: Vec<f64>,
    /// Gradient used on the mu axis, degrees.
    #[arg(long, default_value_t = -2.0, allow_negative_numbers = true)]
    pub mu_theta_s: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [1e5, 3e5, 1e6])]
    pub epsilon: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [30, 60, 120])]
    pub ne: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["admm", "dp"])]
    pub solvers: Vec<SolverKind>,
    #[command(flatten)]
    pub admm: AdmmArgs,
    #[arg(long, default_value_t = 10)]
    pub np_ratio: usize,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    /// Shuffles the order in which cells run.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Runs cells one at a time so timings do not contend.
    #[arg(long)]
    pub timing_strict: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct TrajArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub reference: ReferenceArgs,
    #[arg(long, default_value_t = -2.0, allow_negative_numbers = true)]
    pub theta_s: f64,
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    #[arg(long, default_value_t = 1e5)]
    pub epsilon: f64,
    #[command(flatten)]
    pub admm: AdmmArgs,
    #[arg(long, default_value_t = 120)]
    pub ne: usize,
    #[arg(long, default_value_t = 10)]
    pub np_ratio: usize,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}
