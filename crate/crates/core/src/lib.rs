//! Fuel-optimal energy management for parallel plug-in hybrid vehicles.
//!
//! A drive cycle and a powertrain model produce a [`problem::ConvexProblem`] in battery-power
//! coordinates, which is solved either by the separable ADMM scheme in [`admm`] or by
//! dynamic programming over a stored-energy mesh in [`dp`].

// NaN-rejecting comparisons are written as negations on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admm;
pub mod drive_cycle;
pub mod dp;
pub mod par;
pub mod problem;
pub mod vehicle_model;

pub use admm::{AdmmError, AdmmParams, AdmmSolver};
pub use dp::{DpError, DpParams};
pub use drive_cycle::{make_scenario, CycleData, DriveScenario};
pub use par::Execution;
pub use problem::{ConvexProblem, Solution, SolverInfo};
pub use vehicle_model::PowertrainModel;
