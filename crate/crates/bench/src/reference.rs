//! Reference optima (fine-mesh DP) cached on disk under a content hash.

use std::path::{Path, PathBuf};

use hevmpc::drive_cycle::CycleData;
use hevmpc::{dp, ConvexProblem, DpParams, PowertrainModel, Solution};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult};

/// The parts of a solution needed to score other runs against it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceOptimum {
    pub p_f: Vec<f64>,
    pub e_traj: Vec<f64>,
    pub fuel_cost: f64,
}

impl From<&Solution> for ReferenceOptimum {
    fn from(s: &Solution) -> Self {
        Self { p_f: s.p_f.clone(), e_traj: s.e_traj.clone(), fuel_cost: s.fuel_cost }
    }
}

impl ReferenceOptimum {
    /// L1 distance of `p_f` from the reference fuel-power vector.
    pub fn metric(&self, p_f: &[f64]) -> CliResult<f64> {
        hevmpc::problem::fuel_metric(&self.p_f, p_f).map_err(|e| {
            CliError::Usage(format!("reference does not match this scenario ({e}); check --reference"))
        })
    }

    /// Reads a reference or any solution JSON written by `solve`.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Usage(format!(
                "cannot read reference {}: {e}. Produce one with `hevmpc solve --solver dp --ne 1000 --out <dir>` \
                 and pass <dir>/solution.json, or omit --reference to compute it",
                path.display()
            ))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{} is not a solution file: {e}", path.display())))
    }
}

/// Hash of everything that determines the reference solution.
pub fn cache_key(cycle: &CycleData, model: &PowertrainModel, theta_s_deg: f64, mu: f64, params: &DpParams) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        cycle: &'a CycleData,
        model: &'a PowertrainModel,
        theta_s_bits: u64,
        mu_bits: u64,
        n_e: usize,
        np_ratio: usize,
        version: &'a str,
    }
    let key = Key {
        cycle,
        model,
        theta_s_bits: theta_s_deg.to_bits(),
        mu_bits: mu.to_bits(),
        n_e: params.n_e,
        np_ratio: params.np_ratio,
        version: env!("CARGO_PKG_VERSION"),
    };
    let bytes = serde_json::to_vec(&key).expect("key serialises");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Looks up or computes the reference optimum for one scenario.
pub struct ReferenceStore {
    pub dir: PathBuf,
    pub params: DpParams,
}

impl ReferenceStore {
    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("ref-{key}.json"))
    }

    pub fn get(
        &self,
        prob: &ConvexProblem,
        cycle: &CycleData,
        model: &PowertrainModel,
        theta_s_deg: f64,
        mu: f64,
    ) -> CliResult<ReferenceOptimum> {
        let path = self.path_for(&cache_key(cycle, model, theta_s_deg, mu, &self.params));
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Ok(r) = serde_json::from_str::<ReferenceOptimum>(&text) {
                if r.p_f.len() == prob.len() {
                    return Ok(r);
                }
            }
        }
        let sol = dp::solve(prob, &self.params)?;
        if !sol.converged() {
            return Err(CliError::Infeasible(format!("reference DP with N_E = {} found no feasible rollout", self.params.n_e)));
        }
        let r = ReferenceOptimum::from(&sol);
        crate::ensure_dir(&self.dir)?;
        crate::write_json(&path, &r)?;
        Ok(r)
    }
}
