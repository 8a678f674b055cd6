//! Drive-cycle ingestion and scenario generation.
//!
//! A [`CycleData`] is a 1 Hz speed (and optional gradient) trace. A [`DriveScenario`]
//! is the predicted horizon handed to the optimiser: the tail `mu` fraction of the cycle
//! with a step gradient profile of magnitude `theta_s` (uphill for the first half of the
//! full cycle, downhill after), plus the derived demand power, step classes and speeds.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vehicle_model::{classify_step, demand_power, ModelError, PowertrainModel, StepClass};

pub const MPH_TO_MPS: f64 = 0.44704;
pub const KPH_TO_MPS: f64 = 1.0 / 3.6;
/// Default minimum number of samples accepted by [`load_cycle`].
pub const MIN_CYCLE_SAMPLES: usize = 10;

const FTP75_CSV: &str = include_str!("../data/ftp75.csv");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CycleError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("cycle file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("cycle file line {line}: duplicate timestamp {t}")]
    DuplicateTimestamp { line: usize, t: f64 },
    #[error("cycle file line {line}: timestamp {t} breaks the uniform 1 s spacing")]
    NonUniform { line: usize, t: f64 },
    #[error("cycle file line {line}: negative speed {v}")]
    NegativeSpeed { line: usize, v: f64 },
    #[error("cycle has {len} samples, at least {min} required")]
    TooShort { len: usize, min: usize },
    #[error("mu must lie in (0, 1], got {0}")]
    InvalidMu(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeedUnits {
    #[default]
    Mps,
    Mph,
    Kph,
}

impl SpeedUnits {
    pub fn to_mps(self) -> f64 {
        match self {
            SpeedUnits::Mps => 1.0,
            SpeedUnits::Mph => MPH_TO_MPS,
            SpeedUnits::Kph => KPH_TO_MPS,
        }
    }
}

/// Uniform 1 Hz speed/gradient trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleData {
    /// s
    pub t: Vec<f64>,
    /// m/s
    pub v: Vec<f64>,
    /// rad
    pub theta: Vec<f64>,
}

impl CycleData {
    /// Builds a cycle from speeds sampled at 1 Hz starting at t = 0, zero gradient.
    pub fn from_speeds(v: Vec<f64>) -> Self {
        let t = (0..v.len()).map(|i| i as f64).collect();
        let theta = vec![0.0; v.len()];
        Self { t, v, theta }
    }

    /// The bundled FTP-75 trace (UDDS followed by the hot-start repeat of its first 505 s).
    pub fn ftp75() -> Self {
        read_cycle(FTP75_CSV.as_bytes(), SpeedUnits::Mps, MIN_CYCLE_SAMPLES).expect("bundled FTP-75 trace parses")
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadOptions {
    pub units: SpeedUnits,
    pub min_samples: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { units: SpeedUnits::Mps, min_samples: MIN_CYCLE_SAMPLES }
    }
}

/// Reads a `t,v[,theta]` CSV file.
pub fn load_cycle(path: impl AsRef<Path>, opts: LoadOptions) -> Result<CycleData, CycleError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| CycleError::Io(format!("{}: {e}", path.display())))?;
    read_cycle(file, opts.units, opts.min_samples)
}

pub fn read_cycle<R: Read>(reader: R, units: SpeedUnits, min_samples: usize) -> Result<CycleData, CycleError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| CycleError::Parse { line: 1, msg: e.to_string() })?.clone();
    let cols: Vec<&str> = header.iter().collect();
    let has_theta = match cols.as_slice() {
        ["t", "v"] => false,
        ["t", "v", "theta"] => true,
        _ => {
            return Err(CycleError::Parse { line: 1, msg: format!("expected header `t,v[,theta]`, found `{}`", cols.join(",")) })
        }
    };
    let scale = units.to_mps();
    let mut cycle = CycleData { t: Vec::new(), v: Vec::new(), theta: Vec::new() };
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| CycleError::Parse { line, msg: e.to_string() })?;
        if rec.len() != cols.len() {
            return Err(CycleError::Parse { line, msg: format!("expected {} fields, found {}", cols.len(), rec.len()) });
        }
        let field = |j: usize| -> Result<f64, CycleError> {
            rec[j].parse::<f64>().map_err(|e| CycleError::Parse { line, msg: format!("`{}`: {e}", &rec[j]) })
        };
        let t = field(0)?;
        let v = field(1)?;
        let theta = if has_theta { field(2)? } else { 0.0 };
        if !(v >= 0.0) {
            return Err(CycleError::NegativeSpeed { line, v });
        }
        if let Some(&prev) = cycle.t.last() {
            if t == prev {
                return Err(CycleError::DuplicateTimestamp { line, t });
            }
            if ((t - prev) - 1.0).abs() > 1e-9 {
                return Err(CycleError::NonUniform { line, t });
            }
        }
        cycle.t.push(t);
        cycle.v.push(v * scale);
        cycle.theta.push(theta);
    }
    if cycle.len() < min_samples.max(2) {
        return Err(CycleError::TooShort { len: cycle.len(), min: min_samples.max(2) });
    }
    Ok(cycle)
}

/// First derivative of a 1 Hz series: central differences inside, one-sided at the ends.
pub fn central_difference(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n)
            .map(|k| {
                if k == 0 {
                    v[1] - v[0]
                } else if k == n - 1 {
                    v[n - 1] - v[n - 2]
                } else {
                    (v[k + 1] - v[k - 1]) / 2.0
                }
            })
            .collect(),
    }
}

/// Predicted horizon with derived demand power and step classification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveScenario {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    pub vdot: Vec<f64>,
    pub p_drv: Vec<f64>,
    pub class: Vec<StepClass>,
    /// Powertrain speed from the shifting heuristic, rad/s.
    pub omega: Vec<f64>,
    pub omega_em: Vec<f64>,
    pub omega_eng: Vec<f64>,
    /// Initial stored energy, J.
    pub e0: f64,
    pub theta_s: f64,
    pub mu: f64,
    /// Index of the first cycle sample in the horizon.
    pub start: usize,
}

impl DriveScenario {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Derives demand power, classes and speeds for an explicit horizon.
    pub fn from_profile(
        v: Vec<f64>,
        theta: Vec<f64>,
        e0: f64,
        model: &PowertrainModel,
    ) -> Result<Self, CycleError> {
        assert_eq!(v.len(), theta.len(), "speed and gradient horizons differ in length");
        let vdot = central_difference(&v);
        let p_drv: Vec<f64> =
            (0..v.len()).map(|k| demand_power(v[k], vdot[k], theta[k], &model.vehicle)).collect();
        let omega = v
            .iter()
            .enumerate()
            .map(|(k, &vk)| model.gears.powertrain_speed(k, vk))
            .collect::<Result<Vec<_>, _>>()?;
        let class: Vec<StepClass> =
            p_drv.iter().zip(&omega).map(|(&p, &w)| classify_step(p, w, &model.limits)).collect();
        let omega_eng = class
            .iter()
            .zip(&omega)
            .map(|(c, &w)| if *c == StepClass::Hybrid { w } else { model.limits.omega_eng_min })
            .collect();
        Ok(Self {
            omega_em: omega.clone(),
            v,
            theta,
            vdot,
            p_drv,
            class,
            omega,
            omega_eng,
            e0,
            theta_s: 0.0,
            mu: 1.0,
            start: 0,
        })
    }
}

/// Index of the first horizon sample, `(1 - mu) T` rounded half away from zero.
pub fn horizon_start(t_last: usize, mu: f64) -> usize {
    ((1.0 - mu) * t_last as f64).round() as usize
}

/// Gradient at sample `t` of a cycle whose last index is `t_last`.
pub fn step_gradient(t: usize, t_last: usize, theta_s: f64) -> f64 {
    if 2 * t <= t_last {
        theta_s
    } else {
        -theta_s
    }
}

/// Builds the predicted horizon for gradient magnitude `theta_s` (rad) and tail fraction `mu`.
///
/// The step gradient profile is added to any gradient column carried by the cycle.
/// The initial state of charge is `(50 + 10 mu) %` of capacity.
pub fn make_scenario(cycle: &CycleData, theta_s: f64, mu: f64, model: &PowertrainModel) -> Result<DriveScenario, CycleError> {
    if !(mu > 0.0 && mu <= 1.0) {
        return Err(CycleError::InvalidMu(mu));
    }
    if cycle.len() < 2 {
        return Err(CycleError::TooShort { len: cycle.len(), min: 2 });
    }
    let t_last = cycle.len() - 1;
    let start = horizon_start(t_last, mu);
    let v = cycle.v[start..].to_vec();
    let theta = (start..=t_last).map(|t| cycle.theta[t] + step_gradient(t, t_last, theta_s)).collect();
    let e0 = model.battery.energy_at((50.0 + 10.0 * mu) / 100.0);
    let mut sc = DriveScenario::from_profile(v, theta, e0, model).map_err(|e| match e {
        CycleError::Model(m) => match m {
            ModelError::SpeedOutOfRange { index, speed } => {
                CycleError::Model(ModelError::SpeedOutOfRange { index: index + start, speed })
            }
            other => CycleError::Model(other),
        },
        other => other,
    })?;
    sc.theta_s = theta_s;
    sc.mu = mu;
    sc.start = start;
    Ok(sc)
}
