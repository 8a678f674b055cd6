//! Physical model of the parallel plug-in hybrid powertrain.
//!
//! Covers the longitudinal demand-power model, the speed-banded shifting heuristic,
//! step classification, speed-interpolated engine/motor loss maps, the battery map `g`
//! and its inverse, and the per-step power limits after restricting each loss map to its
//! non-decreasing branch.

mod battery;
mod loss_map;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use battery::{
    battery_power, battery_power_inverse, chemical_power, inverse_eval, largest_motor_root, BatteryInverse,
    BatteryParams, InverseEval,
};
pub use loss_map::{LossMapTable, Quadratic};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid loss map: {0}")]
    InvalidLossMap(String),
    #[error("coefficient file line {line}: {msg}")]
    CoeffParse { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("sample {index}: speed {speed} m/s is outside the gear schedule")]
    SpeedOutOfRange { index: usize, speed: f64 },
    #[error("step {step:?}: battery radicand negative at motor power {p_em} W (largest feasible motor power {root:?} W)")]
    BatteryRadicand { step: Option<usize>, p_em: f64, root: Option<f64> },
    #[error("step {step:?}: battery power {p_b} W outside the invertible range [{lo}, {hi}] W")]
    InverseDomain { step: Option<usize>, p_b: f64, lo: f64, hi: f64 },
    #[error("step {step}: infeasible battery power bounds [{p_b_lo}, {p_b_hi}] W")]
    InfeasibleBounds { step: usize, p_b_lo: f64, p_b_hi: f64 },
}

impl ModelError {
    /// Attaches a horizon step index to step-level errors.
    pub fn at_step(self, k: usize) -> Self {
        match self {
            ModelError::BatteryRadicand { p_em, root, .. } => ModelError::BatteryRadicand { step: Some(k), p_em, root },
            ModelError::InverseDomain { p_b, lo, hi, .. } => ModelError::InverseDomain { step: Some(k), p_b, lo, hi },
            ModelError::SpeedOutOfRange { speed, .. } => ModelError::SpeedOutOfRange { index: k, speed },
            other => other,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    /// kg
    pub mass: f64,
    /// kg/m^3
    pub air_density: f64,
    pub drag_coeff: f64,
    /// m^2
    pub frontal_area: f64,
    pub rolling_coeff: f64,
    /// m/s^2
    pub gravity: f64,
    /// Fraction of braking power recovered through the motor.
    pub regen_fraction: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 1800.0,
            air_density: 1.225,
            drag_coeff: 0.30,
            frontal_area: 2.3,
            rolling_coeff: 0.01,
            gravity: 9.81,
            regen_fraction: 0.4,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [self.mass, self.air_density, self.drag_coeff, self.frontal_area, self.rolling_coeff, self.gravity];
        if positive.iter().all(|&x| x > 0.0 && x.is_finite()) && (0.0..=1.0).contains(&self.regen_fraction) {
            Ok(())
        } else {
            Err(ModelError::InvalidParams(format!("vehicle parameters out of range: {self:?}")))
        }
    }
}

/// The four force terms of the longitudinal model, each multiplied by speed (W):
/// inertial, aerodynamic, rolling, grade.
pub fn demand_power_terms(v: f64, vdot: f64, theta: f64, p: &VehicleParams) -> [f64; 4] {
    [
        p.mass * vdot * v,
        0.5 * p.air_density * v * v * p.drag_coeff * p.frontal_area * v,
        p.rolling_coeff * p.mass * p.gravity * theta.cos() * v,
        p.mass * p.gravity * theta.sin() * v,
    ]
}

/// Wheel power needed to follow speed `v` with acceleration `vdot` on gradient `theta` (rad).
pub fn demand_power(v: f64, vdot: f64, theta: f64, p: &VehicleParams) -> f64 {
    let aero = 0.5 * p.air_density * v * v * p.drag_coeff * p.frontal_area;
    (p.mass * vdot + aero + p.rolling_coeff * p.mass * p.gravity * theta.cos() + p.mass * p.gravity * theta.sin()) * v
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GearBand {
    /// m/s
    pub v_lo: f64,
    /// m/s
    pub v_hi: f64,
    /// rad/m
    pub ratio: f64,
}

/// Speed-banded shifting: the powertrain speed is `ratio * v` for the band containing `v`.
/// A speed on the boundary of two bands uses the lower band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GearSchedule {
    pub bands: Vec<GearBand>,
}

impl Default for GearSchedule {
    fn default() -> Self {
        let bands = [(0.0, 4.0, 40.0), (4.0, 8.0, 24.0), (8.0, 14.0, 16.0), (14.0, 22.0, 11.5), (22.0, 40.0, 8.5)]
            .into_iter()
            .map(|(v_lo, v_hi, ratio)| GearBand { v_lo, v_hi, ratio })
            .collect();
        Self { bands }
    }
}

impl GearSchedule {
    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::InvalidParams(m));
        let Some(first) = self.bands.first() else {
            return err("empty gear schedule".into());
        };
        if first.v_lo != 0.0 {
            return err("gear schedule must start at 0 m/s".into());
        }
        for (i, b) in self.bands.iter().enumerate() {
            if !(b.ratio > 0.0) || !(b.v_hi > b.v_lo) {
                return err(format!("gear band {i} is degenerate: {b:?}"));
            }
        }
        if let Some(i) = self.bands.windows(2).position(|w| w[0].v_hi != w[1].v_lo) {
            return err(format!("gear bands {i} and {} are not contiguous", i + 1));
        }
        Ok(())
    }

    pub fn v_max(&self) -> f64 {
        self.bands.last().map_or(0.0, |b| b.v_hi)
    }

    /// Powertrain speed for sample `index` travelling at `v` m/s.
    pub fn powertrain_speed(&self, index: usize, v: f64) -> Result<f64, ModelError> {
        self.bands
            .iter()
            .find(|b| b.v_lo <= v && v <= b.v_hi)
            .map(|b| b.ratio * v)
            .ok_or(ModelError::SpeedOutOfRange { index, speed: v })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorqueLimits {
    /// Nm
    pub engine_lo: f64,
    pub engine_hi: f64,
    pub motor_lo: f64,
    pub motor_hi: f64,
    /// rad/s
    pub omega_eng_min: f64,
    pub omega_eng_max: f64,
}

impl Default for TorqueLimits {
    fn default() -> Self {
        Self { engine_lo: 0.0, engine_hi: 250.0, motor_lo: -150.0, motor_hi: 150.0, omega_eng_min: 100.0, omega_eng_max: 600.0 }
    }
}

impl TorqueLimits {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.engine_lo < self.engine_hi
            && self.motor_lo < self.motor_hi
            && self.omega_eng_min > 0.0
            && self.omega_eng_min < self.omega_eng_max
        {
            Ok(())
        } else {
            Err(ModelError::InvalidParams(format!("torque limits out of range: {self:?}")))
        }
    }
}

/// Timestep class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StepClass {
    /// Positive demand with the engine above idle speed: the engine/motor split is free.
    #[serde(rename = "P")]
    Hybrid,
    /// Positive demand below minimum engine speed: electric drive only.
    #[serde(rename = "C")]
    Electric,
    /// Non-positive demand: clutch open, fixed regeneration fraction.
    #[serde(rename = "B")]
    Braking,
}

impl StepClass {
    pub fn symbol(self) -> char {
        match self {
            StepClass::Hybrid => 'P',
            StepClass::Electric => 'C',
            StepClass::Braking => 'B',
        }
    }
}

pub fn classify_step(p_drv: f64, omega: f64, limits: &TorqueLimits) -> StepClass {
    if p_drv <= 0.0 {
        StepClass::Braking
    } else if omega >= limits.omega_eng_min {
        StepClass::Hybrid
    } else {
        StepClass::Electric
    }
}

/// Engine (`f_k`) and motor (`h_k`) quadratics at one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepQuadratics {
    pub engine: Quadratic,
    pub motor: Quadratic,
}

pub fn fuel_power(p_eng: f64, q: &StepQuadratics) -> f64 {
    q.engine.eval(p_eng)
}

pub fn electrical_power(p_em: f64, q: &StepQuadratics) -> f64 {
    q.motor.eval(p_em)
}

/// Full powertrain description consumed by scenario and problem construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowertrainModel {
    pub vehicle: VehicleParams,
    pub gears: GearSchedule,
    pub limits: TorqueLimits,
    pub battery: BatteryParams,
    pub engine_map: LossMapTable,
    pub motor_map: LossMapTable,
    /// Count idle fuel `f_k(P_eng_lo)` on steps where the engine is declutched.
    #[serde(default = "yes")]
    pub idle_fuel: bool,
}

fn yes() -> bool {
    true
}

impl Default for PowertrainModel {
    fn default() -> Self {
        Self {
            vehicle: VehicleParams::default(),
            gears: GearSchedule::default(),
            limits: TorqueLimits::default(),
            battery: BatteryParams::default(),
            engine_map: LossMapTable::default_engine(),
            motor_map: LossMapTable::default_motor(),
            idle_fuel: true,
        }
    }
}

impl PowertrainModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.vehicle.validate()?;
        self.gears.validate()?;
        self.limits.validate()?;
        self.battery.validate()?;
        // re-run table invariants in case the model was deserialized
        LossMapTable::new(self.engine_map.speeds().to_vec(), self.engine_map.coeffs().to_vec())?;
        LossMapTable::new(self.motor_map.speeds().to_vec(), self.motor_map.coeffs().to_vec())?;
        Ok(())
    }

    /// Loads a JSON model description.
    pub fn from_json_path(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
        let model: Self = serde_json::from_str(&text).map_err(|e| ModelError::InvalidParams(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    /// Interpolated loss-map quadratics for a step with the given engine and motor speeds.
    pub fn step_quadratics(&self, omega_eng: f64, omega_em: f64) -> StepQuadratics {
        let lo = self.limits.omega_eng_min;
        let hi = self.limits.omega_eng_max;
        StepQuadratics {
            engine: self.engine_map.interp(omega_eng.clamp(lo, hi)),
            motor: self.motor_map.interp(omega_em.clamp(lo, hi)),
        }
    }
}

/// Per-step power limits after domain restriction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepBounds {
    pub class: StepClass,
    /// Unrestricted engine power limits (both equal the declutched engine output off `P`).
    pub p_eng_lo: f64,
    pub p_eng_hi: f64,
    /// Engine lower limit raised to the engine map's vertex.
    pub p_eng_lo_plus: f64,
    /// Motor lower limit raised to the motor map's vertex.
    pub p_em_lo_plus: f64,
    pub p_b_lo: f64,
    pub p_b_hi: f64,
    /// Largest motor power the battery can sustain.
    pub motor_root: Option<f64>,
}

/// Engine output on steps where the clutch is open.
pub const DECLUTCHED_ENGINE_POWER: f64 = 0.0;

/// Power limits for step `k` with demand `p_drv` at powertrain speed `omega`.
pub fn restricted_bounds(
    k: usize,
    class: StepClass,
    p_drv: f64,
    omega: f64,
    q: &StepQuadratics,
    model: &PowertrainModel,
) -> Result<StepBounds, ModelError> {
    let batt = &model.battery;
    let root = largest_motor_root(&q.motor, batt);
    let g = |p_em: f64| battery_power(p_em, &q.motor, batt).map_err(|e| e.at_step(k));
    let fixed = |p_b: f64| StepBounds {
        class,
        p_eng_lo: DECLUTCHED_ENGINE_POWER,
        p_eng_hi: DECLUTCHED_ENGINE_POWER,
        p_eng_lo_plus: DECLUTCHED_ENGINE_POWER,
        p_em_lo_plus: p_drv,
        p_b_lo: p_b,
        p_b_hi: p_b,
        motor_root: root,
    };
    match class {
        StepClass::Electric => Ok(fixed(g(p_drv)?)),
        StepClass::Braking => {
            let p_em = model.vehicle.regen_fraction * p_drv;
            let mut b = fixed(g(p_em)?);
            b.p_em_lo_plus = p_em;
            Ok(b)
        }
        StepClass::Hybrid => {
            let lim = &model.limits;
            let root = root.ok_or(ModelError::BatteryRadicand { step: Some(k), p_em: p_drv, root: None })?;
            let p_eng_lo = (lim.engine_lo * omega).max(p_drv - (lim.motor_hi * omega).min(root));
            let p_eng_hi = (lim.engine_hi * omega).min(p_drv - lim.motor_lo * omega);
            let p_eng_lo_plus = p_eng_lo.max(q.engine.vertex());
            let p_em_lo_plus = (p_drv - p_eng_hi).max(q.motor.vertex());
            let p_em_hi = p_drv - p_eng_lo_plus;
            if p_em_hi < p_em_lo_plus {
                return Err(ModelError::InfeasibleBounds {
                    step: k,
                    p_b_lo: g(p_em_lo_plus).unwrap_or(f64::NAN),
                    p_b_hi: g(p_em_hi).unwrap_or(f64::NAN),
                });
            }
            let p_b_lo = g(p_em_lo_plus)?;
            let p_b_hi = g(p_em_hi)?;
            if p_b_lo > p_b_hi {
                return Err(ModelError::InfeasibleBounds { step: k, p_b_lo, p_b_hi });
            }
            Ok(StepBounds {
                class,
                p_eng_lo,
                p_eng_hi,
                p_eng_lo_plus,
                p_em_lo_plus,
                p_b_lo,
                p_b_hi,
                motor_root: Some(root),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demand_power_at_rest_is_zero() {
        let p = VehicleParams::default();
        for (vdot, th) in [(0.0, 0.0), (1.5, 0.03), (-2.0, -0.1)] {
            assert_eq!(demand_power(0.0, vdot, th, &p), 0.0);
        }
    }

    #[test]
    fn demand_power_cruise_matches_hand_evaluation() {
        // v = 20, flat, steady: aero 0.5*1.225*400*0.30*2.3 = 169.05 N, rolling 0.01*1800*9.81 = 176.58 N
        let expected = (169.05 + 176.58) * 20.0;
        let got = demand_power(20.0, 0.0, 0.0, &VehicleParams::default());
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
        assert!((got - 6912.6).abs() < 1e-9);
    }

    #[test]
    fn gradient_sign_flip() {
        let p = VehicleParams::default();
        let phi = 0.035;
        let up = demand_power(10.0, 0.0, phi, &p);
        let down = demand_power(10.0, 0.0, -phi, &p);
        let expected = 2.0 * p.mass * p.gravity * phi.sin() * 10.0;
        assert!((up - down - expected).abs() < 1e-9 * expected);
        let tu = demand_power_terms(10.0, 0.3, phi, &p);
        let td = demand_power_terms(10.0, 0.3, -phi, &p);
        assert_eq!(tu[0], td[0]);
        assert_eq!(tu[1], td[1]);
        assert_eq!(tu[2], td[2]);
        assert_eq!(tu[3], -td[3]);
        assert!((tu.iter().sum::<f64>() - demand_power(10.0, 0.3, phi, &p)).abs() < 1e-9);
    }

    #[test]
    fn gear_schedule_bands_and_ties() {
        let g = GearSchedule::default();
        g.validate().unwrap();
        assert_eq!(g.powertrain_speed(0, 0.0).unwrap(), 0.0);
        assert_eq!(g.powertrain_speed(0, 6.0).unwrap(), 24.0 * 6.0);
        // boundary of bands 1 and 2 resolves to band 1
        assert_eq!(g.powertrain_speed(0, 4.0).unwrap(), 40.0 * 4.0);
        assert_eq!(g.powertrain_speed(0, 22.0).unwrap(), 11.5 * 22.0);
        assert_eq!(
            g.powertrain_speed(17, 41.0),
            Err(ModelError::SpeedOutOfRange { index: 17, speed: 41.0 })
        );
    }

    #[test]
    fn gear_schedule_rejects_gaps() {
        let mut g = GearSchedule::default();
        g.bands[2].v_lo = 8.5;
        assert!(g.validate().is_err());
    }

    #[test]
    fn classification_rules() {
        let l = TorqueLimits::default();
        assert_eq!(classify_step(0.0, 300.0, &l), StepClass::Braking);
        assert_eq!(classify_step(-5.0, 300.0, &l), StepClass::Braking);
        assert_eq!(classify_step(1.0, l.omega_eng_min, &l), StepClass::Hybrid);
        assert_eq!(classify_step(1.0, 0.0, &l), StepClass::Electric);
    }

    #[test]
    fn fuel_power_evaluates_quadratic() {
        let q = StepQuadratics { engine: Quadratic::new(2e-5, 2.4, 3000.0), motor: Quadratic::new(5e-6, 1.02, 400.0) };
        assert_eq!(fuel_power(0.0, &q), 3000.0);
        assert_eq!(electrical_power(0.0, &q), 400.0);
        let p: f64 = 12_345.0;
        let oracle = 2e-5 * p.powi(2) + 2.4 * p + 3000.0;
        assert!((fuel_power(p, &q) - oracle).abs() < 1e-9 * oracle);
        let v = q.engine.vertex();
        assert!(fuel_power(v, &q) <= fuel_power(v + 1.0, &q));
        assert!(fuel_power(v, &q) <= fuel_power(v - 1.0, &q));
    }

    fn hybrid_step(p_drv: f64, omega: f64) -> (StepQuadratics, StepBounds, PowertrainModel) {
        let model = PowertrainModel::default();
        let q = model.step_quadratics(omega, omega);
        let b = restricted_bounds(3, StepClass::Hybrid, p_drv, omega, &q, &model).unwrap();
        (q, b, model)
    }

    #[test]
    fn hybrid_bounds_follow_limit_formulas() {
        let (q, b, model) = hybrid_step(20_000.0, 200.0);
        let l = model.limits;
        let root = largest_motor_root(&q.motor, &model.battery).unwrap();
        let lo = (l.engine_lo * 200.0).max(20_000.0 - (l.motor_hi * 200.0).min(root));
        let hi = (l.engine_hi * 200.0).min(20_000.0 - l.motor_lo * 200.0);
        assert_eq!(b.p_eng_lo, lo);
        assert_eq!(b.p_eng_hi, hi);
        assert_eq!(b.p_eng_lo_plus, lo.max(q.engine.vertex()));
        assert_eq!(b.p_em_lo_plus, (20_000.0 - hi).max(q.motor.vertex()));
        let g = |p| battery_power(p, &q.motor, &model.battery).unwrap();
        assert_eq!(b.p_b_lo, g(b.p_em_lo_plus));
        assert_eq!(b.p_b_hi, g(20_000.0 - b.p_eng_lo_plus));
        assert!(b.p_b_lo < b.p_b_hi);
    }

    #[test]
    fn motor_vertex_dominates_when_above_torque_limit() {
        let mut model = PowertrainModel::default();
        model.limits.motor_lo = -5000.0;
        model.limits.engine_hi = 5000.0;
        let omega = 150.0;
        let q = model.step_quadratics(omega, omega);
        let b = restricted_bounds(0, StepClass::Hybrid, 10_000.0, omega, &q, &model).unwrap();
        assert!(q.motor.vertex() > 10_000.0 - b.p_eng_hi);
        assert_eq!(b.p_em_lo_plus, q.motor.vertex());
    }

    #[test]
    fn braking_and_electric_steps_have_equality_bounds() {
        let model = PowertrainModel::default();
        let q = model.step_quadratics(model.limits.omega_eng_min, 50.0);
        let b = restricted_bounds(1, StepClass::Braking, -8000.0, 50.0, &q, &model).unwrap();
        let expected = battery_power(0.4 * -8000.0, &q.motor, &model.battery).unwrap();
        assert_eq!((b.p_b_lo, b.p_b_hi), (expected, expected));
        assert!(expected < 0.0);
        let c = restricted_bounds(2, StepClass::Electric, 3000.0, 50.0, &q, &model).unwrap();
        let expected = battery_power(3000.0, &q.motor, &model.battery).unwrap();
        assert_eq!((c.p_b_lo, c.p_b_hi), (expected, expected));
    }

    #[test]
    fn excessive_demand_is_reported_not_clamped() {
        let model = PowertrainModel::default();
        let omega = 150.0;
        let q = model.step_quadratics(omega, omega);
        let err = restricted_bounds(9, StepClass::Hybrid, 1.0e6, omega, &q, &model).unwrap_err();
        assert!(matches!(err, ModelError::InfeasibleBounds { step: 9, .. }), "{err:?}");
    }

    #[test]
    fn default_model_validates_and_round_trips_json() {
        let m = PowertrainModel::default();
        m.validate().unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let back: PowertrainModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }
}
