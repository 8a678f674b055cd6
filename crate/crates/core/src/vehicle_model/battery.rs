//! Battery map `g` (motor mechanical power to chemical power) and its inverse on the
//! restricted, monotone part of its domain.

use serde::{Deserialize, Serialize};

use super::{ModelError, Quadratic};

/// Constant open-circuit voltage / internal resistance battery.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatteryParams {
    /// Open-circuit voltage, V.
    pub open_circuit_voltage: f64,
    /// Internal resistance, Ohm.
    pub resistance: f64,
    /// Charge capacity, Ah.
    pub capacity_ah: f64,
    /// Lower state-of-charge limit as a fraction of capacity.
    pub soc_lo: f64,
    /// Upper state-of-charge limit as a fraction of capacity.
    pub soc_hi: f64,
}

impl Default for BatteryParams {
    fn default() -> Self {
        Self { open_circuit_voltage: 350.0, resistance: 0.1, capacity_ah: 21.5, soc_lo: 0.50, soc_hi: 0.62 }
    }
}

impl BatteryParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = self.open_circuit_voltage > 0.0
            && self.resistance > 0.0
            && self.capacity_ah > 0.0
            && self.soc_lo >= 0.0
            && self.soc_lo < self.soc_hi
            && self.soc_hi <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidParams(format!("battery parameters out of range: {self:?}")))
        }
    }

    /// Full-scale stored energy, J.
    pub fn capacity_j(&self) -> f64 {
        self.open_circuit_voltage * self.capacity_ah * 3600.0
    }

    /// Energy at a state of charge given as a fraction of capacity.
    pub fn energy_at(&self, soc: f64) -> f64 {
        soc * self.capacity_j()
    }

    pub fn e_lo(&self) -> f64 {
        self.energy_at(self.soc_lo)
    }

    pub fn e_hi(&self) -> f64 {
        self.energy_at(self.soc_hi)
    }

    /// `V_oc^2 / 2R`, the largest chemical power the battery can deliver.
    pub fn max_chemical_power(&self) -> f64 {
        self.v2() / (2.0 * self.resistance)
    }

    /// `V_oc^2 / 4R`, the electrical power at which the radicand of `g` vanishes.
    pub fn max_electrical_power(&self) -> f64 {
        self.v2() / (4.0 * self.resistance)
    }

    #[inline]
    pub(crate) fn v2(&self) -> f64 {
        self.open_circuit_voltage * self.open_circuit_voltage
    }
}

/// Chemical power drawn when the terminals deliver electrical power `p_c`.
pub fn chemical_power(p_c: f64, batt: &BatteryParams) -> Option<f64> {
    let z = p_c / batt.max_electrical_power();
    let rad = 1.0 - z;
    if rad < 0.0 || !rad.is_finite() {
        return None;
    }
    // (V^2/2R)(1 - sqrt(1 - z)) without cancellation for small z
    Some(2.0 * p_c / (1.0 + rad.sqrt()))
}

/// Largest real root `r+` of `1 - (4R/V^2) h(P)`, i.e. the motor power at which the
/// battery reaches its maximum deliverable power.
pub fn largest_motor_root(motor: &Quadratic, batt: &BatteryParams) -> Option<f64> {
    let (a, b, c) = (motor.c2, motor.c1, motor.c0 - batt.max_electrical_power());
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 || a <= 0.0 {
        return None;
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let (r1, r2) = if q == 0.0 { (0.0, 0.0) } else { (q / a, c / q) };
    Some(r1.max(r2))
}

/// Battery chemical power `g(p_em)`.
pub fn battery_power(p_em: f64, motor: &Quadratic, batt: &BatteryParams) -> Result<f64, ModelError> {
    chemical_power(motor.eval(p_em), batt).ok_or_else(|| ModelError::BatteryRadicand {
        step: None,
        p_em,
        root: largest_motor_root(motor, batt),
    })
}

/// `g^-1` together with its first and second derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InverseEval {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Closed-form inverse of `g` on `[vertex(h), r+]`; defined for
/// `g(vertex) <= p_b <= V^2/2R`.
pub fn battery_power_inverse(p_b: f64, motor: &Quadratic, batt: &BatteryParams) -> Result<f64, ModelError> {
    inverse_eval(p_b, motor, batt).map(|e| e.value)
}

pub fn inverse_eval(p_b: f64, motor: &Quadratic, batt: &BatteryParams) -> Result<InverseEval, ModelError> {
    BatteryInverse::new(motor, batt).checked(p_b)
}

/// `g^-1` for one motor quadratic with the constant parts precomputed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatteryInverse {
    /// `beta1 / 2 beta2`
    shift: f64,
    beta2: f64,
    beta0: f64,
    /// `R / V^2`
    r_over_v2: f64,
    p_max: f64,
    p_min: f64,
}

impl BatteryInverse {
    pub fn new(motor: &Quadratic, batt: &BatteryParams) -> Self {
        Self {
            shift: motor.c1 / (2.0 * motor.c2),
            beta2: motor.c2,
            beta0: motor.c0,
            r_over_v2: batt.resistance / batt.v2(),
            p_max: batt.max_chemical_power(),
            p_min: chemical_power(motor.eval(motor.vertex()), batt).unwrap_or(f64::NAN),
        }
    }

    /// Invertible range `[g(vertex), V^2/2R]`.
    pub fn domain(&self) -> (f64, f64) {
        (self.p_min, self.p_max)
    }

    pub fn checked(&self, p_b: f64) -> Result<InverseEval, ModelError> {
        let q = self.radicand(p_b);
        let slack = 1e-12 * self.shift * self.shift;
        if !(p_b <= self.p_max * (1.0 + 1e-12)) || !(q >= -slack) || !q.is_finite() {
            return Err(ModelError::InverseDomain { step: None, p_b, lo: self.p_min, hi: self.p_max });
        }
        Ok(self.eval(p_b))
    }

    #[inline]
    fn radicand(&self, p_b: f64) -> f64 {
        self.shift * self.shift + self.offset(p_b)
    }

    /// `(h - beta0) / beta2` for the electrical power `h` that yields chemical power `p_b`.
    #[inline]
    fn offset(&self, p_b: f64) -> f64 {
        (p_b - self.beta0 - self.r_over_v2 * p_b * p_b) / self.beta2
    }

    /// Value and derivatives without domain checks; the radicand is floored at zero.
    #[inline]
    pub fn eval(&self, p_b: f64) -> InverseEval {
        let d = self.offset(p_b);
        let q = (self.shift * self.shift + d).max(0.0);
        let root = q.sqrt();
        let value = if self.shift > 0.0 { d / (self.shift + root) } else { root - self.shift };
        let dq = (1.0 - 2.0 * self.r_over_v2 * p_b) / self.beta2;
        let ddq = -2.0 * self.r_over_v2 / self.beta2;
        let d1 = dq / (2.0 * root);
        let d2 = ddq / (2.0 * root) - dq * dq / (4.0 * q * root);
        InverseEval { value, d1, d2 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn motor() -> Quadratic {
        Quadratic::new(6.9e-6, 1.02, 300.0)
    }

    #[test]
    fn zero_electrical_power_means_zero_chemical_power() {
        let b = BatteryParams::default();
        assert_eq!(chemical_power(0.0, &b), Some(0.0));
        // h(p) = 0 at the positive root of the motor quadratic
        let m = motor();
        let disc = (m.c1 * m.c1 - 4.0 * m.c2 * m.c0).sqrt();
        let p = (-m.c1 + disc) / (2.0 * m.c2);
        assert!(battery_power(p, &m, &b).unwrap().abs() < 1e-9);
    }

    #[test]
    fn root_matches_quadratic_formula() {
        let b = BatteryParams::default();
        let m = motor();
        let r = largest_motor_root(&m, &b).unwrap();
        let c = m.c0 - 350.0 * 350.0 / 0.4;
        let naive = (-m.c1 + (m.c1 * m.c1 - 4.0 * m.c2 * c).sqrt()) / (2.0 * m.c2);
        assert!((r - naive).abs() <= 1e-9 * naive.abs());
        let g = battery_power(r, &m, &b).unwrap();
        assert!((g - b.max_chemical_power()).abs() <= 1e-6 * b.max_chemical_power());
    }

    #[test]
    fn beyond_root_is_infeasible_and_reports_root() {
        let b = BatteryParams::default();
        let m = motor();
        let r = largest_motor_root(&m, &b).unwrap();
        match battery_power(r * 1.01, &m, &b) {
            Err(ModelError::BatteryRadicand { root: Some(rr), .. }) => assert_eq!(rr, r),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inverse_rejects_out_of_range() {
        let b = BatteryParams::default();
        let m = motor();
        assert!(battery_power_inverse(b.max_chemical_power() * 1.001, &m, &b).is_err());
        let lo = battery_power(m.vertex(), &m, &b).unwrap();
        assert!(battery_power_inverse(lo - 10.0, &m, &b).is_err());
        let at_lo = battery_power_inverse(lo, &m, &b).unwrap();
        assert!((at_lo - m.vertex()).abs() < 1e-3 * m.vertex().abs());
    }

    #[test]
    fn energy_conversion() {
        let b = BatteryParams::default();
        assert!((b.capacity_j() - 27.09e6).abs() < 1.0);
        assert!((b.e_lo() - 0.5 * 27.09e6).abs() < 1.0);
        assert!((b.e_hi() - 0.62 * 27.09e6).abs() < 1.0);
    }
}
