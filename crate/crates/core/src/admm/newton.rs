//! Scalar Newton solver for the separable battery-power subproblem
//! `min_x c(x) + (rho1 / 2) (x - a)^2` over a box, with Armijo backtracking.

use serde::{Deserialize, Serialize};

use crate::problem::ComposedCost;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonParams {
    /// Relative step tolerance (scaled by the box width) and absolute gradient tolerance.
    pub tol: f64,
    pub max_iter: usize,
    pub shrink: f64,
    pub sufficient_decrease: f64,
    pub initial_step: f64,
}

impl Default for NewtonParams {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 50, shrink: 0.5, sufficient_decrease: 1e-4, initial_step: 1.0 }
    }
}

/// Newton produced a non-finite value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonFailure {
    pub iterate: f64,
    pub value: f64,
    pub gradient: f64,
    pub hessian: f64,
}

/// Anything with a value and first two derivatives on an interval.
pub trait ScalarCost {
    fn eval3(&self, x: f64) -> (f64, f64, f64);
}

impl ScalarCost for ComposedCost {
    #[inline]
    fn eval3(&self, x: f64) -> (f64, f64, f64) {
        let e = self.eval(x);
        (e.value, e.d1, e.d2)
    }
}

/// Minimises `cost(x) + rho/2 (x - anchor)^2` over `[lo, hi]`, starting from `x0`.
///
/// Iterates stay inside `[lo + d, hi - d]` with `d = 1e-9 (hi - lo)`, where the
/// composed cost is finite; the result is then projected onto `[lo, hi]`.
pub fn prox_newton<C: ScalarCost>(
    cost: &C,
    lo: f64,
    hi: f64,
    anchor: f64,
    rho: f64,
    x0: f64,
    p: &NewtonParams,
) -> Result<f64, NewtonFailure> {
    let width = hi - lo;
    if !(width > 0.0) {
        return Ok(lo);
    }
    let margin = 1e-9 * width;
    let (a, b) = (lo + margin, hi - margin);
    let phi = |x: f64| {
        let (v, d1, d2) = cost.eval3(x);
        let dx = x - anchor;
        (v + 0.5 * rho * dx * dx, d1 + rho * dx, d2 + rho)
    };
    let mut x = x0.clamp(a, b);
    let (mut f, mut g, mut h) = phi(x);
    for _ in 0..p.max_iter {
        if !(f.is_finite() && g.is_finite() && h.is_finite()) {
            return Err(NewtonFailure { iterate: x, value: f, gradient: g, hessian: h });
        }
        if g.abs() <= p.tol {
            break;
        }
        let dir = if h > 0.0 { -g / h } else { -g / rho };
        let mut t = p.initial_step;
        let mut next = None;
        while t > 1e-12 {
            let xn = (x + t * dir).clamp(a, b);
            if xn == x {
                break;
            }
            let trial = phi(xn);
            if trial.0 <= f + p.sufficient_decrease * g * (xn - x) {
                next = Some((xn, trial));
                break;
            }
            t *= p.shrink;
        }
        let Some((xn, (fnew, gnew, hnew))) = next else { break };
        let moved = (xn - x).abs();
        x = xn;
        (f, g, h) = (fnew, gnew, hnew);
        if moved <= p.tol * width.max(1.0) {
            break;
        }
    }
    if !(f.is_finite() && g.is_finite()) {
        return Err(NewtonFailure { iterate: x, value: f, gradient: g, hessian: h });
    }
    // a minimiser pinned at the margin belongs to the bound itself
    if x >= b && g < 0.0 {
        return Ok(hi);
    }
    if x <= a && g > 0.0 {
        return Ok(lo);
    }
    Ok(x.clamp(lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quad {
        a: f64,
        b: f64,
    }

    impl ScalarCost for Quad {
        fn eval3(&self, x: f64) -> (f64, f64, f64) {
            (0.5 * self.a * x * x + self.b * x, self.a * x + self.b, self.a)
        }
    }

    #[test]
    fn quadratic_closed_form() {
        // min a/2 x^2 + b x + rho/2 (x - s)^2  =>  x = (rho s - b) / (a + rho)
        let c = Quad { a: 3.0e-4, b: -2.5 };
        let (rho, s) = (2.34e-4, 1200.0);
        let expected = (rho * s - c.b) / (c.a + rho);
        let x = prox_newton(&c, -1e5, 1e5, s, rho, 0.0, &NewtonParams::default()).unwrap();
        assert!((x - expected).abs() <= 1e-8 * expected.abs(), "{x} vs {expected}");
    }

    #[test]
    fn projection_onto_box() {
        let c = Quad { a: 1.0, b: -100.0 };
        let x = prox_newton(&c, -5.0, 5.0, 0.0, 1.0, 0.0, &NewtonParams::default()).unwrap();
        assert_eq!(x, 5.0);
        let x = prox_newton(&c, 60.0, 70.0, 0.0, 1.0, 65.0, &NewtonParams::default()).unwrap();
        assert_eq!(x, 60.0);
    }

    #[test]
    fn degenerate_box() {
        let c = Quad { a: 1.0, b: 0.0 };
        assert_eq!(prox_newton(&c, 3.0, 3.0, 0.0, 1.0, 0.0, &NewtonParams::default()).unwrap(), 3.0);
    }

    #[test]
    fn large_rho_tracks_anchor() {
        let c = Quad { a: 1e-4, b: -3.0 };
        let x = prox_newton(&c, -1e4, 1e4, 250.0, 1e6, 0.0, &NewtonParams::default()).unwrap();
        assert!((x - 250.0).abs() < 1e-3);
    }

    struct Nan;
    impl ScalarCost for Nan {
        fn eval3(&self, _: f64) -> (f64, f64, f64) {
            (f64::NAN, f64::NAN, f64::NAN)
        }
    }

    #[test]
    fn non_finite_is_reported() {
        let err = prox_newton(&Nan, 0.0, 1.0, 0.0, 1.0, 0.5, &NewtonParams::default()).unwrap_err();
        assert_eq!(err.iterate, 0.5);
    }
}
