//! Property tests for model, problem and solver invariants.

mod common;

use common::*;
use hevmpc::problem::{fuel_metric, psi_apply, psi_t_apply, soc_trajectory};
use hevmpc::vehicle_model::{battery_power, BatteryInverse};
use hevmpc::{admm, dp, AdmmParams, DpParams, Execution};
use proptest::prelude::*;

fn toy_params(p: &hevmpc::ConvexProblem) -> AdmmParams {
    let scale: f64 = p.p_b_hi.iter().zip(&p.p_b_lo).map(|(h, l)| h - l).sum();
    AdmmParams { epsilon: 1e-4 * scale, rho2: 1e-6, max_iter: 200_000, ..AdmmParams::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inverse_round_trip(seed in any::<u64>(), t in 0.0f64..=1.0) {
        let mut r = rng(seed);
        let p = random_problem(&mut r, 10);
        for &k in &p.hybrid {
            let s = &p.steps[k];
            let inv = BatteryInverse::new(&s.quads.motor, &p.battery);
            let pb = s.bounds.p_b_lo + t * (s.bounds.p_b_hi - s.bounds.p_b_lo);
            let back = battery_power(inv.eval(pb).value, &s.quads.motor, &p.battery).unwrap();
            prop_assert!((back - pb).abs() <= 1e-9 * pb.abs().max(1.0));
            let x = s.bounds.p_em_lo_plus + t * (s.p_drv - s.bounds.p_eng_lo_plus - s.bounds.p_em_lo_plus);
            let y = inv.eval(battery_power(x, &s.quads.motor, &p.battery).unwrap()).value;
            prop_assert!((y - x).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn inverse_is_increasing_and_concave(seed in any::<u64>(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let mut r = rng(seed);
        let p = random_problem(&mut r, 10);
        for &k in &p.hybrid {
            let s = &p.steps[k];
            let inv = BatteryInverse::new(&s.quads.motor, &p.battery);
            let at = |t: f64| s.bounds.p_b_lo + t * (s.bounds.p_b_hi - s.bounds.p_b_lo);
            let (x, y) = (at(a.min(b)), at(a.max(b)));
            let (ex, ey) = (inv.eval(x), inv.eval(y));
            prop_assert!(ex.d1 > 0.0 && ex.d2 <= 0.0);
            prop_assert!(ey.value >= ex.value);
            let mid = inv.eval(0.5 * (x + y)).value;
            prop_assert!(mid >= 0.5 * (ex.value + ey.value) - 1e-9 * mid.abs().max(1.0));
        }
    }

    #[test]
    fn composed_cost_convex_and_nonincreasing(seed in any::<u64>(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let mut r = rng(seed);
        let p = random_problem(&mut r, 10);
        for &k in &p.hybrid {
            let c = p.steps[k].cost.unwrap();
            let at = |t: f64| p.p_b_lo[k] + t * (p.p_b_hi[k] - p.p_b_lo[k]);
            let (x, y) = (at(a.min(b)), at(a.max(b)));
            let (fx, fy) = (c.value(x), c.value(y));
            let tol = 1e-12 * fx.abs().max(1.0);
            prop_assert!(fy <= fx + tol);
            prop_assert!(c.value(0.5 * (x + y)) <= 0.5 * (fx + fy) + tol);
            let e = c.eval(x);
            prop_assert!(e.d1 <= 0.0 && e.d2 >= 0.0);
        }
    }

    #[test]
    fn psi_adjoint_and_dynamics(z in prop::collection::vec(-1e5f64..1e5, 1..50), e0 in 1e6f64..3e7) {
        let y: Vec<f64> = z.iter().rev().cloned().collect();
        let lhs: f64 = psi_apply(&z).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = z.iter().zip(psi_t_apply(&y)).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(rhs.abs()).max(1.0));
        let e = soc_trajectory(e0, &z);
        prop_assert_eq!(e.len(), z.len() + 1);
        prop_assert_eq!(e[0], e0);
        for k in 0..z.len() {
            prop_assert!((e[k + 1] - (e[k] - z[k])).abs() <= 1e-9 * e0);
        }
    }

    #[test]
    fn fuel_metric_is_a_distance(
        a in prop::collection::vec(0.0f64..1e5, 1..30),
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut r = rng(seed);
        let b: Vec<f64> = a.iter().map(|x| x + r.gen_range(-1e3..1e3)).collect();
        let c: Vec<f64> = a.iter().map(|x| x + r.gen_range(-1e3..1e3)).collect();
        prop_assert_eq!(fuel_metric(&a, &a).unwrap(), 0.0);
        let ab = fuel_metric(&a, &b).unwrap();
        prop_assert_eq!(ab, fuel_metric(&b, &a).unwrap());
        prop_assert!(fuel_metric(&a, &c).unwrap() <= ab + fuel_metric(&b, &c).unwrap() + 1e-6);
        prop_assert!(fuel_metric(&a, &b[..b.len() - 1]).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn admm_respects_power_bounds_and_modes_agree(seed in any::<u64>(), n in 8usize..40) {
        let mut r = rng(seed);
        let p = random_problem(&mut r, n);
        let par = admm::solve(&p, &AdmmParams { execution: Execution::Parallel, ..toy_params(&p) }).unwrap();
        let seq = admm::solve(&p, &AdmmParams { execution: Execution::Sequential, ..toy_params(&p) }).unwrap();
        prop_assert_eq!(&par.p_b, &seq.p_b);
        prop_assert_eq!(par.audit.max_bound_violation_w, 0.0);
        prop_assert!(par.audit.dynamics_residual <= 1e-6 * p.e0);
        prop_assert_eq!(par.fuel_cost, par.p_f.iter().sum::<f64>());
        prop_assert!(par.objective <= par.fuel_cost + 1e-9);
    }

    #[test]
    fn dp_rollout_stays_in_band(seed in any::<u64>(), n in 8usize..40, n_e in 20usize..200) {
        let mut r = rng(seed);
        let p = random_problem(&mut r, n);
        let s = dp::solve(&p, &DpParams::with_n_e(n_e)).unwrap();
        prop_assert!(s.converged());
        prop_assert_eq!(s.audit.max_soc_violation_pct, 0.0);
        prop_assert_eq!(s.audit.max_bound_violation_w, 0.0);
        prop_assert_eq!(s.e_traj.len(), n + 1);
    }

    #[test]
    fn dp_cost_to_go_nonincreasing_in_energy(seed in any::<u64>(), n in 8usize..30) {
        let mut r = rng(seed);
        let p = random_problem(&mut r, n);
        let (_, mesh) = dp::solve_with_mesh(&p, &DpParams::with_n_e(80)).unwrap();
        for k in 0..mesh.steps() {
            let col = &mesh.cost[k];
            let finite: Vec<f64> = col.iter().copied().filter(|c| c.is_finite()).collect();
            for w in finite.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "column {}: {:?}", k, w);
            }
        }
    }

    #[test]
    fn solvers_bracket_the_lattice_optimum(seed in any::<u64>(), n in 8usize..11) {
        let mut r = rng(seed);
        let p = random_problem(&mut r, n);
        let (oracle, arg) = lattice_optimum(&p, 25.0);
        // the lattice point is feasible, so no feasible solver output may be much better
        let e = soc_trajectory(p.e0, &arg);
        prop_assert!(e.iter().all(|&x| x >= p.e_lo && x <= p.e_hi));
        let d = dp::solve(&p, &DpParams::with_n_e(400)).unwrap();
        prop_assert!(d.objective >= oracle * (1.0 - 1e-3));
        let a = admm::solve(&p, &toy_params(&p)).unwrap();
        prop_assert!(rel(a.objective, oracle) <= 5e-3);
    }
}
