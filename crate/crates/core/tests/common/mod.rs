//! Generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use hevmpc::drive_cycle::DriveScenario;
use hevmpc::vehicle_model::{BatteryParams, StepQuadratics};
use hevmpc::{ConvexProblem, PowertrainModel};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Battery with parameters drawn around a plausible pack.
pub fn random_battery(r: &mut impl Rng) -> BatteryParams {
    BatteryParams {
        open_circuit_voltage: r.gen_range(250.0..450.0),
        resistance: r.gen_range(0.05..0.25),
        ..BatteryParams::default()
    }
}

/// Step quadratics from the default maps at random admissible shaft speeds.
pub fn random_quadratics(r: &mut impl Rng) -> StepQuadratics {
    let m = PowertrainModel::default();
    let lim = m.limits;
    m.step_quadratics(r.gen_range(lim.omega_eng_min..lim.omega_eng_max), r.gen_range(50.0..900.0))
}

/// Smooth random speed profile, m/s.
pub fn random_speeds(r: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut v = r.gen_range(8.0..18.0);
    (0..n)
        .map(|_| {
            v = (v + r.gen_range(-1.5..1.5f64)).clamp(4.0, 25.0);
            v
        })
        .collect()
}

/// A problem whose SOC band is narrow enough that maximal discharge is infeasible.
pub fn random_problem(r: &mut impl Rng, n: usize) -> ConvexProblem {
    let model = PowertrainModel::default();
    loop {
        let v = random_speeds(r, n);
        let theta = vec![r.gen_range(0.0..0.04); n];
        let e0 = model.battery.energy_at(0.56);
        let Ok(s) = DriveScenario::from_profile(v, theta, e0, &model) else { continue };
        let Ok(mut p) = ConvexProblem::build(&s, &model) else { continue };
        if p.hybrid.len() < n / 2 {
            continue;
        }
        let total: f64 = p.p_b_hi.iter().sum();
        let floor: f64 = p.p_b_lo.iter().sum();
        if total <= floor + 1e4 {
            continue;
        }
        let floor = floor.max(0.0);
        // allow a random fraction of the discharge range
        p.e_lo = p.e0 - floor - r.gen_range(0.2..0.7) * (total - floor);
        p.e_hi = p.e0 + 1e5;
        return p;
    }
}

/// Minimum of the objective over every `P_b` vector whose hybrid entries are integer
/// multiples of `delta` inside their bounds and whose SOC trajectory stays in band.
///
/// Exact enumeration: cumulative lattice sums index the states, so no value is interpolated.
pub fn lattice_optimum(p: &ConvexProblem, delta: f64) -> (f64, Vec<f64>) {
    let n = p.len();
    // per-step lattice controls and their costs
    let mut ctrl: Vec<(i64, Vec<f64>)> = Vec::with_capacity(n);
    for k in 0..n {
        match &p.steps[k].cost {
            Some(c) => {
                let lo = (p.p_b_lo[k] / delta).ceil() as i64;
                let hi = (p.p_b_hi[k] / delta).floor() as i64;
                assert!(hi >= lo, "lattice too coarse at step {k}");
                ctrl.push((lo, (lo..=hi).map(|m| c.value(m as f64 * delta)).collect()));
            }
            None => ctrl.push((0, vec![0.0])),
        }
    }
    // range of every prefix sum
    let (mut lo_sum, mut hi_sum, mut a, mut b) = (0i64, 0i64, 0i64, 0i64);
    for (m0, costs) in &ctrl {
        a += m0;
        b += m0 + costs.len() as i64 - 1;
        lo_sum = lo_sum.min(a);
        hi_sum = hi_sum.max(b);
    }
    let width = (hi_sum - lo_sum + 1) as usize;
    let idx = |s: i64| (s - lo_sum) as usize;

    let mut best = vec![f64::INFINITY; width];
    let mut arg: Vec<Vec<u32>> = Vec::with_capacity(n);
    best[idx(0)] = 0.0;
    let mut fixed = 0.0;
    let (mut s_lo, mut s_hi) = (0i64, 0i64);
    for (k, (m0, costs)) in ctrl.iter().enumerate() {
        if p.steps[k].cost.is_none() {
            fixed += p.p_b_lo[k];
        }
        let mut next = vec![f64::INFINITY; width];
        let mut choice = vec![u32::MAX; width];
        for s in s_lo..=s_hi {
            let b = best[idx(s)];
            if !b.is_finite() {
                continue;
            }
            for (j, &c) in costs.iter().enumerate() {
                let t = s + m0 + j as i64;
                let v = b + c;
                if v < next[idx(t)] {
                    next[idx(t)] = v;
                    choice[idx(t)] = j as u32;
                }
            }
        }
        s_lo += m0;
        s_hi += m0 + costs.len() as i64 - 1;
        for s in s_lo..=s_hi {
            let e = p.e0 - fixed - s as f64 * delta;
            if e < p.e_lo || e > p.e_hi {
                next[idx(s)] = f64::INFINITY;
            }
        }
        best = next;
        arg.push(choice);
    }
    let (s_star, v) = best
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, &v)| (i as i64 + lo_sum, v))
        .unwrap();
    assert!(v.is_finite(), "no feasible lattice point");
    // backtrack
    let mut p_b = vec![0.0; n];
    let mut s = s_star;
    for k in (0..n).rev() {
        let j = arg[k][idx(s)] as i64;
        let m = ctrl[k].0 + j;
        p_b[k] = if p.steps[k].cost.is_some() { m as f64 * delta } else { p.p_b_lo[k] };
        s -= m;
    }
    (v, p_b)
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
