//! Refinement and consistency checks that need full solves.

use std::collections::BTreeMap;

use frontlab::frontbvp::{detect_transition, solve_front_newton, solve_pulled_front, FrontOptions, FrontSpeed};
use frontlab::models::{get_model, ModelSpec};
use frontlab::simulate::{estimate_speed, run_invasion, InitialCondition, SimConfig};
use frontlab::spreading::{linear_spreading_speed, SpreadingOptions};

fn model(name: &str, kv: &[(&str, f64)]) -> ModelSpec {
    let p: BTreeMap<String, f64> = kv.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    get_model(name, &p).unwrap()
}

fn fkpp_c_ext(n_grid: usize, dt: f64) -> f64 {
    let cfg = SimConfig { domain_length: 150.0, n_grid, dt, t_end: 60.0, sample_dt: 0.2, ..Default::default() };
    let out = run_invasion(&model("fkpp", &[]), &cfg).unwrap();
    estimate_speed(&out.track, None).unwrap().c_ext
}

#[test]
fn fkpp_speed_is_stable_under_time_and_grid_refinement() {
    let base = fkpp_c_ext(1500, 0.02);
    let finer_dt = fkpp_c_ext(1500, 0.01);
    let finer_grid = fkpp_c_ext(3000, 0.02);
    assert!((base - finer_dt).abs() < 1e-3, "dt: {base} vs {finer_dt}");
    assert!((base - finer_grid).abs() < 1e-3, "grid: {base} vs {finer_grid}");
}

#[test]
fn free_speed_is_mesh_independent_for_rigid_fronts() {
    for m in [model("nagumo", &[("a", 0.2)]), model("bistable", &[("a", 0.3)])] {
        let coarse = FrontOptions { h: 0.1, ..FrontOptions::default() };
        let fine = FrontOptions { h: 0.05, ..FrontOptions::default() };
        let c0 = solve_front_newton(&m, 60.0, FrontSpeed::Free(0.5), None, &coarse).unwrap().c;
        let c1 = solve_front_newton(&m, 60.0, FrontSpeed::Free(0.5), None, &fine).unwrap().c;
        assert!((c0 - c1).abs() < 1e-8, "{}: {c0} vs {c1}", m.name);
    }
}

#[test]
fn pulled_reconstruction_agrees_with_the_direct_front() {
    let m = model("fkpp", &[]);
    let opts = FrontOptions::default();
    let l = 60.0;
    let (q, d) = solve_pulled_front(&m, 2.0, 1.0, l, None, &opts).unwrap();
    let direct = solve_front_newton(&m, l, FrontSpeed::Fixed(2.0), None, &opts).unwrap();
    // Both carry the same phase condition, so no shift is needed; compare up to the cut.
    let err = q.xi
        .iter()
        .enumerate()
        .filter(|(_, x)| **x <= d.cut[0])
        .map(|(i, _)| (q.u[0][i] - direct.u[0][i]).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-6, "max deviation {err:e}");
}

// At the transition the front decays at the linear rate, so the truncated
// free-speed problem converges only algebraically in L (about 1e-5 at L = 960).
#[test]
#[ignore = "needs an asymptotic far-end condition; Dirichlet truncation is too slow here"]
fn free_speed_at_the_transition_equals_the_linear_speed() {
    let base = BTreeMap::new();
    let opts = FrontOptions::default();
    let tr = detect_transition("nagumo", &base, "a", [0.3, 0.7], 60.0, &opts).unwrap();
    let m = model("nagumo", &[("a", tr.mu)]);
    let c_lin = linear_spreading_speed(&m.symbol, &SpreadingOptions::default()).unwrap().c_lin;
    let c = solve_front_newton(&m, 60.0, FrontSpeed::Free(c_lin), None, &opts).unwrap().c;
    assert!((c - c_lin).abs() < 1e-6, "{c} vs {c_lin}");
}

#[test]
fn boundary_value_speeds_match_direct_simulation() {
    let cases = [
        model("nagumo", &[("a", 0.2)]),
        model("bistable", &[("a", 0.3)]),
        model("cubic_quintic", &[("alpha", 2.0)]),
    ];
    for m in &cases {
        // Seeding below c_lin can converge to a slow truncation artifact.
        let guess = linear_spreading_speed(&m.symbol, &SpreadingOptions::default()).map_or(0.5, |s| 1.1 * s.c_lin);
        let c_bvp = solve_front_newton(m, 60.0, FrontSpeed::Free(guess), None, &FrontOptions::default()).unwrap().c;
        let cfg = SimConfig {
            domain_length: 300.0,
            n_grid: 3000,
            dt: 0.02,
            t_end: 150.0_f64.min(180.0 / c_bvp),
            sample_dt: 0.2,
            initial: InitialCondition::Step { amplitude: m.wake.clone().unwrap(), width: 10.0 },
            ..Default::default()
        };
        let e = estimate_speed(&run_invasion(m, &cfg).unwrap().track, None).unwrap();
        assert!((c_bvp - e.c_ext).abs() < 2e-2, "{}: {c_bvp} vs {}", m.name, e.c_ext);
    }
}
