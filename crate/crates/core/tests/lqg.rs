mod common;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use structctl::dynamics::{assemble_matrices, BuildingModel};
use structctl::environment::{compute_reward, EnvConfig, Environment, RewardScales, RewardWeights};
use structctl::lqg::{
    build_state_space, dare_residual, design_lqg, discretize, discretize_ramp, kalman_design, solve_dare, LqgConfig,
    LqgController, LqgCost,
};
use structctl::policy::{Controller, ZeroController};

fn benchmark_continuous() -> structctl::lqg::StateSpaceModel {
    let mats = assemble_matrices(&BuildingModel::benchmark()).unwrap();
    build_state_space(&mats, &[1, 2, 3, 4, 5]).unwrap()
}

fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax()
}

#[test]
fn zero_order_hold_matches_taylor_oracle() {
    let ss = benchmark_continuous();
    let dt = 0.01;
    let d = discretize(&ss, dt).unwrap();
    let (ns, nu) = (ss.n_states(), ss.b.ncols());
    let mut aug = DMatrix::zeros(ns + nu, ns + nu);
    aug.view_mut((0, 0), (ns, ns)).copy_from(&ss.a);
    aug.view_mut((0, ns), (ns, nu)).copy_from(&ss.b);
    let phi = common::expm_taylor(&(aug * dt));
    assert!(rel_diff(&d.a, &phi.view((0, 0), (ns, ns)).into_owned()) < 1e-10);
    assert!(rel_diff(&d.b, &phi.view((0, ns), (ns, nu)).into_owned()) < 1e-10);
}

#[test]
fn ramp_inputs_match_substepped_hold() {
    let ss = benchmark_continuous();
    let dt = 0.01;
    let ramp = discretize_ramp(&ss.a, &ss.b, dt).unwrap();
    // Many short zero-order holds at the midpoint value of the ramp.
    let steps = 400;
    let h = dt / steps as f64;
    let (ns, nu) = (ss.n_states(), ss.b.ncols());
    let mut aug = DMatrix::zeros(ns + nu, ns + nu);
    aug.view_mut((0, 0), (ns, ns)).copy_from(&ss.a);
    aug.view_mut((0, ns), (ns, nu)).copy_from(&ss.b);
    let phi = common::expm_taylor(&(aug * h));
    let (f, g) = (phi.view((0, 0), (ns, ns)).into_owned(), phi.view((0, ns), (ns, nu)).into_owned());
    let u0 = DVector::from_vec(vec![3e4, -1e4, 5e4]);
    let u1 = DVector::from_vec(vec![-2e4, 4e4, 1e4]);
    let mut z = DVector::from_fn(ns, |i, _| 1e-3 * (i as f64 - 4.0));
    let z0 = z.clone();
    for s in 0..steps {
        let w = (s as f64 + 0.5) / steps as f64;
        let u = &u0 * (1.0 - w) + &u1 * w;
        z = &f * z + &g * u;
    }
    let exact = &ramp.a * z0 + &ramp.b_prev * u0 + &ramp.b_next * u1;
    assert!((&z - &exact).amax() < 1e-6 * exact.amax(), "{}", (&z - &exact).amax() / exact.amax());
}

#[test]
fn kalman_riccati_matches_value_iteration() {
    let design = design_lqg(&EnvConfig::default(), &LqgConfig::default()).unwrap();
    let at = design.plant.a.transpose();
    let ct = design.plant.c_obs.transpose();
    let p = solve_dare(&at, &ct, &design.process_noise, &design.measurement_noise).unwrap();
    let oracle = common::dare_value_iteration(&at, &ct, &design.process_noise, &design.measurement_noise);
    assert!(rel_diff(&p, &oracle) < 1e-8, "{}", rel_diff(&p, &oracle));
}

#[test]
fn random_stable_dare_matches_value_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let n = 4;
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.5..0.5));
        let b = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let q = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
        let r = DMatrix::identity(2, 2) * rng.random_range(0.1..2.0);
        let p = solve_dare(&a, &b, &q, &r).unwrap();
        assert!(dare_residual(&a, &b, &q, &r, &p) <= 1e-10);
        let oracle = common::dare_value_iteration(&a, &b, &q, &r);
        assert!(rel_diff(&p, &oracle) < 1e-9);
    }
}

proptest! {
    #[test]
    fn scalar_dare_matches_bisection(a in -2.0f64..2.0, b in 0.2f64..2.0, q in 0.1f64..5.0, r in 0.1f64..5.0) {
        let one = |v| DMatrix::from_element(1, 1, v);
        let p = solve_dare(&one(a), &one(b), &one(q), &one(r)).unwrap();
        let oracle = common::scalar_dare_bisection(a, b, q, r);
        prop_assert!((p[(0, 0)] - oracle).abs() <= 1e-10 * oracle.max(1.0));
    }

    #[test]
    fn stage_cost_is_negated_reward(
        x in proptest::collection::vec(-0.05f64..0.05, 5),
        v in proptest::collection::vec(-0.5f64..0.5, 5),
        u in proptest::collection::vec(-1e5f64..1e5, 3),
        w in (0.0f64..3.0, 0.0f64..3.0, 0.0f64..500.0),
    ) {
        let mats = assemble_matrices(&BuildingModel::benchmark()).unwrap();
        let weights = RewardWeights { displacement: w.0, base_shear: w.1, force: w.2 };
        let scales = RewardScales::default();
        let cost = LqgCost::from_reward(&mats, &weights, &scales);
        let (xv, vv, uv) = (DVector::from_vec(x.clone()), DVector::from_vec(v.clone()), DVector::from_vec(u.clone()));
        // Absolute acceleration M⁻¹(B_u·u − K·x − C·v); the ground term cancels.
        let rhs = &mats.actuator * &uv - &mats.stiffness * &xv - &mats.damping * &vv;
        // Σ mᵢ·aᵢ with aᵢ = rhsᵢ/mᵢ.
        let base_shear: f64 = rhs.sum();
        let reward = compute_reward(&x, base_shear, &u, &weights, &scales);
        let mut z = DVector::zeros(10);
        z.rows_mut(0, 5).copy_from(&xv);
        z.rows_mut(5, 5).copy_from(&vv);
        let c = cost.stage_cost(&z, &uv);
        prop_assert!((c + reward).abs() <= 1e-9 * reward.abs().max(1.0));
    }
}

#[test]
fn estimation_error_follows_estimator_dynamics() {
    let design = Arc::new(design_lqg(&EnvConfig::default(), &LqgConfig::default()).unwrap());
    let d = &*design;
    let mut ctl = LqgController::new(design.clone());
    let ns = d.plant.n_states();
    let mut z = DVector::from_fn(ns, |i, _| if i < 5 { 0.01 * (i as f64 + 1.0) } else { 0.0 });
    let mut u = DVector::zeros(3);
    let err_map = &d.plant.a - &d.l_kal * &d.plant.c_obs;
    let mut predicted = &z - ctl.estimate();
    let e0 = predicted.norm();
    for _ in 0..300 {
        let y = &d.plant.c_obs * &z + &d.plant.d_obs * &u;
        let next = ctl.step(&y, &u).unwrap();
        z = &d.ramp.a * &z + &d.ramp.b_prev * &u + &d.ramp.b_next * &next;
        u = next;
        predicted = &err_map * predicted;
        let actual = &z - ctl.estimate();
        assert!((&actual - &predicted).norm() <= 1e-9 * e0);
    }
    assert!(predicted.norm() < 1e-3 * e0);
}

fn episode_return(env: &mut Environment, controller: &mut dyn Controller) -> f64 {
    let record = common::el_centro();
    let mut obs = env.reset_with_record(record).unwrap();
    controller.reset();
    let mut total = 0.0;
    while !env.is_done() {
        let action = controller.act(&obs).unwrap();
        let step = env.step(&action).unwrap();
        total += step.reward;
        obs = step.observation;
    }
    total
}

#[test]
fn lqg_improves_episode_return_on_recorded_quake() {
    let cfg = EnvConfig::default();
    let mut env = Environment::new(cfg.clone()).unwrap();
    let design = Arc::new(design_lqg(&cfg, &LqgConfig::default()).unwrap());
    let lqg = episode_return(&mut env, &mut LqgController::new(design));
    let zero = episode_return(&mut env, &mut ZeroController::new(3));
    assert!(lqg > zero, "LQG return {lqg} vs uncontrolled {zero}");
}

#[test]
fn kalman_gains_are_consistent() {
    let design = design_lqg(&EnvConfig::default(), &LqgConfig::default()).unwrap();
    let k = kalman_design(&design.plant.a, &design.plant.c_obs, &design.process_noise, &design.measurement_noise).unwrap();
    assert!(rel_diff(&(&design.plant.a * &k.filter_gain), &k.predictor_gain) < 1e-12);
    assert!(design.estimator_radius() < 1.0);
}
