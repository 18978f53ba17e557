use super::*;
use crate::lmi::{build_phi, build_phi_e, build_psi};
use crate::model::{DerivativeController, PidController};
use crate::sdp::{solve_feasibility, FeasibilityProblem};
use crate::synthesis::{map_gains, map_pid_gains};
use proptest::prelude::*;

fn triple() -> (LtiPlant, DerivativeController) {
    (LtiPlant::integrator_chain(3), DerivativeController::scalar(&[-2e-4, -0.06, -0.342]).unwrap())
}

fn pid() -> (PidPlant, PidController) {
    (PidPlant::new(8.4, 0.0, 35.71).unwrap(), PidController::new(-10.0, -40.0, -0.65).unwrap())
}

/// Classical RK4 with a fine fixed step and the input held constant.
fn rk4(a: &Mat, b: &Mat, x0: &[f64], u: &[f64], h: f64, steps: usize) -> Vec<f64> {
    let dt = h / steps as f64;
    let u = column(u);
    let f = |x: &Mat| a * x + b * &u;
    let mut x = column(x0);
    for _ in 0..steps {
        let k1 = f(&x);
        let k2 = f(&(&x + &k1 * (dt / 2.0)));
        let k3 = f(&(&x + &k2 * (dt / 2.0)));
        let k4 = f(&(&x + &k3 * dt));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    }
    x.iter().copied().collect()
}

#[test]
fn one_step_matches_rk4() {
    let plant = LtiPlant::new(
        Mat::from_row_slice(3, 3, &[0.1, 1.0, 0.0, -0.5, 0.2, 1.0, 0.3, -1.0, -0.4]),
        Mat::from_row_slice(3, 1, &[0.0, 0.0, 1.0]),
        Mat::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
    )
    .unwrap();
    let ideal = DerivativeController::scalar(&[-1.0, -2.0, -3.0]).unwrap();
    let ctrl = map_gains(&ideal, 0.05, &[2, 4]).unwrap();
    let x0 = [0.3, -0.7, 0.9];
    let trace = simulate_sampled(&plant, &ctrl, &x0, 0.05, None).unwrap();
    let oracle = rk4(plant.a(), plant.b(), &x0, &trace.u[0], 0.05, 20_000);
    for (s, o) in trace.x[1].iter().zip(&oracle) {
        assert!((s - o).abs() < 1e-9, "{s} vs {o}");
    }
}

#[test]
fn zero_state_stays_zero() {
    let (plant, ideal) = triple();
    let ctrl = map_gains(&ideal, 0.044, &[30, 60]).unwrap();
    let trace = simulate_sampled(&plant, &ctrl, &[0.0; 3], 1.0, Some(8)).unwrap();
    assert!(trace.x.iter().flatten().all(|v| *v == 0.0));
    assert!(trace.u.iter().flatten().all(|v| *v == 0.0));
    let omega = Mat::identity(1, 1);
    let (_, log) = simulate_event_triggered(&plant, &ctrl, 0.1, &omega, &[0.0; 3], 1.0, None).unwrap();
    assert_eq!(log.transmissions(), 1);
    let (p, i) = pid();
    let pc = map_pid_gains(&i, 4e-3, 7).unwrap().with_sigma(9e-3).unwrap();
    let (tr, log) = simulate_pid(&p, &pc, &[0.0, 0.0], 0.5, None).unwrap();
    assert!(tr.x.iter().flatten().all(|v| *v == 0.0));
    assert_eq!(log.transmissions(), 1);
}

#[test]
fn sampled_counts_match_floor_formula() {
    let (plant, ideal) = triple();
    let ctrl = map_gains(&ideal, 0.044, &[30, 60]).unwrap();
    let trace = simulate_sampled(&plant, &ctrl, &[1.0, -0.5, 0.25], 100.0, None).unwrap();
    assert_eq!(trace.len(), 2273);
    assert_eq!(trace.t[2272], 2272.0 * 0.044);
    let (p, i) = pid();
    let pc = map_pid_gains(&i, 4.7e-3, 7).unwrap();
    let (trace, log) = simulate_pid(&p, &pc, &[0.5, -0.5], 10.0, None).unwrap();
    assert_eq!(trace.len(), 2128);
    assert_eq!(log.transmissions(), 2128);
    assert_eq!(log.workload(), Workload { sensor_to_controller: 2128, controller_to_actuator: 2128 });
}

#[test]
fn zero_sigma_is_periodic_bitwise() {
    let (plant, ideal) = triple();
    let ctrl = map_gains(&ideal, 0.042, &[30, 60]).unwrap();
    let omega = Mat::from_element(1, 1, 3.7);
    let x0 = [0.4, -0.9, 0.1];
    let periodic = simulate_sampled(&plant, &ctrl, &x0, 20.0, None).unwrap();
    let (event, log) = simulate_event_triggered(&plant, &ctrl, 0.0, &omega, &x0, 20.0, None).unwrap();
    assert_eq!(periodic.x, event.x);
    assert_eq!(periodic.u, event.u);
    assert!(log.transmitted.iter().all(|t| *t));
}

#[test]
fn dense_grid_leaves_samples_untouched() {
    let (plant, ideal) = triple();
    let ctrl = map_gains(&ideal, 0.044, &[30, 60]).unwrap();
    let x0 = [0.2, 0.3, -0.4];
    let coarse = simulate_sampled(&plant, &ctrl, &x0, 10.0, Some(8)).unwrap();
    let fine = simulate_sampled(&plant, &ctrl, &x0, 10.0, Some(16)).unwrap();
    let none = simulate_sampled(&plant, &ctrl, &x0, 10.0, None).unwrap();
    assert_eq!(coarse.x, fine.x);
    assert_eq!(coarse.x, none.x);
    let d = fine.dense.unwrap();
    assert_eq!(d.states.len(), (fine.t.len() - 1) * 16 + 1);
    assert_eq!(d.states[16 * 5], fine.x[5]);
}

#[test]
fn decay_of_pure_exponential() {
    let plant = LtiPlant::new(
        Mat::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]),
        Mat::from_row_slice(2, 1, &[0.0, 1.0]),
        Mat::from_row_slice(1, 2, &[1.0, 0.0]),
    )
    .unwrap();
    let ctrl = SampledController::new(0.1, vec![1], vec![Mat::zeros(1, 1), Mat::zeros(1, 1)]).unwrap();
    let trace = simulate_sampled(&plant, &ctrl, &[1.0, -2.0], 10.0, None).unwrap();
    let rate = estimate_decay_rate(&trace, 0.5).unwrap();
    assert!((rate - 1.0).abs() < 1e-6, "{rate}");
}

#[test]
fn decay_of_zero_trace_is_infinite() {
    let (plant, ideal) = triple();
    let ctrl = map_gains(&ideal, 0.044, &[30, 60]).unwrap();
    let trace = simulate_sampled(&plant, &ctrl, &[0.0; 3], 1.0, None).unwrap();
    assert_eq!(estimate_decay_rate(&trace, 0.5).unwrap(), f64::INFINITY);
    assert!(estimate_decay_rate(&trace, 0.0).is_err());
}

#[test]
fn invalid_inputs_rejected() {
    let (plant, ideal) = triple();
    let ctrl = map_gains(&ideal, 0.044, &[30, 60]).unwrap();
    assert!(simulate_sampled(&plant, &ctrl, &[0.0; 2], 1.0, None).is_err());
    assert!(simulate_sampled(&plant, &ctrl, &[0.0; 3], 0.01, None).is_err());
    assert!(simulate_sampled(&plant, &ctrl, &[f64::NAN, 0.0, 0.0], 1.0, None).is_err());
    let omega = Mat::identity(1, 1);
    assert!(simulate_event_triggered(&plant, &ctrl, 1.0, &omega, &[0.0; 3], 1.0, None).is_err());
    assert!(simulate_event_triggered(&plant, &ctrl, 0.1, &(-omega), &[0.0; 3], 1.0, None).is_err());
}

#[test]
fn step_count_is_robust_to_rounding() {
    assert_eq!(step_count(100.0, 0.044).unwrap(), 2272);
    assert_eq!(step_count(10.0, 4.7e-3).unwrap(), 2127);
    assert_eq!(step_count(0.3, 0.1).unwrap(), 3);
}

#[test]
fn random_states_are_seeded() {
    let a = random_initial_states(3, 10, 42);
    assert_eq!(a, random_initial_states(3, 10, 42));
    assert_ne!(a, random_initial_states(3, 10, 43));
    assert!(a.iter().flatten().all(|v| v.abs() <= 1.0));
}

#[test]
fn csv_has_documented_header() {
    let (plant, ideal) = triple();
    let ctrl = map_gains(&ideal, 0.044, &[30, 60]).unwrap();
    let trace = simulate_sampled(&plant, &ctrl, &[1.0, 0.0, 0.0], 0.2, None).unwrap();
    let csv = trace.to_csv(None, None);
    assert!(csv.starts_with("k,t,x1,x2,x3,u,transmitted\n"));
    assert_eq!(csv.lines().count(), trace.len() + 1);
}

#[test]
fn lyapunov_of_zero_trace_vanishes() {
    let (plant, ideal) = triple();
    let ctrl = map_gains(&ideal, 0.044, &[30, 60]).unwrap();
    let lmi = build_phi(&plant, &ctrl, 1e-3).unwrap();
    let cert = solve_feasibility(&FeasibilityProblem::new(lmi)).unwrap().certificate().unwrap().clone();
    let trace = simulate_sampled(&plant, &ctrl, &[0.0; 3], 4.0, Some(64)).unwrap();
    let diag = lyapunov_lti(&plant, &ctrl, &cert, 1e-3, &trace).unwrap();
    assert!(diag.samples.iter().all(|s| s.v == 0.0));
    assert!(lyapunov_lti(&plant, &ctrl, &cert, 1e-3, &simulate_sampled(&plant, &ctrl, &[0.0; 3], 4.0, None).unwrap()).is_err());
}

#[test]
fn lyapunov_decreases_on_certified_lti_run() {
    let (plant, ideal) = triple();
    let ctrl = map_gains(&ideal, 0.042, &[30, 60]).unwrap();
    let lmi = build_phi_e(&plant, &ctrl, 1e-3, 2e-3).unwrap();
    let cert = solve_feasibility(&FeasibilityProblem::new(lmi)).unwrap().certificate().unwrap().clone();
    let omega = cert.get("Omega").unwrap().clone();
    let (trace, _) = simulate_event_triggered(&plant, &ctrl, 2e-3, &omega, &[0.8, -0.6, 0.9], 60.0, Some(64)).unwrap();
    let diag = lyapunov_lti(&plant, &ctrl, &cert, 1e-3, &trace).unwrap();
    assert!(diag.components_nonnegative());
    assert!(diag.is_monotone(1e-6), "worst increase {}", diag.worst_increase());
    assert!(diag.warnings.is_empty(), "{:?}", diag.warnings);
}

#[test]
fn lyapunov_decreases_on_certified_pid_run() {
    let (p, i) = pid();
    let ctrl = map_pid_gains(&i, 4e-3, 7).unwrap().with_sigma(9e-3).unwrap();
    let lmi = build_psi(&p, &ctrl, 5.0).unwrap();
    let cert = solve_feasibility(&FeasibilityProblem::new(lmi)).unwrap().certificate().unwrap().clone();
    let (trace, _) = simulate_pid(&p, &ctrl, &[0.7, -0.9], 10.0, Some(64)).unwrap();
    let diag = lyapunov_pid(&p, &ctrl, &cert, 5.0, &trace).unwrap();
    assert!(diag.components_nonnegative());
    assert!(diag.is_monotone(1e-6), "worst increase {}", diag.worst_increase());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn held_steps_satisfy_negated_trigger(
        x0 in proptest::collection::vec(-1.0f64..1.0, 3),
        sigma in 0.0f64..0.5,
        w in 0.1f64..10.0,
    ) {
        let (plant, ideal) = triple();
        let ctrl = map_gains(&ideal, 0.044, &[30, 60]).unwrap();
        let omega = Mat::from_element(1, 1, w);
        let (trace, log) = simulate_event_triggered(&plant, &ctrl, sigma, &omega, &x0, 20.0, None).unwrap();
        prop_assert!(log.transmitted[0]);
        for k in 1..trace.len() {
            let diff = log.u[k][0] - trace.u[k - 1][0];
            if log.transmitted[k] {
                prop_assert_eq!(trace.u[k][0], log.u[k][0]);
            } else {
                prop_assert!(w * diff * diff <= sigma * w * log.u[k][0] * log.u[k][0]);
                prop_assert_eq!(trace.u[k][0], trace.u[k - 1][0]);
            }
            prop_assert_eq!(log.e[k][0], trace.u[k][0] - log.u[k][0]);
        }
    }

    #[test]
    fn pid_held_steps_satisfy_negated_trigger(y0 in -1.0f64..1.0, v0 in -1.0f64..1.0, sigma in 0.0f64..0.5) {
        let (p, i) = pid();
        let ctrl = map_pid_gains(&i, 4e-3, 7).unwrap().with_sigma(sigma).unwrap();
        let (trace, log) = simulate_pid(&p, &ctrl, &[y0, v0], 1.0, None).unwrap();
        for k in 1..trace.len() {
            if !log.transmitted[k] {
                let d = log.u[k][0] - trace.u[k - 1][0];
                prop_assert!(d * d <= sigma * log.u[k][0] * log.u[k][0]);
            }
        }
        prop_assert_eq!(log.count.len(), trace.len());
    }

    #[test]
    fn sample_times_are_products(h in 1e-3f64..0.2, horizon in 1.0f64..5.0) {
        let (plant, ideal) = triple();
        let ctrl = map_gains(&ideal, h, &[2, 4]).unwrap();
        let trace = simulate_sampled(&plant, &ctrl, &[0.1, 0.2, 0.3], horizon, None).unwrap();
        prop_assert_eq!(trace.len(), step_count(horizon, h).unwrap() + 1);
        for (k, t) in trace.t.iter().enumerate() {
            prop_assert_eq!(*t, k as f64 * h);
        }
    }
}
