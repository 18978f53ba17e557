use super::*;
use crate::lmi::{build_phi, build_phi_e, build_psi, DecisionLayout, LmiBlock, Positivity, VarShape};
use crate::model::{DerivativeController, LtiPlant, PidController, PidPlant};
use crate::synthesis::{map_gains, map_pid_gains};

fn triple_phi(h: f64) -> AffineLmi {
    let plant = LtiPlant::integrator_chain(3);
    let ideal = DerivativeController::scalar(&[-2e-4, -0.06, -0.342]).unwrap();
    build_phi(&plant, &map_gains(&ideal, h, &[30, 60]).unwrap(), 1e-3).unwrap()
}

fn solve(lmi: AffineLmi) -> FeasibilityOutcome {
    solve_feasibility(&FeasibilityProblem::new(lmi)).unwrap()
}

/// A·P + P·Aᵀ... in the form A P + Pᵀ A ≼ 0 for a Hurwitz 2×2 matrix.
fn lyapunov(a: &Mat) -> AffineLmi {
    let mut layout = DecisionLayout::new();
    layout.push("P", VarShape::Symmetric(2), Positivity::PositiveDefinite).unwrap();
    let a = a.clone();
    AffineLmi::from_assembler("lyap", vec![LmiBlock { name: "x".into(), size: 2 }], layout, move |v| {
        &v[0] * &a + a.transpose() * &v[0]
    })
    .unwrap()
}

#[test]
fn lyapunov_hurwitz_is_feasible() {
    let out = solve(lyapunov(&Mat::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0])));
    let cert = out.certificate().expect("feasible");
    assert!(verify_certificate(&lyapunov(&Mat::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0])), cert).unwrap().pass);
}

#[test]
fn lyapunov_unstable_is_infeasible() {
    let out = solve(lyapunov(&Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 2.0])));
    match out {
        FeasibilityOutcome::Infeasible { min_margin, .. } => assert!(min_margin > 0.0),
        other => panic!("expected infeasible, got {other:?}"),
    }
}

#[test]
fn triple_integrator_phi_feasible() {
    let lmi = triple_phi(0.044);
    let out = solve(lmi.clone());
    let cert = out.certificate().unwrap_or_else(|| panic!("expected feasible, got {out:?}"));
    assert!(verify_certificate(&lmi, cert).unwrap().pass);
}

#[test]
fn triple_integrator_phi_infeasible_at_large_h() {
    match solve(triple_phi(0.2)) {
        FeasibilityOutcome::Infeasible { min_margin, .. } => assert!(min_margin > 0.0),
        other => panic!("expected infeasible, got {other:?}"),
    }
}

#[test]
fn triple_integrator_phi_e_feasible() {
    let plant = LtiPlant::integrator_chain(3);
    let ideal = DerivativeController::scalar(&[-2e-4, -0.06, -0.342]).unwrap();
    let lmi = build_phi_e(&plant, &map_gains(&ideal, 0.042, &[30, 60]).unwrap(), 1e-3, 2e-3).unwrap();
    let out = solve(lmi.clone());
    let cert = out.certificate().unwrap_or_else(|| panic!("expected feasible, got {out:?}"));
    assert!(verify_certificate(&lmi, cert).unwrap().pass);
}

fn pid_psi(h: f64, sigma: f64) -> AffineLmi {
    let plant = PidPlant::new(8.4, 0.0, 35.71).unwrap();
    let ctrl = map_pid_gains(&PidController::new(-10.0, -40.0, -0.65).unwrap(), h, 7).unwrap();
    build_psi(&plant, &ctrl.with_sigma(sigma).unwrap(), 5.0).unwrap()
}

#[test]
fn pid_psi_feasible_points() {
    for (h, sigma) in [(4.7e-3, 0.0), (4e-3, 9e-3)] {
        let lmi = pid_psi(h, sigma);
        let out = solve(lmi.clone());
        let cert = out.certificate().unwrap_or_else(|| panic!("expected feasible at {h}, {sigma}: {out:?}"));
        assert!(verify_certificate(&lmi, cert).unwrap().pass);
    }
}

#[test]
fn zero_and_flipped_certificates_fail() {
    let lmi = triple_phi(0.044);
    let out = solve(lmi.clone());
    let cert = out.certificate().unwrap().clone();
    let mut zero_p = cert.clone();
    zero_p.values.insert("P".into(), Mat::zeros(3, 3));
    assert!(!verify_certificate(&lmi, &zero_p).unwrap().pass);
    let mut flipped = cert.clone();
    let p = flipped.values["P"].clone();
    flipped.values.insert("P".into(), -p);
    assert!(!verify_certificate(&lmi, &flipped).unwrap().pass);
    for c in [1e-3, 7.0, 1e4] {
        assert!(verify_certificate(&lmi, &cert.scaled(c)).unwrap().pass);
    }
}

#[test]
fn solves_are_deterministic() {
    let a = solve(triple_phi(0.044));
    let b = solve(triple_phi(0.044));
    assert_eq!(a, b);
}

