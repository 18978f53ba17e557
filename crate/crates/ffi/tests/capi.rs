use std::ffi::{CStr, CString};
use std::ptr;

use artdelay_ffi::*;

const A: [f64; 9] = [0., 1., 0., 0., 0., 1., 0., 0., 0.];
const B: [f64; 3] = [0., 0., 1.];
const C: [f64; 3] = [1., 0., 0.];
const IDEAL: [f64; 3] = [-2e-4, -0.06, -0.342];

fn last_error() -> Option<String> {
    let p = ad_last_error_message();
    if p.is_null() {
        return None;
    }
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { ad_string_free(p) };
    Some(s)
}

fn triple(h: f64) -> (*mut AdLtiPlant, *mut AdController) {
    let mut plant = ptr::null_mut();
    let mut ctrl = ptr::null_mut();
    unsafe {
        assert_eq!(ad_lti_plant_new(A.as_ptr(), B.as_ptr(), C.as_ptr(), 3, 1, 1, &mut plant), AdStatus::Ok);
        let q = [30u32, 60];
        assert_eq!(ad_map_gains(IDEAL.as_ptr(), 3, 1, 1, h, q.as_ptr(), &mut ctrl), AdStatus::Ok);
    }
    (plant, ctrl)
}

#[test]
fn relative_degree_and_gains() {
    let (plant, ctrl) = triple(0.044);
    unsafe {
        let mut r = 0;
        assert_eq!(ad_relative_degree(plant, 10, &mut r), AdStatus::Ok);
        assert_eq!(r, 3);
        assert_eq!(ad_controller_order(ctrl), 3);
        let mut k0 = [0.0];
        assert_eq!(ad_controller_gain(ctrl, 0, k0.as_mut_ptr(), 1), AdStatus::Ok);
        assert!((k0[0] + 0.265).abs() < 5e-3, "{}", k0[0]);
        let mut q = [0u32; 2];
        assert_eq!(ad_controller_delays(ctrl, q.as_mut_ptr(), 2), AdStatus::Ok);
        assert_eq!(q, [30, 60]);
        assert_eq!(ad_controller_gain(ctrl, 5, k0.as_mut_ptr(), 1), AdStatus::InvalidArgument);
        assert!(last_error().unwrap().contains("no gain 5"));
        assert_eq!(ad_controller_delays(ctrl, q.as_mut_ptr(), 1), AdStatus::BufferTooSmall);
        ad_controller_free(ctrl);
        ad_lti_plant_free(plant);
    }
}

#[test]
fn analyze_returns_certificate_handle() {
    let (plant, ctrl) = triple(0.044);
    unsafe {
        let mut feasible = false;
        let mut cert = ptr::null_mut();
        assert_eq!(ad_analyze_phi(plant, ctrl, 1e-3, &mut feasible, &mut cert), AdStatus::Ok);
        assert!(feasible && !cert.is_null());
        assert!(last_error().is_none());
        let json = ad_certificate_to_json(cert);
        assert!(!json.is_null());
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        ad_string_free(json);
        assert!(artdelay::lmi::Certificate::from_json(&text).is_ok());
        let name = CString::new("P").unwrap();
        let mut p = [0.0; 9];
        let mut dim = 0;
        assert_eq!(ad_certificate_variable(cert, name.as_ptr(), p.as_mut_ptr(), 9, &mut dim), AdStatus::Ok);
        assert_eq!(dim, 3);
        assert!(p[0] > 0.0);
        ad_certificate_free(cert);
        ad_controller_free(ctrl);
        ad_lti_plant_free(plant);
    }
}

#[test]
fn infeasible_leaves_null_certificate() {
    let (plant, ctrl) = triple(0.2);
    unsafe {
        let mut feasible = true;
        let mut cert = ptr::null_mut();
        assert_eq!(ad_analyze_phi(plant, ctrl, 1e-3, &mut feasible, &mut cert), AdStatus::Ok);
        assert!(!feasible && cert.is_null());
        ad_controller_free(ctrl);
        ad_lti_plant_free(plant);
    }
}

#[test]
fn event_triggered_simulation_counts() {
    let (plant, ctrl) = triple(0.042);
    unsafe {
        let mut feasible = false;
        let mut cert = ptr::null_mut();
        assert_eq!(ad_analyze_phi_e(plant, ctrl, 1e-3, 2e-3, &mut feasible, &mut cert), AdStatus::Ok);
        assert!(feasible);
        let name = CString::new("Omega").unwrap();
        let (mut omega, mut dim) = ([0.0], 0);
        assert_eq!(ad_certificate_variable(cert, name.as_ptr(), omega.as_mut_ptr(), 1, &mut dim), AdStatus::Ok);
        let x0 = [0.5, -0.5, 0.5];
        let (mut samples, mut sent) = (0, 0);
        let mut last = [0.0; 3];
        let status = ad_simulate_event_triggered(
            plant, ctrl, 2e-3, omega.as_ptr(), x0.as_ptr(), 20.0, &mut samples, &mut sent, last.as_mut_ptr(),
        );
        assert_eq!(status, AdStatus::Ok);
        assert_eq!(samples, artdelay::sim::step_count(20.0, 0.042).unwrap() + 1);
        assert!(sent > 0 && sent < samples);
        assert!(last.iter().all(|v| v.is_finite()));
        ad_certificate_free(cert);
        ad_controller_free(ctrl);
        ad_lti_plant_free(plant);
    }
}

#[test]
fn pid_round_trip() {
    unsafe {
        let mut ctrl = ptr::null_mut();
        assert_eq!(ad_map_pid_gains(-10.0, -40.0, -0.65, 4e-3, 7, 9e-3, &mut ctrl), AdStatus::Ok);
        let (mut kp, mut ki, mut kd, mut q) = (0.0, 0.0, 0.0, 0);
        assert_eq!(ad_pid_controller_gains(ctrl, &mut kp, &mut ki, &mut kd, &mut q), AdStatus::Ok);
        assert_eq!((ki, q), (-40.0, 7));
        assert!((kp + kd + 10.0).abs() < 1e-12);
        let mut feasible = false;
        assert_eq!(ad_analyze_psi(8.4, 0.0, 35.71, ctrl, 5.0, &mut feasible, ptr::null_mut()), AdStatus::Ok);
        assert!(feasible);
        let x0 = [0.3, -0.2];
        let (mut samples, mut sent) = (0, 0);
        assert_eq!(ad_simulate_pid(8.4, 0.0, 35.71, ctrl, x0.as_ptr(), 1.0, &mut samples, &mut sent), AdStatus::Ok);
        assert_eq!(samples, 251);
        assert!(sent <= samples);
        ad_pid_controller_free(ctrl);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut plant = ptr::null_mut();
        assert_eq!(ad_lti_plant_new(ptr::null(), B.as_ptr(), C.as_ptr(), 3, 1, 1, &mut plant), AdStatus::NullPointer);
        assert!(plant.is_null());
        assert!(last_error().unwrap().contains("A is null"));
        let bad = [f64::NAN; 9];
        assert_eq!(ad_lti_plant_new(bad.as_ptr(), B.as_ptr(), C.as_ptr(), 3, 1, 1, &mut plant), AdStatus::NonFinite);
        let mut r = 0;
        assert_eq!(ad_relative_degree(ptr::null(), 3, &mut r), AdStatus::NullPointer);
        let mut ctrl = ptr::null_mut();
        assert_eq!(ad_map_pid_gains(-10.0, -40.0, -0.65, -1.0, 7, 0.0, &mut ctrl), AdStatus::InvalidArgument);
        assert!(ctrl.is_null());
        assert_eq!(ad_controller_order(ptr::null()), 0);
        ad_lti_plant_free(ptr::null_mut());
        ad_string_free(ptr::null_mut());
    }
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(ad_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_exports() {
    let header = include_str!("../include/artdelay.h");
    for name in [
        "ad_version", "ad_last_error_message", "ad_string_free", "ad_lti_plant_new", "ad_lti_plant_free",
        "ad_relative_degree", "ad_map_gains", "ad_controller_free", "ad_controller_order", "ad_controller_gain",
        "ad_controller_delays", "ad_analyze_phi", "ad_analyze_phi_e", "ad_certificate_free",
        "ad_certificate_to_json", "ad_certificate_variable", "ad_map_pid_gains", "ad_pid_controller_free",
        "ad_pid_controller_gains", "ad_analyze_psi", "ad_simulate_event_triggered", "ad_simulate_pid",
        "typedef struct AdLtiPlant AdLtiPlant", "AD_STATUS_OK = 0", "AD_STATUS_PANIC",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}
