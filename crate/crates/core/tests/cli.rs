use std::fs;
use std::path::Path;
use std::process::Command;

use artdelay::cli::{EventsReport, Table};
use artdelay::lmi::{AffineLmi, Certificate};
use artdelay::sdp::FeasibilityOutcome;
use artdelay::search::SearchReport;

const TRIPLE: &str = r#"{
    "mode": "analyze",
    "plant": {"type": "lti", "A": [[0,1,0],[0,0,1],[0,0,0]], "B": [[0],[0],[1]], "C": [[1,0,0]]},
    "controller": {"gains": [[[-2e-4]], [[-0.06]], [[-0.342]]]},
    "parameters": {"h": 0.044, "q": [30, 60], "alpha": 1e-3}
}"#;

const PID: &str = r#"{
    "plant": {"type": "pid", "a1": 8.4, "a2": 0, "b": 35.71},
    "controller": {"kp": -10, "ki": -40, "kd": -0.65},
    "parameters": {"h": 0.004, "q": 7, "alpha": 5, "sigma": 0.009, "T": 2, "runs": 3, "lyapunov": true}
}"#;

fn run(config: &str, extra: &[&str], dir: &Path) -> (i32, String, String) {
    let cfg = dir.join("config.json");
    fs::write(&cfg, config).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_artdelay"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join("out").join(name)).unwrap()
}

fn assert_table_round_trips(text: &str) {
    let table = Table::from_csv(text).unwrap();
    assert_eq!(table.to_csv().unwrap(), text);
}

#[test]
fn analyze_feasible_writes_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, _) = run(TRIPLE, &[], dir.path());
    assert_eq!(code, 0, "{stdout}");
    assert!(stdout.contains("outcome: feasible"));
    let cert_text = read(dir.path(), "certificate.json");
    let cert = Certificate::from_json(&cert_text).unwrap();
    assert_eq!(cert.to_json().unwrap(), cert_text);
    let lmi_text = read(dir.path(), "lmi.json");
    let lmi = AffineLmi::from_json(&lmi_text).unwrap();
    assert_eq!(lmi.to_json().unwrap(), lmi_text);
    let outcome_text = read(dir.path(), "outcome.json");
    let outcome: FeasibilityOutcome = serde_json::from_str(&outcome_text).unwrap();
    assert_eq!(serde_json::to_string_pretty(&outcome).unwrap(), outcome_text);
    assert!(outcome.is_feasible());
}

#[test]
fn analyze_infeasible_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, _) = run(&TRIPLE.replace("0.044", "0.2"), &[], dir.path());
    assert_eq!(code, 2, "{stdout}");
    assert!(stdout.contains("minimized lambda_max ="), "{stdout}");
    assert!(stdout.contains("> 0"));
    assert!(!dir.path().join("out/certificate.json").exists());
}

#[test]
fn missing_h_reports_pointer() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, stderr) = run(&TRIPLE.replace("\"h\": 0.044, ", ""), &[], dir.path());
    assert_eq!(code, 1);
    assert!(stderr.contains("/parameters/h"), "{stderr}");
}

#[test]
fn unknown_example_lists_valid_ids() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_artdelay"))
        .args(["--example", "quadruple", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("triple-integrator") && stderr.contains("pid"), "{stderr}");
}

#[test]
fn synthesize_reports_gains() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, _) = run(TRIPLE, &["--mode", "synthesize"], dir.path());
    assert_eq!(code, 0);
    assert!(stdout.contains("K0 = [-0.264"), "{stdout}");
    let text = read(dir.path(), "controller.json");
    let ctrl: artdelay::synthesis::SampledController = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::to_string_pretty(&ctrl).unwrap(), text);
}

#[test]
fn search_writes_round_tripping_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TRIPLE.replace("\"alpha\": 1e-3", "\"alpha\": 1e-3, \"search\": {\"target\": \"h\", \"range\": [0.02, 0.2]}");
    let (code, stdout, _) = run(&cfg, &["--mode", "search"], dir.path());
    assert_eq!(code, 0, "{stdout}");
    let csv = read(dir.path(), "search.csv");
    assert_table_round_trips(&csv);
    let report: SearchReport = serde_json::from_str(&read(dir.path(), "search.json")).unwrap();
    assert!(report.best.unwrap() >= 0.044);
    Certificate::from_json(&read(dir.path(), "certificate.json")).unwrap();
}

#[test]
fn simulate_pid_with_lyapunov_column() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, _) = run(PID, &["--mode", "simulate", "--seed", "7"], dir.path());
    assert_eq!(code, 0, "{stdout}");
    let text = read(dir.path(), "events.json");
    let report = EventsReport::load(&dir.path().join("out/events.json")).unwrap();
    assert_eq!(serde_json::to_string_pretty(&report).unwrap(), text);
    assert_eq!(report.runs.len(), 3);
    assert_eq!(report.seed, Some(7));
    for r in &report.runs {
        assert_eq!(r.samples, 501);
        assert_eq!(r.workload.sensor_to_controller, 501);
        assert_eq!(r.lyapunov_monotone, Some(true));
    }
    let csv = read(dir.path(), "trace_00.csv");
    assert!(csv.starts_with("k,t,x1,x2,u,transmitted,V\n"));
    assert_table_round_trips(&csv);
    let table = Table::from_csv(&csv).unwrap();
    let v = table.column("V").unwrap();
    assert!(v[0].is_none() && v[7].is_some());
}

#[test]
fn simulate_lti_event_triggered_takes_omega_from_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TRIPLE
        .replace("0.044", "0.042")
        .replace("\"alpha\": 1e-3", "\"alpha\": 1e-3, \"sigma\": 2e-3, \"T\": 20, \"x0\": [0.5, -0.5, 0.5]");
    let (code, stdout, _) = run(&cfg, &["--mode", "simulate"], dir.path());
    assert_eq!(code, 0, "{stdout}");
    let report = EventsReport::load(&dir.path().join("out/events.json")).unwrap();
    assert_eq!(report.runs.len(), 1);
    assert!(report.runs[0].transmissions < report.runs[0].samples);
    assert_eq!(report.seed, None);
}

#[test]
fn reproduce_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let run_in = |d: &Path| {
        Command::new(env!("CARGO_BIN_EXE_artdelay"))
            .args(["--example", "triple-integrator", "--out"])
            .arg(d)
            .output()
            .unwrap()
    };
    let (ra, rb) = (run_in(a.path()), run_in(b.path()));
    assert_eq!(ra.status.code(), Some(0), "{}", String::from_utf8_lossy(&ra.stdout));
    assert_eq!(ra.stdout, rb.stdout);
    let csv = fs::read_to_string(a.path().join("reproduce.csv")).unwrap();
    assert_eq!(csv, fs::read_to_string(b.path().join("reproduce.csv")).unwrap());
    assert_table_round_trips(&csv);
}
