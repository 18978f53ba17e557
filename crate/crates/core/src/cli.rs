//! Batch front end behind the `artdelay` binary.
//!
//! Exit codes: 0 on success, 2 when the run completed but produced no
//! positive result (an infeasible LMI, an empty search, a failed reference
//! row), 1 on any error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Mode, RunConfig, SearchTarget, System};
use crate::error::{Error, Result};
use crate::instances::{self, Example, PidExample, TripleIntegrator, EXAMPLE_IDS};
use crate::linalg::{self, Mat};
use crate::lmi::{build_phi, build_phi_e, build_psi, AffineLmi, Certificate};
use crate::model::{decay_rate, DerivativeController, LtiPlant, PidController, PidPlant};
use crate::sdp::{solve_feasibility, verify_certificate, FeasibilityOutcome, FeasibilityProblem};
use crate::search::{self, DelayRule, LtiDesign, PidDesign, SearchReport, SweepReport};
use crate::sim::{self, EventLog, LyapunovDiagnostic, SimTrace, Workload, DEFAULT_SEED};
use crate::synthesis::{choose_delays, choose_pid_delay, map_gains, map_pid_gains, SampledController, SampledPidController};

const DEFAULT_RUNS: usize = 10;
const DEFAULT_SUBSTEPS: usize = 64;
const DECAY_TAIL: f64 = 0.5;

#[derive(Debug, Parser)]
#[command(name = "artdelay", version, about = "Delayed sampled-data controllers: gain mapping, LMI certificates, simulation")]
pub struct Args {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the mode given in the configuration.
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Seed for random initial conditions.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worked example for `reproduce`: triple-integrator or pid.
    #[arg(long)]
    pub example: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    NoResult,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Success => 0,
            Status::NoResult => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub status: Status,
    pub summary: String,
    pub files: Vec<PathBuf>,
}

/// A CSV table kept as strings so that files reload exactly as written.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(std::io::Error::other(e)))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        let header = r.headers().map_err(io)?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()).map_err(io))
            .collect::<Result<_>>()?;
        Ok(Self { header, rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv(&fs::read_to_string(path)?)
    }

    /// Column `name` parsed as numbers; empty cells become `None`.
    pub fn column(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let i = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidArgument(format!("no column {name}")))?;
        self.rows
            .iter()
            .map(|r| {
                let cell = r[i].trim();
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse::<f64>().map(Some).map_err(|e| Error::InvalidArgument(format!("{name}: {e}")))
                }
            })
            .collect()
    }
}

/// Per-run record in `events.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub x0: Vec<f64>,
    pub samples: usize,
    pub transmissions: usize,
    pub workload: Workload,
    pub decay_estimate: f64,
    pub lyapunov_monotone: Option<bool>,
    pub lyapunov_worst_increase: Option<f64>,
}

/// Contents of `events.json` written by `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventsReport {
    pub h: f64,
    pub sigma: f64,
    pub horizon: f64,
    pub seed: Option<u64>,
    pub runs: Vec<RunRecord>,
    pub mean_transmissions: f64,
    pub total_samples: usize,
    pub total_transmissions: usize,
}

impl EventsReport {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// One line of the `reproduce` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub name: String,
    pub computed: String,
    pub reference: String,
    pub pass: bool,
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, body)?;
        self.files.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.text(name, &serde_json::to_string_pretty(value)?)
    }

    fn table(&mut self, name: &str, table: &Table) -> Result<()> {
        self.text(name, &table.to_csv()?)
    }

    fn finish(mut self, status: Status, summary: String) -> Result<RunOutput> {
        self.text("summary.txt", &summary)?;
        Ok(RunOutput { status, summary, files: self.files })
    }
}

fn fmt_matrix(m: &Mat) -> String {
    let rows: Vec<String> = linalg::to_rows(m)
        .iter()
        .map(|r| r.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", "))
        .collect();
    format!("[{}]", rows.join("; "))
}

fn lti_controller(ideal: &DerivativeController, h: f64, q: Option<&Vec<u32>>) -> Result<SampledController> {
    let delays = match q {
        Some(q) => q.clone(),
        None => choose_delays(h, ideal.order())?,
    };
    map_gains(ideal, h, &delays)
}

fn pid_controller(ideal: &PidController, h: f64, q: Option<&Vec<u32>>, sigma: f64) -> Result<SampledPidController> {
    let q = match q {
        Some(q) => q[0],
        None => choose_pid_delay(h)?,
    };
    map_pid_gains(ideal, h, q)?.with_sigma(sigma)
}

fn describe_outcome(out: &mut String, outcome: &FeasibilityOutcome) {
    match outcome {
        FeasibilityOutcome::Feasible { certificate } => {
            let _ = writeln!(out, "outcome: feasible (LMI margin {:.3e})", certificate.margin);
        }
        FeasibilityOutcome::Infeasible { lambda_max, min_margin, iterations } => {
            let _ = writeln!(
                out,
                "outcome: infeasible; minimized lambda_max = {lambda_max:.3e} > 0 (normalized margin {min_margin:.3e}, {iterations} iterations)"
            );
        }
        FeasibilityOutcome::Inconclusive { reason, duality_measure, .. } => {
            let _ = writeln!(out, "outcome: inconclusive ({reason}; duality measure {duality_measure:.3e})");
        }
    }
}

fn solve_lmi(lmi: AffineLmi) -> Result<FeasibilityOutcome> {
    solve_feasibility(&FeasibilityProblem::new(lmi))
}

fn analyze(cfg: &RunConfig, w: &mut Writer) -> Result<(Status, String)> {
    let p = &cfg.parameters;
    let (h, alpha) = (p.h.expect("validated"), p.alpha.expect("validated"));
    let mut summary = String::new();
    let lmi = match cfg.system.as_ref().expect("validated") {
        System::Lti { plant, ideal } => {
            let ctrl = lti_controller(ideal, h, p.q.as_ref())?;
            let _ = writeln!(summary, "h = {h}, delays = {:?}, alpha = {alpha}", ctrl.delays());
            for (i, k) in ctrl.gains().iter().enumerate() {
                let _ = writeln!(summary, "K{i} = {}", fmt_matrix(k));
            }
            match p.sigma {
                Some(sigma) => build_phi_e(plant, &ctrl, alpha, sigma)?,
                None => build_phi(plant, &ctrl, alpha)?,
            }
        }
        System::Pid { plant, ideal } => {
            let ctrl = pid_controller(ideal, h, p.q.as_ref(), p.sigma.unwrap_or(0.0))?;
            let _ = writeln!(
                summary,
                "h = {h}, q = {}, sigma = {}, alpha = {alpha}\nkp = {:.6}, ki = {:.6}, kd = {:.6}",
                ctrl.q, ctrl.sigma, ctrl.kp, ctrl.ki, ctrl.kd
            );
            build_psi(plant, &ctrl, alpha)?
        }
    };
    let _ = writeln!(summary, "LMI {} of size {} in {} unknowns", lmi.label, lmi.dim(), lmi.layout().scalar_count());
    w.text("lmi.json", &lmi.to_json()?)?;
    let outcome = solve_lmi(lmi.clone())?;
    describe_outcome(&mut summary, &outcome);
    w.json("outcome.json", &outcome)?;
    let status = match outcome.certificate() {
        Some(cert) => {
            let report = verify_certificate(&lmi, cert)?;
            let _ = writeln!(
                summary,
                "verification: {} (lambda_max = {:.3e}, tolerance {:.3e})",
                if report.pass { "pass" } else { "fail" },
                report.lambda_max,
                report.tolerance
            );
            w.text("certificate.json", &cert.to_json()?)?;
            Status::Success
        }
        None => Status::NoResult,
    };
    Ok((status, summary))
}

fn synthesize(cfg: &RunConfig, w: &mut Writer) -> Result<(Status, String)> {
    let p = &cfg.parameters;
    let h = p.h.expect("validated");
    let mut summary = String::new();
    match cfg.system.as_ref().expect("validated") {
        System::Lti { ideal, .. } => {
            let ctrl = lti_controller(ideal, h, p.q.as_ref())?;
            let _ = writeln!(summary, "h = {h}, delays = {:?}", ctrl.delays());
            for (i, k) in ctrl.gains().iter().enumerate() {
                let _ = writeln!(summary, "K{i} = {}", fmt_matrix(k));
            }
            if ctrl.ill_conditioned() {
                let _ = writeln!(summary, "warning: relative degree test was ill-conditioned");
            }
            w.json("controller.json", &ctrl)?;
        }
        System::Pid { ideal, .. } => {
            let ctrl = pid_controller(ideal, h, p.q.as_ref(), p.sigma.unwrap_or(0.0))?;
            let _ = writeln!(summary, "h = {h}, q = {}\nkp = {:.6}, ki = {:.6}, kd = {:.6}", ctrl.q, ctrl.kp, ctrl.ki, ctrl.kd);
            w.json("controller.json", &ctrl)?;
        }
    }
    Ok((Status::Success, summary))
}

fn lti_design(plant: &LtiPlant, ideal: &DerivativeController, cfg: &RunConfig) -> LtiDesign {
    let p = &cfg.parameters;
    LtiDesign {
        plant: plant.clone(),
        ideal: ideal.clone(),
        alpha: p.alpha.expect("validated"),
        sigma: p.sigma,
        delays: p.q.clone().map_or(DelayRule::RuleBased, DelayRule::Fixed),
    }
}

fn pid_design(plant: &PidPlant, ideal: &PidController, cfg: &RunConfig) -> PidDesign {
    let p = &cfg.parameters;
    PidDesign {
        plant: *plant,
        ideal: *ideal,
        alpha: p.alpha.expect("validated"),
        sigma: p.sigma.unwrap_or(0.0),
        q: p.q.as_ref().map(|q| q[0]),
    }
}

fn probes_table(report: &SearchReport) -> Table {
    let mut t = Table::new(&[&report.parameter, "feasible", "status", "margin", "delays"]);
    for pr in &report.probes {
        let delays: Vec<String> = pr.delays.iter().map(u32::to_string).collect();
        t.push(vec![
            format!("{:e}", pr.value),
            pr.feasible.to_string(),
            pr.status.clone(),
            pr.margin.map_or(String::new(), |m| format!("{m:e}")),
            delays.join(" "),
        ]);
    }
    t
}

fn sweep_table(report: &SweepReport) -> Table {
    let mut t = Table::new(&["q", "best_h", "margin", "local_boundary"]);
    for r in &report.rows {
        t.push(vec![
            r.q.to_string(),
            r.best_h.map_or(String::new(), |h| format!("{h:e}")),
            r.margin.map_or(String::new(), |m| format!("{m:e}")),
            r.local_boundary.to_string(),
        ]);
    }
    t
}

fn search_mode(cfg: &RunConfig, w: &mut Writer) -> Result<(Status, String)> {
    let p = &cfg.parameters;
    let target = p.search.as_ref().expect("validated");
    let system = cfg.system.as_ref().expect("validated");
    let mut summary = String::new();
    if let SearchTarget::Q { q_range, h_range } = target {
        let System::Pid { plant, ideal } = system else { unreachable!("validated") };
        let report = search::sweep_q(&pid_design(plant, ideal, cfg), *q_range, *h_range)?;
        w.table("sweep.csv", &sweep_table(&report))?;
        w.json("sweep.json", &report)?;
        for r in &report.rows {
            let _ = writeln!(summary, "q = {:>3}: best h = {}", r.q, r.best_h.map_or("none".into(), |h| format!("{h:.4e}")));
        }
        return Ok(match report.best_row() {
            Some(row) => {
                let _ = writeln!(summary, "best q = {} with h = {:.4e}", row.q, row.best_h.unwrap_or(f64::NAN));
                if let Some(c) = &row.certificate {
                    w.text("certificate.json", &c.to_json()?)?;
                }
                (Status::Success, summary)
            }
            None => {
                let _ = writeln!(summary, "no q in the range is feasible anywhere in the sampling range");
                (Status::NoResult, summary)
            }
        });
    }
    let result = match (target, system) {
        (SearchTarget::H { range }, System::Lti { plant, ideal }) => search::max_h(&lti_design(plant, ideal, cfg), *range),
        (SearchTarget::H { range }, System::Pid { plant, ideal }) => search::max_h_pid(&pid_design(plant, ideal, cfg), *range),
        (SearchTarget::Sigma { range }, System::Lti { plant, ideal }) => {
            search::max_sigma(&lti_design(plant, ideal, cfg), p.h.expect("validated"), *range)
        }
        (SearchTarget::Sigma { range }, System::Pid { plant, ideal }) => {
            search::max_sigma_pid(&pid_design(plant, ideal, cfg), p.h.expect("validated"), *range)
        }
        (SearchTarget::Q { .. }, _) => unreachable!("handled above"),
    };
    let report = match result {
        Ok(r) => r,
        Err(Error::InfeasibleRange(v)) => {
            let _ = writeln!(summary, "infeasible already at the lower end {v:e}; no result");
            return Ok((Status::NoResult, summary));
        }
        Err(e) => return Err(e),
    };
    w.table("search.csv", &probes_table(&report))?;
    w.json("search.json", &report)?;
    for warning in &report.warnings {
        let _ = writeln!(summary, "warning: {warning}");
    }
    Ok(match (report.best, &report.certificate) {
        (Some(best), Some(cert)) => {
            let _ = writeln!(summary, "largest feasible {} = {best:.6e} after {} probes", report.parameter, report.probes.len());
            w.text("certificate.json", &cert.to_json()?)?;
            (Status::Success, summary)
        }
        _ => {
            let _ = writeln!(summary, "no feasible {} found", report.parameter);
            (Status::NoResult, summary)
        }
    })
}

struct SimRun {
    trace: SimTrace,
    log: EventLog,
    lyapunov: Option<LyapunovDiagnostic>,
}

fn simulate_mode(cfg: &RunConfig, seed: u64, w: &mut Writer) -> Result<(Status, String)> {
    let p = &cfg.parameters;
    let (h, horizon) = (p.h.expect("validated"), p.horizon.expect("validated"));
    let sigma = p.sigma.unwrap_or(0.0);
    let mut summary = String::new();
    let substeps = p.lyapunov.then(|| p.substeps.unwrap_or(DEFAULT_SUBSTEPS));
    let system = cfg.system.as_ref().expect("validated");
    let n = match system {
        System::Lti { plant, .. } => plant.states(),
        System::Pid { .. } => 2,
    };
    let (x0s, used_seed) = match &p.x0 {
        Some(x0) => (vec![x0.clone()], None),
        None => (sim::random_initial_states(n, p.runs.unwrap_or(DEFAULT_RUNS), seed), Some(seed)),
    };

    let runs: Vec<SimRun> = match system {
        System::Lti { plant, ideal } => {
            let ctrl = lti_controller(ideal, h, p.q.as_ref())?;
            let needs_cert = p.lyapunov || (sigma > 0.0 && p.omega.is_none());
            let cert = if needs_cert {
                let alpha = p.alpha.expect("validated");
                let lmi = if sigma > 0.0 { build_phi_e(plant, &ctrl, alpha, sigma)? } else { build_phi(plant, &ctrl, alpha)? };
                let outcome = solve_lmi(lmi)?;
                match outcome.certificate() {
                    Some(c) => Some(c.clone()),
                    None => {
                        describe_outcome(&mut summary, &outcome);
                        let _ = writeln!(summary, "no certificate: cannot take Omega or evaluate the functional");
                        return Ok((Status::NoResult, summary));
                    }
                }
            } else {
                None
            };
            let omega = match (&p.omega, &cert) {
                (Some(o), _) => o.clone(),
                (None, Some(c)) if sigma > 0.0 => c.get("Omega").cloned().expect("Φ_e certificates carry Omega"),
                _ => Mat::identity(plant.inputs(), plant.inputs()),
            };
            let _ = writeln!(summary, "h = {h}, delays = {:?}, sigma = {sigma}, T = {horizon}", ctrl.delays());
            let alpha = p.alpha.unwrap_or(0.0);
            x0s.par_iter()
                .map(|x0| {
                    let (trace, log) = sim::simulate_event_triggered(plant, &ctrl, sigma, &omega, x0, horizon, substeps)?;
                    let lyapunov = match (&cert, p.lyapunov) {
                        (Some(c), true) => Some(sim::lyapunov_lti(plant, &ctrl, c, alpha, &trace)?),
                        _ => None,
                    };
                    Ok(SimRun { trace, log, lyapunov })
                })
                .collect::<Result<_>>()?
        }
        System::Pid { plant, ideal } => {
            let ctrl = pid_controller(ideal, h, p.q.as_ref(), sigma)?;
            let cert = if p.lyapunov {
                let outcome = solve_lmi(build_psi(plant, &ctrl, p.alpha.expect("validated"))?)?;
                match outcome.certificate() {
                    Some(c) => Some(c.clone()),
                    None => {
                        describe_outcome(&mut summary, &outcome);
                        let _ = writeln!(summary, "no certificate: cannot evaluate the functional");
                        return Ok((Status::NoResult, summary));
                    }
                }
            } else {
                None
            };
            let _ = writeln!(summary, "h = {h}, q = {}, sigma = {sigma}, T = {horizon}", ctrl.q);
            let alpha = p.alpha.unwrap_or(0.0);
            x0s.par_iter()
                .map(|x0| {
                    let (trace, log) = sim::simulate_pid(plant, &ctrl, x0, horizon, substeps)?;
                    let lyapunov = match &cert {
                        Some(c) => Some(sim::lyapunov_pid(plant, &ctrl, c, alpha, &trace)?),
                        None => None,
                    };
                    Ok(SimRun { trace, log, lyapunov })
                })
                .collect::<Result<_>>()?
        }
    };

    let mut records = Vec::with_capacity(runs.len());
    for (i, (run, x0)) in runs.iter().zip(&x0s).enumerate() {
        let mut trace = run.trace.clone();
        trace.seed = used_seed;
        let csv = trace.to_csv(Some(&run.log), run.lyapunov.as_ref());
        w.text(&format!("trace_{i:02}.csv"), &csv)?;
        let decay = sim::estimate_decay_rate(&trace, DECAY_TAIL)?;
        records.push(RunRecord {
            x0: x0.clone(),
            samples: trace.len(),
            transmissions: run.log.transmissions(),
            workload: run.log.workload(),
            decay_estimate: decay,
            lyapunov_monotone: run.lyapunov.as_ref().map(|d| d.is_monotone(1e-6)),
            lyapunov_worst_increase: run.lyapunov.as_ref().map(LyapunovDiagnostic::worst_increase),
        });
        let _ = writeln!(
            summary,
            "run {i:02}: {} samples, {} transmissions, decay estimate {decay:.4}{}",
            trace.len(),
            run.log.transmissions(),
            run.lyapunov.as_ref().map_or(String::new(), |d| format!(
                ", functional {}",
                if d.is_monotone(1e-6) { "non-increasing" } else { "INCREASES" }
            ))
        );
    }
    let total_transmissions: usize = records.iter().map(|r| r.transmissions).sum();
    let report = EventsReport {
        h,
        sigma,
        horizon,
        seed: used_seed,
        mean_transmissions: total_transmissions as f64 / records.len() as f64,
        total_samples: records.iter().map(|r| r.samples).sum(),
        total_transmissions,
        runs: records,
    };
    let _ = writeln!(summary, "mean transmissions: {:.1}", report.mean_transmissions);
    w.json("events.json", &report)?;
    Ok((Status::Success, summary))
}

fn row(name: &str, computed: String, reference: String, pass: bool) -> ReferenceRow {
    ReferenceRow { name: name.to_string(), computed, reference, pass }
}

fn feasible_row(name: &str, lmi: AffineLmi) -> Result<(ReferenceRow, Option<Certificate>)> {
    let outcome = solve_lmi(lmi.clone())?;
    let verified = match outcome.certificate() {
        Some(c) => verify_certificate(&lmi, c)?.pass,
        None => false,
    };
    Ok((row(name, outcome.status().to_string(), "feasible".into(), verified), outcome.certificate().cloned()))
}

fn reproduce_triple(ex: &TripleIntegrator, seed: u64) -> Result<Vec<ReferenceRow>> {
    let mut rows = Vec::new();
    let ctrl = map_gains(&ex.ideal, ex.h, &ex.delays)?;
    for (i, (k, r)) in ctrl.gains().iter().zip(ex.reference_gains).enumerate() {
        let v = k[(0, 0)];
        rows.push(row(&format!("K{i}"), format!("{v:.4}"), format!("{r} ± 0.001"), (v - r).abs() <= 1e-3));
    }
    rows.push(feasible_row(&format!("Phi feasible (h = {})", ex.h), build_phi(&ex.plant, &ctrl, ex.alpha)?)?.0);
    let ctrl_e = map_gains(&ex.ideal, ex.h_event, &ex.delays)?;
    let (r, cert) =
        feasible_row(&format!("Phi_e feasible (h = {}, sigma = {})", ex.h_event, ex.sigma), build_phi_e(&ex.plant, &ctrl_e, ex.alpha, ex.sigma)?)?;
    rows.push(r);
    let design = LtiDesign {
        plant: ex.plant.clone(),
        ideal: ex.ideal.clone(),
        alpha: ex.alpha,
        sigma: Some(0.0),
        delays: DelayRule::Fixed(ex.delays.to_vec()),
    };
    let best = search::max_sigma(&design, ex.h_event, (0.0, 0.05))?.best.unwrap_or(f64::NAN);
    rows.push(row("largest sigma at h_event", format!("{best:.3e}"), format!(">= {}", ex.sigma), best >= ex.sigma));
    let periodic = sim::simulate_sampled(&ex.plant, &ctrl, &[1.0, -1.0, 1.0], ex.horizon, None)?;
    rows.push(row(
        "periodic transmissions",
        periodic.len().to_string(),
        ex.reference_samples.to_string(),
        periodic.len() == ex.reference_samples,
    ));
    let Some(cert) = cert else {
        rows.push(row("mean event-triggered transmissions", "no certificate".into(), ex.reference_mean_events.to_string(), false));
        return Ok(rows);
    };
    let omega = cert.get("Omega").cloned().expect("Φ_e certificates carry Omega");
    let (batch, _) = sim::batch_event_triggered(&ex.plant, &ctrl_e, ex.sigma, &omega, ex.horizon, seed, DEFAULT_RUNS)?;
    push_workload_rows(
        &mut rows,
        batch.mean_transmissions,
        batch.samples,
        ex.reference_samples,
        ex.reference_mean_events,
        ex.events_band,
        ex.reference_actuator_reduction,
        ex.reference_total_reduction,
    );
    Ok(rows)
}

#[allow(clippy::too_many_arguments)]
fn push_workload_rows(
    rows: &mut Vec<ReferenceRow>,
    mean: f64,
    samples: usize,
    baseline: usize,
    reference_mean: f64,
    band: (f64, f64),
    actuator: f64,
    total: f64,
) {
    rows.push(row(
        "mean event-triggered transmissions",
        format!("{mean:.1}"),
        format!("{reference_mean} in [{}, {}]", band.0, band.1),
        (band.0..=band.1).contains(&mean),
    ));
    let act = 1.0 - mean / baseline as f64;
    let threshold = actuator - 0.05;
    rows.push(row("actuator network reduction", format!("{:.1}%", 100.0 * act), format!(">= {:.0}%", 100.0 * threshold), act >= threshold));
    let tot = 1.0 - (samples as f64 + mean) / (2 * baseline) as f64;
    let threshold = total - 0.05;
    rows.push(row("total network reduction", format!("{:.1}%", 100.0 * tot), format!(">= {:.0}%", 100.0 * threshold), tot >= threshold));
}

fn reproduce_pid(ex: &PidExample, seed: u64) -> Result<Vec<ReferenceRow>> {
    let mut rows = Vec::new();
    let alpha_prime = decay_rate(&ex.plant.ideal_closed_loop(&ex.ideal))?;
    rows.push(row(
        "continuous decay rate",
        format!("{alpha_prime:.3}"),
        format!("{} ± 0.05", ex.reference_decay_rate),
        (alpha_prime - ex.reference_decay_rate).abs() <= 0.05,
    ));
    let mut certs = Vec::new();
    for ((h, sigma), reference) in [(ex.h, 0.0), (ex.h_event, ex.sigma)].into_iter().zip(ex.reference_gains) {
        let ctrl = map_pid_gains(&ex.ideal, h, ex.q)?.with_sigma(sigma)?;
        for (name, v, r) in [("kp", ctrl.kp, reference.0), ("ki", ctrl.ki, reference.1), ("kd", ctrl.kd, reference.2)] {
            rows.push(row(&format!("{name} (h = {h})"), format!("{v:.4}"), format!("{r} ± 0.005"), (v - r).abs() <= 5e-3));
        }
        let (r, cert) = feasible_row(&format!("Psi feasible (h = {h}, sigma = {sigma})"), build_psi(&ex.plant, &ctrl, ex.alpha)?)?;
        rows.push(r);
        certs.push(cert);
    }
    let design = PidDesign { plant: ex.plant, ideal: ex.ideal, alpha: ex.alpha, sigma: 0.0, q: Some(ex.q) };
    let best = search::max_sigma_pid(&design, ex.h_event, (0.0, 0.1))?.best.unwrap_or(f64::NAN);
    rows.push(row("largest sigma at h_event", format!("{best:.3e}"), format!(">= {}", ex.sigma), best >= ex.sigma));
    let periodic = map_pid_gains(&ex.ideal, ex.h, ex.q)?;
    let (trace, log) = sim::simulate_pid(&ex.plant, &periodic, &[1.0, -1.0], ex.horizon, None)?;
    rows.push(row(
        "periodic transmissions",
        log.transmissions().to_string(),
        ex.reference_samples.to_string(),
        trace.len() == ex.reference_samples && log.transmissions() == ex.reference_samples,
    ));
    let event = map_pid_gains(&ex.ideal, ex.h_event, ex.q)?.with_sigma(ex.sigma)?;
    let (batch, _) = sim::batch_pid(&ex.plant, &event, ex.horizon, seed, DEFAULT_RUNS)?;
    push_workload_rows(
        &mut rows,
        batch.mean_transmissions,
        batch.samples,
        ex.reference_samples,
        ex.reference_mean_events,
        ex.events_band,
        ex.reference_actuator_reduction,
        ex.reference_total_reduction,
    );
    Ok(rows)
}

/// Runs the worked example `id` end to end and compares against the reference figures.
pub fn reproduce(id: &str, seed: u64) -> Result<Vec<ReferenceRow>> {
    match instances::by_id(id) {
        Some(Example::TripleIntegrator(ex)) => reproduce_triple(&ex, seed),
        Some(Example::Pid(ex)) => reproduce_pid(&ex, seed),
        None => Err(Error::InvalidArgument(format!("unknown example {id:?}; valid ids: {}", EXAMPLE_IDS.join(", ")))),
    }
}

pub fn render_rows(rows: &[ReferenceRow]) -> String {
    let w0 = rows.iter().map(|r| r.name.chars().count()).max().unwrap_or(0).max(4);
    let w1 = rows.iter().map(|r| r.computed.chars().count()).max().unwrap_or(0).max(8);
    let w2 = rows.iter().map(|r| r.reference.chars().count()).max().unwrap_or(0).max(9);
    let mut out = format!("{:<w0$}  {:<w1$}  {:<w2$}  result\n", "item", "computed", "reference");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<w0$}  {:<w1$}  {:<w2$}  {}",
            r.name,
            r.computed,
            r.reference,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
    out
}

fn reproduce_mode(id: &str, seed: u64, w: &mut Writer) -> Result<(Status, String)> {
    let rows = reproduce(id, seed)?;
    let mut table = Table::new(&["item", "computed", "reference", "pass"]);
    for r in &rows {
        table.push(vec![r.name.clone(), r.computed.clone(), r.reference.clone(), r.pass.to_string()]);
    }
    w.table("reproduce.csv", &table)?;
    let summary = format!("example {id}, seed {seed}\n{}", render_rows(&rows));
    let status = if rows.iter().all(|r| r.pass) { Status::Success } else { Status::NoResult };
    Ok((status, summary))
}

/// Runs `cfg` in `mode`, writing artifacts to `out`.
pub fn run(cfg: &RunConfig, mode: Mode, seed: u64, out: &Path) -> Result<RunOutput> {
    cfg.validate_for(mode)?;
    let mut w = Writer::new(out)?;
    let (status, summary) = match mode {
        Mode::Analyze => analyze(cfg, &mut w)?,
        Mode::Synthesize => synthesize(cfg, &mut w)?,
        Mode::Search => search_mode(cfg, &mut w)?,
        Mode::Simulate => simulate_mode(cfg, seed, &mut w)?,
        Mode::Reproduce => reproduce_mode(cfg.example.as_deref().expect("validated"), seed, &mut w)?,
    };
    w.finish(status, summary)
}

fn resolve(args: &Args) -> Result<(RunConfig, Mode, u64, PathBuf)> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if args.example.is_some() {
        cfg.example = args.example.clone();
    }
    let mode = match (args.mode, cfg.mode) {
        (Some(m), _) | (None, Some(m)) => m,
        (None, None) if cfg.example.is_some() => Mode::Reproduce,
        (None, None) => return Err(Error::Config { pointer: "/mode".into(), message: "no mode given (use --mode or \"mode\")".into() }),
    };
    let seed = args.seed.or(cfg.parameters.seed).unwrap_or(DEFAULT_SEED);
    let out = args.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("artdelay-out"));
    Ok((cfg, mode, seed, out))
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with(args: Args) -> i32 {
    let result = resolve(&args).and_then(|(cfg, mode, seed, out)| run(&cfg, mode, seed, &out));
    match result {
        Ok(output) => {
            print!("{}", output.summary);
            output.status.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
