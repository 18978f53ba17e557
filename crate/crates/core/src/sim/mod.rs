//! Closed-loop simulation with exact inter-sample propagation.
//!
//! Between sampling instants the input is constant, so the state is advanced
//! by the zero-order-hold pair `(e^{Ah}, ∫e^{As}ds·B)`. Sampled states are
//! always produced by the full-step propagator; the optional dense grid is
//! computed separately and only feeds the Lyapunov diagnostics.

mod lyapunov;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use lyapunov::{lyapunov_lti, lyapunov_pid, LyapunovDiagnostic, LyapunovSample};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::model::{LtiPlant, PidPlant};
use crate::synthesis::{validate_sigma, SampledController, SampledPidController};

/// Seed used by the acceptance batches.
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseOutput {
    /// Grid points per sampling interval.
    pub substeps: usize,
    /// States at `t_j + m·h/substeps`, flattened so that interval `j` spans
    /// indices `j·substeps ..= (j+1)·substeps`.
    pub states: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub label: String,
    pub h: f64,
    pub seed: Option<u64>,
    /// `t_k = k·h`, computed as a product.
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    /// Input applied on `[t_k, t_{k+1})`.
    pub u: Vec<Vec<f64>>,
    pub dense: Option<DenseOutput>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// CSV with header `k,t,x1..xn,u1..um,transmitted[,V]`.
    pub fn to_csv(&self, log: Option<&EventLog>, v: Option<&LyapunovDiagnostic>) -> String {
        let n = self.x.first().map_or(0, Vec::len);
        let m = self.u.first().map_or(0, Vec::len);
        let mut out = String::from("k,t");
        for i in 1..=n {
            out += &format!(",x{i}");
        }
        if m == 1 {
            out += ",u";
        } else {
            for i in 1..=m {
                out += &format!(",u{i}");
            }
        }
        out += ",transmitted";
        if v.is_some() {
            out += ",V";
        }
        out.push('\n');
        for k in 0..self.len() {
            out += &format!("{k},{:e}", self.t[k]);
            for xi in &self.x[k] {
                out += &format!(",{xi:e}");
            }
            for ui in &self.u[k] {
                out += &format!(",{ui:e}");
            }
            let sent = log.map_or(true, |l| l.transmitted[k]);
            out += if sent { ",1" } else { ",0" };
            if let Some(diag) = v {
                match diag.samples.iter().find(|s| s.k == k) {
                    Some(s) => out += &format!(",{:e}", s.v),
                    None => out += ",",
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub sigma: f64,
    pub transmitted: Vec<bool>,
    /// Freshly computed control `u(t_k)`.
    pub u: Vec<Vec<f64>>,
    /// `e_k = û_k − u(t_k)`.
    pub e: Vec<Vec<f64>>,
    /// Transmissions up to and including step `k`.
    pub count: Vec<usize>,
}

impl EventLog {
    fn new(sigma: f64) -> Self {
        Self { sigma, transmitted: Vec::new(), u: Vec::new(), e: Vec::new(), count: Vec::new() }
    }

    pub fn transmissions(&self) -> usize {
        self.count.last().copied().unwrap_or(0)
    }

    fn push(&mut self, sent: bool, u: &[f64], applied: &[f64]) {
        let prev = self.transmissions();
        self.transmitted.push(sent);
        self.e.push(applied.iter().zip(u).map(|(a, b)| a - b).collect());
        self.u.push(u.to_vec());
        self.count.push(prev + usize::from(sent));
    }

    /// Network accounting: every sample crosses the sensor network, only
    /// transmitted controls cross the actuator network.
    pub fn workload(&self) -> Workload {
        Workload { sensor_to_controller: self.transmitted.len(), controller_to_actuator: self.transmissions() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workload {
    pub sensor_to_controller: usize,
    pub controller_to_actuator: usize,
}

/// `⌊T/h⌋`, tolerant of `T/h` landing a hair below an integer.
pub fn step_count(horizon: f64, h: f64) -> Result<usize> {
    if !(horizon.is_finite() && h.is_finite() && h > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon {horizon} and step {h} must be finite, h > 0")));
    }
    if horizon < h {
        return Err(Error::InvalidArgument(format!("horizon {horizon} is shorter than one step {h}")));
    }
    let ratio = horizon / h;
    let nearest = ratio.round();
    let steps = if (ratio - nearest).abs() <= 1e-9 * ratio { nearest } else { ratio.floor() };
    if (steps * h - horizon).abs() > 1e-12 * horizon {
        log::debug!("horizon {horizon} is not a multiple of h = {h}; simulating {steps} steps");
    }
    Ok(steps as usize)
}

struct Propagator {
    phi: Mat,
    gamma: Mat,
    fine: Option<(usize, Mat, Mat)>,
}

impl Propagator {
    fn new(a: &Mat, b: &Mat, h: f64, substeps: Option<usize>) -> Result<Self> {
        let (phi, gamma) = linalg::zoh(a, b, h);
        linalg::ensure_finite(&phi, "state transition")?;
        let fine = match substeps {
            Some(n) if n >= 2 => {
                let (p, g) = linalg::zoh(a, b, h / n as f64);
                Some((n, p, g))
            }
            Some(n) => return Err(Error::InvalidArgument(format!("dense output needs at least 2 substeps, got {n}"))),
            None => None,
        };
        Ok(Self { phi, gamma, fine })
    }
}

fn column(v: &[f64]) -> Mat {
    Mat::from_column_slice(v.len(), 1, v)
}

/// Runs `steps` intervals; `control(k, x_k)` returns the input held on `[t_k, t_{k+1})`.
#[allow(clippy::too_many_arguments)]
fn run<F>(
    label: &str,
    plant_a: &Mat,
    plant_b: &Mat,
    x0: &[f64],
    h: f64,
    steps: usize,
    substeps: Option<usize>,
    mut control: F,
) -> Result<SimTrace>
where
    F: FnMut(usize, &[f64]) -> Vec<f64>,
{
    let n = plant_a.nrows();
    if x0.len() != n {
        return Err(Error::Dimension(format!("initial state has {} entries, plant has {n}", x0.len())));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial state".into()));
    }
    let prop = Propagator::new(plant_a, plant_b, h, substeps)?;
    let mut t = Vec::with_capacity(steps + 1);
    let mut xs = Vec::with_capacity(steps + 1);
    let mut us = Vec::with_capacity(steps + 1);
    let mut dense = prop.fine.as_ref().map(|(n_sub, _, _)| DenseOutput {
        substeps: *n_sub,
        states: Vec::with_capacity(steps * n_sub + 1),
    });
    let mut x = column(x0);
    for k in 0..=steps {
        let xk: Vec<f64> = x.iter().copied().collect();
        let u = control(k, &xk);
        t.push(k as f64 * h);
        xs.push(xk.clone());
        us.push(u.clone());
        if k == steps {
            if let Some(d) = dense.as_mut() {
                d.states.push(xk);
            }
            break;
        }
        let uc = column(&u);
        if let (Some(d), Some((n_sub, p, g))) = (dense.as_mut(), prop.fine.as_ref()) {
            let mut z = x.clone();
            d.states.push(xk);
            for _ in 1..*n_sub {
                z = p * &z + g * &uc;
                d.states.push(z.iter().copied().collect());
            }
        }
        x = &prop.phi * &x + &prop.gamma * &uc;
    }
    Ok(SimTrace { label: label.to_string(), h, seed: None, t, x: xs, u: us, dense })
}

/// Delay buffer lookup `y(t_k − q h)`, zero before the start.
fn delayed<'a>(outputs: &'a [Vec<f64>], k: usize, q: u32, zero: &'a [f64]) -> &'a [f64] {
    match k.checked_sub(q as usize) {
        Some(j) => &outputs[j],
        None => zero,
    }
}

fn lti_control(ctrl: &SampledController, outputs: &[Vec<f64>], k: usize) -> Vec<f64> {
    let l = ctrl.outputs();
    let zero = vec![0.0; l];
    let mut u = &ctrl.gains()[0] * column(&outputs[k]);
    for (ki, &qi) in ctrl.gains()[1..].iter().zip(ctrl.delays()) {
        u += ki * column(delayed(outputs, k, qi, &zero));
    }
    u.iter().copied().collect()
}

fn check_lti(plant: &LtiPlant, ctrl: &SampledController) -> Result<()> {
    if ctrl.inputs() != plant.inputs() || ctrl.outputs() != plant.outputs() {
        return Err(Error::Dimension(format!(
            "controller gains are {}x{}, plant needs {}x{}",
            ctrl.inputs(),
            ctrl.outputs(),
            plant.inputs(),
            plant.outputs()
        )));
    }
    Ok(())
}

/// Periodic sampled-data loop `u = K_0 y(t_k) + Σ K_i y(t_k − q_i h)`.
pub fn simulate_sampled(
    plant: &LtiPlant,
    ctrl: &SampledController,
    x0: &[f64],
    horizon: f64,
    substeps: Option<usize>,
) -> Result<SimTrace> {
    check_lti(plant, ctrl)?;
    let steps = step_count(horizon, ctrl.h())?;
    let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
    run("sampled", plant.a(), plant.b(), x0, ctrl.h(), steps, substeps, |k, x| {
        outputs.push((plant.c() * column(x)).iter().copied().collect());
        lti_control(ctrl, &outputs, k)
    })
}

fn quad(v: &[f64], omega: &Mat) -> f64 {
    let c = column(v);
    (c.transpose() * omega * c)[(0, 0)]
}

/// Event-triggered loop: `û_k = u(t_k)` when
/// `(u(t_k) − û_{k−1})ᵀΩ(u(t_k) − û_{k−1}) > σ·u(t_k)ᵀΩu(t_k)`, else `û_{k−1}`.
pub fn simulate_event_triggered(
    plant: &LtiPlant,
    ctrl: &SampledController,
    sigma: f64,
    omega: &Mat,
    x0: &[f64],
    horizon: f64,
    substeps: Option<usize>,
) -> Result<(SimTrace, EventLog)> {
    check_lti(plant, ctrl)?;
    validate_sigma(sigma)?;
    let m = plant.inputs();
    if omega.shape() != (m, m) {
        return Err(Error::Dimension(format!("Ω must be {m}x{m}")));
    }
    if linalg::lambda_min(omega) <= 0.0 {
        return Err(Error::InvalidArgument("Ω must be positive definite".into()));
    }
    let steps = step_count(horizon, ctrl.h())?;
    let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
    let mut log = EventLog::new(sigma);
    let mut held: Vec<f64> = Vec::new();
    let trace = run("event-triggered", plant.a(), plant.b(), x0, ctrl.h(), steps, substeps, |k, x| {
        outputs.push((plant.c() * column(x)).iter().copied().collect());
        let u = lti_control(ctrl, &outputs, k);
        let sent = k == 0 || {
            let diff: Vec<f64> = u.iter().zip(&held).map(|(a, b)| a - b).collect();
            quad(&diff, omega) > sigma * quad(&u, omega)
        };
        if sent {
            held = u.clone();
        }
        log.push(sent, &u, &held);
        held.clone()
    })?;
    Ok((trace, log))
}

/// Event-triggered sampled PID loop on the two-state plant `x = (y, ẏ)`.
///
/// `u(t_k) = k_p y_k + k_i h Σ_{j<k} y_j + k_d y_{k−q}` with `y_{k−q} = 0` for `k < q`,
/// and the scalar trigger `(u(t_k) − û_{k−1})² > σ u(t_k)²`.
pub fn simulate_pid(
    plant: &PidPlant,
    ctrl: &SampledPidController,
    x0: &[f64],
    horizon: f64,
    substeps: Option<usize>,
) -> Result<(SimTrace, EventLog)> {
    ctrl.validate()?;
    let ss = plant.state_space();
    let steps = step_count(horizon, ctrl.h)?;
    let mut outputs: Vec<f64> = Vec::with_capacity(steps + 1);
    let mut integral = 0.0;
    let mut log = EventLog::new(ctrl.sigma);
    let mut held = 0.0;
    let trace = run("pid", ss.a(), ss.b(), x0, ctrl.h, steps, substeps, |k, x| {
        let y = x[0];
        outputs.push(y);
        let y_delayed = k.checked_sub(ctrl.q as usize).map_or(0.0, |j| outputs[j]);
        let u = ctrl.kp * y + ctrl.ki * integral + ctrl.kd * y_delayed;
        integral += ctrl.h * y;
        let sent = k == 0 || (u - held).powi(2) > ctrl.sigma * u * u;
        if sent {
            held = u;
        }
        log.push(sent, &[u], &[held]);
        vec![held]
    })?;
    Ok((trace, log))
}

/// Initial states drawn uniformly from the cube `‖x‖_∞ ≤ 1`.
pub fn random_initial_states(n: usize, runs: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..runs).map(|_| (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub seed: u64,
    pub initial_states: Vec<Vec<f64>>,
    pub transmissions: Vec<usize>,
    pub mean_transmissions: f64,
    /// Samples per run, `⌊T/h⌋ + 1`.
    pub samples: usize,
}

impl BatchSummary {
    fn from_logs(seed: u64, initial_states: Vec<Vec<f64>>, logs: &[EventLog]) -> Self {
        let transmissions: Vec<usize> = logs.iter().map(EventLog::transmissions).collect();
        let mean = transmissions.iter().sum::<usize>() as f64 / transmissions.len().max(1) as f64;
        let samples = logs.first().map_or(0, |l| l.transmitted.len());
        Self { seed, initial_states, transmissions, mean_transmissions: mean, samples }
    }

    /// Fractional saving on the actuator network against a periodic loop
    /// that transmits `baseline` times.
    pub fn actuator_reduction(&self, baseline: usize) -> f64 {
        1.0 - self.mean_transmissions / baseline as f64
    }

    /// Fractional saving on both networks together against a periodic loop
    /// that uses `baseline` samples on each.
    pub fn total_reduction(&self, baseline: usize) -> f64 {
        1.0 - (self.samples as f64 + self.mean_transmissions) / (2 * baseline) as f64
    }
}

/// Event-triggered LTI runs from seeded random initial states, in parallel.
pub fn batch_event_triggered(
    plant: &LtiPlant,
    ctrl: &SampledController,
    sigma: f64,
    omega: &Mat,
    horizon: f64,
    seed: u64,
    runs: usize,
) -> Result<(BatchSummary, Vec<SimTrace>)> {
    let x0s = random_initial_states(plant.states(), runs, seed);
    let results: Vec<(SimTrace, EventLog)> = x0s
        .par_iter()
        .map(|x0| simulate_event_triggered(plant, ctrl, sigma, omega, x0, horizon, None))
        .collect::<Result<_>>()?;
    let logs: Vec<EventLog> = results.iter().map(|(_, l)| l.clone()).collect();
    let traces = results.into_iter().map(|(mut t, _)| {
        t.seed = Some(seed);
        t
    });
    Ok((BatchSummary::from_logs(seed, x0s, &logs), traces.collect()))
}

/// Event-triggered PID runs from seeded random `(y, ẏ)`, in parallel.
pub fn batch_pid(
    plant: &PidPlant,
    ctrl: &SampledPidController,
    horizon: f64,
    seed: u64,
    runs: usize,
) -> Result<(BatchSummary, Vec<SimTrace>)> {
    let x0s = random_initial_states(2, runs, seed);
    let results: Vec<(SimTrace, EventLog)> =
        x0s.par_iter().map(|x0| simulate_pid(plant, ctrl, x0, horizon, None)).collect::<Result<_>>()?;
    let logs: Vec<EventLog> = results.iter().map(|(_, l)| l.clone()).collect();
    let traces = results.into_iter().map(|(mut t, _)| {
        t.seed = Some(seed);
        t
    });
    Ok((BatchSummary::from_logs(seed, x0s, &logs), traces.collect()))
}

/// Negated least-squares slope of `ln‖x(t_k)‖` over the last `tail_fraction` of the trace.
///
/// Returns `+∞` when the state reaches exact zero inside the window.
pub fn estimate_decay_rate(trace: &SimTrace, tail_fraction: f64) -> Result<f64> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("tail fraction {tail_fraction} must lie in (0, 1]")));
    }
    let len = trace.len();
    let window = ((len as f64 * tail_fraction).ceil() as usize).clamp(2.min(len), len);
    if window < 2 {
        return Err(Error::InvalidArgument("trace too short for a slope".into()));
    }
    let start = len - window;
    let mut pts = Vec::with_capacity(window);
    for k in start..len {
        let norm = trace.x[k].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(f64::INFINITY);
        }
        pts.push((trace.t[k], norm.ln()));
    }
    let nf = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    Ok(-sxy / sxx)
}

#[cfg(test)]
mod tests;
