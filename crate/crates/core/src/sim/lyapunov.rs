//! Numerical evaluation of the Lyapunov–Krasovskii functionals at sampling instants.
//!
//! At `t = t_k` the Wirtinger-compensated parts vanish (their integration
//! ranges collapse), so only the quadratic term and the history integrals
//! over `[t_k − q_i h, t_k]` remain. The integrands depend on `ẋ`, which jumps
//! at every sampling instant, so each interval gets its own composite Simpson
//! rule on the dense grid.

use serde::{Deserialize, Serialize};

use super::SimTrace;
use crate::error::{Error, Result};
use crate::lmi::Certificate;
use crate::linalg::Mat;
use crate::model::{LtiPlant, PidPlant};
use crate::synthesis::{SampledController, SampledPidController};

/// Relative change between full and half grid resolution that triggers a warning.
const REFINEMENT_WARNING: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSample {
    pub k: usize,
    pub t: f64,
    pub v: f64,
    /// `e^{2α t_k} V(t_k)`.
    pub weighted: f64,
    /// `(name, value)` pairs; the Wirtinger parts are reported even though they are zero at `t_k`.
    pub components: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovDiagnostic {
    pub alpha: f64,
    pub substeps: usize,
    pub samples: Vec<LyapunovSample>,
    /// Largest relative change of `V` when the grid is halved.
    pub refinement_change: f64,
    pub warnings: Vec<String>,
}

impl LyapunovDiagnostic {
    /// Worst relative increase `W_{k+1}/W_k − 1` of the weighted functional.
    pub fn worst_increase(&self) -> f64 {
        self.samples
            .windows(2)
            .filter(|w| w[0].weighted > 0.0)
            .map(|w| w[1].weighted / w[0].weighted - 1.0)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Whether `e^{2αt_k}V(t_k)` never grows by more than `slack` relative.
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.samples.windows(2).all(|w| w[1].weighted <= w[0].weighted * (1.0 + slack))
    }

    pub fn components_nonnegative(&self) -> bool {
        self.samples.iter().all(|s| s.components.iter().all(|(_, v)| *v >= 0.0))
    }
}

/// Dense grid view with per-interval Simpson quadrature.
struct Grid<'a> {
    trace: &'a SimTrace,
    substeps: usize,
    h: f64,
}

impl<'a> Grid<'a> {
    fn new(trace: &'a SimTrace, min_substeps: usize) -> Result<Self> {
        let dense = trace
            .dense
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("Lyapunov evaluation needs dense output".into()))?;
        if dense.substeps < min_substeps || dense.substeps % 4 != 0 {
            return Err(Error::InvalidArgument(format!(
                "dense grid needs a multiple of 4 and at least {min_substeps} substeps per interval, got {}",
                dense.substeps
            )));
        }
        if dense.states.len() != (trace.len() - 1) * dense.substeps + 1 {
            return Err(Error::Dimension("dense grid length does not match the trace".into()));
        }
        Ok(Self { trace, substeps: dense.substeps, h: trace.h })
    }

    fn node(&self, j: usize, m: usize) -> &[f64] {
        &self.trace.dense.as_ref().expect("checked in new").states[j * self.substeps + m]
    }

    /// Integrand values at every node, interval by interval; interval `j` owns
    /// `substeps + 1` entries so that both one-sided limits at `t_j` are kept.
    fn tabulate<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(usize, &[f64]) -> f64,
    {
        let intervals = self.trace.len() - 1;
        let mut out = Vec::with_capacity(intervals * (self.substeps + 1));
        for j in 0..intervals {
            for m in 0..=self.substeps {
                out.push(f(j, self.node(j, m)));
            }
        }
        out
    }

    /// Composite Simpson over interval `j` using every `stride`-th node.
    fn simpson<F>(&self, j: usize, stride: usize, table: &[f64], weight: F) -> f64
    where
        F: Fn(f64) -> f64,
    {
        let panels = self.substeps / stride;
        let ds = self.h / panels as f64;
        let base = j * (self.substeps + 1);
        let mut acc = 0.0;
        for p in 0..=panels {
            let m = p * stride;
            let c = if p == 0 || p == panels {
                1.0
            } else if p % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += c * weight(p as f64 * ds) * table[base + m];
        }
        acc * ds / 3.0
    }
}

fn quad_form(v: &Mat, m: &Mat) -> f64 {
    (v.transpose() * m * v)[(0, 0)]
}

fn col(x: &[f64]) -> Mat {
    Mat::from_column_slice(x.len(), 1, x)
}

fn cert_matrix<'c>(cert: &'c Certificate, name: &str) -> Result<&'c Mat> {
    cert.get(name).ok_or_else(|| Error::LayoutMismatch(format!("certificate has no variable {name}")))
}

/// History term `Σ_j ∫_{t_j}^{t_{j+1}} e^{−2α(t_k−s)} ρ(s − t_k + qh) f(s) ds`
/// over the `q` intervals before `t_k`, with `f` read from a tabulation.
fn history(grid: &Grid, k: usize, q: usize, alpha: f64, stride: usize, rho: &dyn Fn(f64) -> f64, table: &[f64]) -> f64 {
    let h = grid.h;
    let mut total = 0.0;
    for j in k - q..k {
        // offset of t_j from the window start t_k − qh
        let start = (j + q - k) as f64 * h;
        let end_gap = (k - j) as f64 * h;
        total += grid.simpson(j, stride, table, |tau| (-2.0 * alpha * (end_gap - tau)).exp() * rho(start + tau));
    }
    total
}

struct Evaluated {
    v: f64,
    components: Vec<(String, f64)>,
}

fn assemble(
    trace: &SimTrace,
    alpha: f64,
    first_k: usize,
    grid: &Grid,
    eval: &dyn Fn(usize, usize) -> Evaluated,
) -> LyapunovDiagnostic {
    let mut samples = Vec::new();
    let mut refinement_change: f64 = 0.0;
    for k in first_k..trace.len() {
        let full = eval(k, 1);
        let half = eval(k, 2);
        if full.v > 0.0 {
            refinement_change = refinement_change.max((full.v - half.v).abs() / full.v);
        }
        let t = trace.t[k];
        samples.push(LyapunovSample { k, t, v: full.v, weighted: full.v * (2.0 * alpha * t).exp(), components: full.components });
    }
    let mut warnings = Vec::new();
    if refinement_change > REFINEMENT_WARNING {
        let msg = format!("grid too coarse: halving the resolution changes V by {:.2}%", 100.0 * refinement_change);
        log::warn!("{msg}");
        warnings.push(msg);
    }
    LyapunovDiagnostic { alpha, substeps: grid.substeps, samples, refinement_change, warnings }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("decay rate {alpha} must be finite and nonnegative")))
    }
}

/// Functional `V_0 + V_δ0 + V_δ + V_κ` for the (event-triggered) LTI loop.
///
/// Evaluation starts at the first instant whose delay window lies entirely
/// in `t ≥ 0`; before that the zero history makes `y` jump at `t = 0`.
pub fn lyapunov_lti(
    plant: &LtiPlant,
    ctrl: &SampledController,
    cert: &Certificate,
    alpha: f64,
    trace: &SimTrace,
) -> Result<LyapunovDiagnostic> {
    check_alpha(alpha)?;
    let grid = Grid::new(trace, 50)?;
    if (trace.h - ctrl.h()).abs() > 1e-15 * ctrl.h() {
        return Err(Error::InvalidArgument("trace and controller use different sampling periods".into()));
    }
    let r = ctrl.order();
    let p = cert_matrix(cert, "P")?.clone();
    let mut w = Vec::with_capacity(r - 1);
    let mut rr = Vec::with_capacity(r - 1);
    for i in 1..r {
        let ki = &ctrl.gains()[i];
        let wi = cert_matrix(cert, &format!("W{i}"))?;
        let ri = cert_matrix(cert, &format!("R{i}"))?;
        w.push(ki.transpose() * wi * ki);
        rr.push(ki.transpose() * ri * ki);
    }
    if p.nrows() != plant.states() {
        return Err(Error::LayoutMismatch("certificate P does not match the plant".into()));
    }
    let (a, b, c) = (plant.a(), plant.b(), plant.c());
    let c_r = plant.c_a_pow(r - 1);
    let h = ctrl.h();
    let xdot = |j: usize, x: &[f64]| a * col(x) + b * col(&trace.u[j]);
    let weight_delta = h * h * (2.0 * alpha * h).exp();
    let q_max = *ctrl.delays().iter().max().unwrap_or(&0) as usize;

    let delta_tables: Vec<Vec<f64>> =
        w.iter().map(|wi| grid.tabulate(|j, x| quad_form(&(c * xdot(j, x)), wi))).collect();
    let kappa_tables: Vec<Vec<f64>> =
        rr.iter().map(|ri| grid.tabulate(|j, x| quad_form(&(&c_r * xdot(j, x)), ri))).collect();

    let eval = |k: usize, stride: usize| -> Evaluated {
        let v0 = quad_form(&col(&trace.x[k]), &p);
        let mut vd = 0.0;
        let mut vk = 0.0;
        for (i, &qi) in ctrl.delays().iter().enumerate() {
            let q = qi as usize;
            vd += weight_delta * history(&grid, k, q, alpha, stride, &|_| 1.0, &delta_tables[i]);
            vk += history(&grid, k, q, alpha, stride, &|s| s.powi(r as i32), &kappa_tables[i]);
        }
        Evaluated {
            v: v0 + vd + vk,
            components: vec![("V0".into(), v0), ("Vdelta0".into(), 0.0), ("Vdelta".into(), vd), ("Vkappa".into(), vk)],
        }
    };
    Ok(assemble(trace, alpha, q_max, &grid, &eval))
}

/// Functional `V_0 + V_v + V_δ + V_κ` for the sampled PID loop, in the state
/// `(y, ẏ, x_3)` with `x_3(t_k) = h Σ_{j<k} y(t_j)`.
pub fn lyapunov_pid(
    plant: &PidPlant,
    ctrl: &SampledPidController,
    cert: &Certificate,
    alpha: f64,
    trace: &SimTrace,
) -> Result<LyapunovDiagnostic> {
    check_alpha(alpha)?;
    ctrl.validate()?;
    let grid = Grid::new(trace, 50)?;
    if (trace.h - ctrl.h).abs() > 1e-15 * ctrl.h {
        return Err(Error::InvalidArgument("trace and controller use different sampling periods".into()));
    }
    let p = cert_matrix(cert, "P")?.clone();
    if p.shape() != (3, 3) {
        return Err(Error::LayoutMismatch("PID certificate needs a 3x3 P".into()));
    }
    let w = cert.scalar("W").ok_or_else(|| Error::LayoutMismatch("certificate has no scalar W".into()))?;
    let r = cert.scalar("R").ok_or_else(|| Error::LayoutMismatch("certificate has no scalar R".into()))?;
    let (h, q, kd) = (ctrl.h, ctrl.q as usize, ctrl.kd);
    let (a1, a2, b) = (plant.a1, plant.a2, plant.b);
    // Same accumulation as the controller, so x_3 is the integral it actually used.
    let mut x3 = Vec::with_capacity(trace.len());
    let mut integral = 0.0;
    for x in &trace.x {
        x3.push(integral);
        integral += h * x[0];
    }
    let weight_delta = w * kd * kd * h * h * (2.0 * alpha * h).exp();
    let weight_kappa = r * kd * kd;

    let ydot_table = grid.tabulate(|_, x| x[1] * x[1]);
    let ydd_table = grid.tabulate(|j, x| (-a1 * x[1] - a2 * x[0] + b * trace.u[j][0]).powi(2));

    let eval = |k: usize, stride: usize| -> Evaluated {
        let xk = col(&[trace.x[k][0], trace.x[k][1], x3[k]]);
        let v0 = quad_form(&xk, &p);
        let vd = weight_delta * history(&grid, k, q, alpha, stride, &|_| 1.0, &ydot_table);
        let vk = weight_kappa * history(&grid, k, q, alpha, stride, &|s| s * s, &ydd_table);
        Evaluated {
            v: v0 + vd + vk,
            components: vec![("V0".into(), v0), ("Vv".into(), 0.0), ("Vdelta".into(), vd), ("Vkappa".into(), vk)],
        }
    };
    Ok(assemble(trace, alpha, q, &grid, &eval))
}
