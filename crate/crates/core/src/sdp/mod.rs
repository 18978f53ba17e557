//! Feasibility of a single affine LMI `F(x) ≼ 0` with positivity side constraints.
//!
//! The solver minimises a margin `t` over
//!
//! ```text
//! F(x) ≼ tI,   w_j V_j(x) ≽ 0 for every constrained unknown,
//! 1 ≤ w_0 tr V_0(x) ≤ 2,   Σ_j w_j tr V_j(x) ≤ cap
//! ```
//!
//! after dropping identically zero rows and equilibrating `F` symmetrically.
//! The weights `w_j` are the RMS Frobenius norms of each unknown's coefficient
//! matrices and `V_0` is the leading unknown of the layout (the Lyapunov
//! matrix). The trace constraints keep the problem bounded; `t < 0` then means
//! a point with `F(x) ≺ 0` exists. Anchoring only the Lyapunov matrix matters:
//! multipliers such as `Ω` or `ω` alone can make the LMI semidefinite, which
//! would pin the optimum at `t = 0`. Since the builders produce homogeneous
//! maps, an interior point is rescaled so that positivity floors and the LMI
//! margin hold with room to spare.

mod ipm;
mod verify;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use verify::{verify_certificate, VariableCheck, VerificationReport, LMI_SLACK, PD_FLOOR};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::lmi::{AffineLmi, Certificate, CertificateDiagnostics};
use ipm::{BlockSdp, IpmSettings};

/// Upper bound on the weighted trace of all constrained unknowns together.
const TRACE_CAP: f64 = 1e3;
const EQUILIBRATION_PASSES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub max_iterations: usize,
    /// Duality measure at which the margin is considered converged.
    pub gap_tolerance: f64,
    /// `μ` in `F ≼ −μI` is this factor times `1 + ‖F_0‖`.
    pub margin_factor: f64,
    /// `ε` in `V ≽ εI`.
    pub pd_floor: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { max_iterations: 500, gap_tolerance: 1e-10, margin_factor: 1e-9, pd_floor: PD_FLOOR }
    }
}

#[derive(Debug, Clone)]
pub struct FeasibilityProblem {
    lmi: AffineLmi,
    pub settings: SolverSettings,
}

impl FeasibilityProblem {
    pub fn new(lmi: AffineLmi) -> Self {
        Self { lmi, settings: SolverSettings::default() }
    }

    pub fn with_settings(lmi: AffineLmi, settings: SolverSettings) -> Self {
        Self { lmi, settings }
    }

    pub fn lmi(&self) -> &AffineLmi {
        &self.lmi
    }

    /// `μ = margin_factor · (1 + ‖F_0‖)`.
    pub fn margin(&self) -> f64 {
        self.settings.margin_factor * (1.0 + linalg::norm2(self.lmi.constant()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FeasibilityOutcome {
    Feasible {
        certificate: Certificate,
    },
    Infeasible {
        /// Smallest normalised margin `t` reached.
        min_margin: f64,
        /// `λ_max(F(x))` at the minimiser, in the variables' own units.
        lambda_max: f64,
        iterations: usize,
    },
    Inconclusive {
        min_margin: f64,
        duality_measure: f64,
        iterations: usize,
        reason: String,
    },
}

impl FeasibilityOutcome {
    pub fn is_feasible(&self) -> bool {
        matches!(self, FeasibilityOutcome::Feasible { .. })
    }

    pub fn certificate(&self) -> Option<&Certificate> {
        match self {
            FeasibilityOutcome::Feasible { certificate } => Some(certificate),
            _ => None,
        }
    }

    pub fn status(&self) -> &'static str {
        match self {
            FeasibilityOutcome::Feasible { .. } => "feasible",
            FeasibilityOutcome::Infeasible { .. } => "infeasible",
            FeasibilityOutcome::Inconclusive { .. } => "inconclusive",
        }
    }
}

/// Rows (and columns) that vanish in the constant and in every coefficient.
fn active_rows(lmi: &AffineLmi) -> Vec<usize> {
    (0..lmi.dim())
        .filter(|&i| std::iter::once(lmi.constant()).chain(lmi.coefficients()).any(|f| f.row(i).iter().any(|v| *v != 0.0)))
        .collect()
}

fn restrict(m: &Mat, rows: &[usize]) -> Mat {
    Mat::from_fn(rows.len(), rows.len(), |i, j| m[(rows[i], rows[j])])
}

/// One positivity block: an unknown's matrix `V_j`, weighted by `w_j`.
struct PositivityBlock {
    dim: usize,
    offset: usize,
    weight: f64,
    floor: f64,
}

struct Reduced {
    rows: Vec<usize>,
    constant: Mat,
    coefficients: Vec<Mat>,
    original: Vec<Mat>,
    original_constant: Mat,
    positivity: Vec<PositivityBlock>,
    homogeneous: bool,
}

impl Reduced {
    fn new(problem: &FeasibilityProblem) -> Self {
        let lmi = &problem.lmi;
        let rows = active_rows(lmi);
        let original: Vec<Mat> = lmi.coefficients().iter().map(|f| restrict(f, &rows)).collect();
        let original_constant = restrict(lmi.constant(), &rows);
        let vars = lmi.layout().vars();
        let weights = |coefficients: &[Mat]| -> Vec<f64> {
            vars.iter()
                .map(|v| {
                    let count = v.shape.scalar_count();
                    let sq: f64 = coefficients[v.offset..v.offset + count].iter().map(|f| f.norm_squared()).sum();
                    let rms = (sq / count as f64).sqrt();
                    if rms > 0.0 {
                        rms
                    } else {
                        1.0
                    }
                })
                .collect()
        };

        // Ruiz-style symmetric equilibration D·F·D. Congruence by a positive
        // diagonal leaves the sign pattern of F unchanged but evens out blocks
        // whose natural scales differ by orders of magnitude.
        let nt = rows.len();
        let mut d = vec![1.0; nt];
        let mut coefficients = original.clone();
        let mut constant = original_constant.clone();
        for _ in 0..EQUILIBRATION_PASSES {
            let w = weights(&coefficients);
            let mut magnitude = constant.map(f64::abs);
            for v in vars.iter().zip(&w) {
                let (var, wj) = v;
                for f in &coefficients[var.offset..var.offset + var.shape.scalar_count()] {
                    magnitude += f.map(|e| (e / wj).abs());
                }
            }
            for (i, di) in d.iter_mut().enumerate() {
                let row_max = magnitude.row(i).amax();
                if row_max > 0.0 {
                    *di /= row_max.sqrt();
                }
            }
            let scale = |m: &Mat| Mat::from_fn(nt, nt, |i, j| m[(i, j)] * d[i] * d[j]);
            coefficients = original.iter().map(scale).collect();
            constant = scale(&original_constant);
        }

        let w = weights(&coefficients);
        let positivity = vars
            .iter()
            .zip(w)
            .map(|(v, weight)| PositivityBlock {
                dim: v.shape.dim(),
                offset: v.offset,
                weight,
                floor: match v.positivity {
                    crate::lmi::Positivity::PositiveDefinite => problem.settings.pd_floor,
                    crate::lmi::Positivity::Nonnegative => 0.0,
                },
            })
            .collect();
        let homogeneous = constant.iter().all(|v| *v == 0.0);
        Self { rows, constant, coefficients, original, original_constant, positivity, homogeneous }
    }

    fn evaluate_original(&self, x: &[f64]) -> Mat {
        let mut out = self.original_constant.clone();
        for (xk, fk) in x.iter().zip(&self.original) {
            out += fk * *xk;
        }
        out
    }

    fn evaluate(&self, x: &[f64]) -> Mat {
        let mut out = self.constant.clone();
        for (xk, fk) in x.iter().zip(&self.coefficients) {
            out += fk * *xk;
        }
        out
    }

    fn var_value(&self, b: &PositivityBlock, x: &[f64]) -> Mat {
        let mut m = Mat::zeros(b.dim, b.dim);
        let mut k = b.offset;
        for i in 0..b.dim {
            for j in i..b.dim {
                m[(i, j)] = x[k];
                m[(j, i)] = x[k];
                k += 1;
            }
        }
        m
    }

    /// Basis matrix of scalar `k` inside block `b` (`E_ii` or `E_ij + E_ji`).
    fn basis(b: &PositivityBlock, k: usize) -> Mat {
        let mut idx = b.offset;
        let mut m = Mat::zeros(b.dim, b.dim);
        for i in 0..b.dim {
            for j in i..b.dim {
                if idx == k {
                    m[(i, j)] = 1.0;
                    m[(j, i)] = 1.0;
                    return m;
                }
                idx += 1;
            }
        }
        m
    }

    /// Dual-form SDP over `y = (x, t)` with objective `max −t`.
    fn sdp(&self) -> (BlockSdp, Vec<f64>) {
        let p = self.coefficients.len();
        let nt = self.rows.len();
        let mut sizes = vec![nt];
        sizes.extend(self.positivity.iter().map(|b| b.dim));
        sizes.extend([1, 1, 1]);
        let nb = sizes.len();
        let (lo, hi, cap) = (nb - 3, nb - 2, nb - 1);
        let mut c: Vec<Mat> = sizes.iter().map(|&s| Mat::zeros(s, s)).collect();
        c[0] = -&self.constant;
        c[lo][(0, 0)] = -1.0;
        c[hi][(0, 0)] = 2.0;
        c[cap][(0, 0)] = TRACE_CAP;
        let mut a: Vec<Vec<Option<Mat>>> = vec![vec![None; nb]; p + 1];
        for (k, fk) in self.coefficients.iter().enumerate() {
            if nt > 0 {
                a[k][0] = Some(fk.clone());
            }
        }
        for (j, b) in self.positivity.iter().enumerate() {
            for (k, ak) in a.iter_mut().enumerate().skip(b.offset).take(b.dim * (b.dim + 1) / 2) {
                let e = Self::basis(b, k);
                let tr = e.trace() * b.weight;
                ak[1 + j] = Some(-e * b.weight);
                if tr != 0.0 {
                    ak[cap] = Some(Mat::from_element(1, 1, tr));
                    if j == 0 {
                        ak[lo] = Some(Mat::from_element(1, 1, -tr));
                        ak[hi] = Some(Mat::from_element(1, 1, tr));
                    }
                }
            }
        }
        if nt > 0 {
            a[p][0] = Some(-Mat::identity(nt, nt));
        }
        let mut b = DVector::zeros(p + 1);
        b[p] = -1.0;

        // Column scaling: each A_i to unit Frobenius norm.
        let scales: Vec<f64> = a
            .iter()
            .map(|ai| {
                let s = ai.iter().flatten().map(|m| m.norm_squared()).sum::<f64>().sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        for (ai, s) in a.iter_mut().zip(&scales) {
            for m in ai.iter_mut().flatten() {
                *m /= *s;
            }
        }
        for (bi, s) in b.iter_mut().zip(&scales) {
            *bi /= *s;
        }
        (BlockSdp { sizes, c, a, b }, scales)
    }

    /// Strictly feasible start: `V_j = c·I/w_j` on the trace band midpoint, `t` above `λ_max(F)`.
    fn start(&self) -> Vec<f64> {
        let p = self.coefficients.len();
        let lead = self.positivity.first().map_or(1, |b| b.dim);
        let c = 1.5 / lead as f64;
        let mut x = vec![0.0; p];
        for b in &self.positivity {
            let mut k = b.offset;
            for i in 0..b.dim {
                for j in i..b.dim {
                    if i == j {
                        x[k] = c / b.weight;
                    }
                    k += 1;
                }
            }
        }
        let lmax = if self.rows.is_empty() { 0.0 } else { linalg::lambda_max(&self.evaluate(&x)) };
        x.push(lmax.max(0.0) + 1.0);
        x
    }

    /// Smallest weighted and unweighted eigenvalue over the positivity blocks.
    fn positivity_floor(&self, x: &[f64]) -> (f64, bool) {
        let mut scale_needed = 0.0f64;
        let mut ok = true;
        for b in &self.positivity {
            let lmin = linalg::lambda_min(&self.var_value(b, x));
            if lmin <= 0.0 {
                ok = false;
            } else if b.floor > 0.0 {
                scale_needed = scale_needed.max(b.floor / lmin);
            }
        }
        (scale_needed, ok)
    }

    /// Turn a strictly feasible solver iterate into a certificate meeting the margins, if possible.
    fn accept(&self, x: &[f64], mu: f64) -> Option<(Vec<f64>, f64)> {
        let (floor_scale, ok) = self.positivity_floor(x);
        if !ok {
            return None;
        }
        let mut lmax = f64::NEG_INFINITY;
        if !self.rows.is_empty() {
            // Sign decided on the equilibrated matrix, where eigenvalue error
            // is small relative to every block.
            let scaled = self.evaluate(x);
            let noise = 64.0 * f64::EPSILON * scaled.nrows() as f64 * linalg::fro(&scaled);
            if linalg::lambda_max(&scaled) > -noise {
                log::trace!("candidate rejected: equilibrated margin within rounding");
                return None;
            }
            lmax = linalg::lambda_max(&self.evaluate_original(x));
            if lmax >= 0.0 {
                log::trace!("candidate rejected: λ_max = {lmax:e} in original units");
                return None;
            }
        }
        let rescale = if self.homogeneous {
            // Positive scaling preserves feasibility; give every margin a factor 10 of room.
            let mut c = (10.0 * floor_scale).max(1.0);
            if lmax.is_finite() {
                c = c.max(10.0 * mu / -lmax);
            }
            c
        } else {
            1.0
        };
        let xs: Vec<f64> = x.iter().map(|v| v * rescale).collect();
        if !self.rows.is_empty() && linalg::lambda_max(&self.evaluate_original(&xs)) > -mu {
            return None;
        }
        for b in &self.positivity {
            if linalg::lambda_min(&self.var_value(b, &xs)) < b.floor {
                return None;
            }
        }
        Some((xs, rescale))
    }
}

/// Decide `F(x) ≼ −μI` subject to the layout's positivity constraints.
pub fn solve_feasibility(problem: &FeasibilityProblem) -> Result<FeasibilityOutcome> {
    let lmi = &problem.lmi;
    let reduced = Reduced::new(problem);
    let mu_margin = problem.margin();
    let (sdp, scales) = reduced.sdp();
    let p = reduced.coefficients.len();
    let y0: Vec<f64> = reduced.start().iter().zip(&scales).map(|(v, s)| v * s).collect();
    let settings = IpmSettings { max_iterations: problem.settings.max_iterations, mu_floor: 1e-14, step_fraction: 0.98 };
    let unscale = |y: &DVector<f64>| -> Vec<f64> { y.iter().zip(&scales).map(|(v, s)| v / s).collect() };

    let mut accepted: Option<(Vec<f64>, f64, f64)> = None;
    let mut best_t = f64::INFINITY;
    let gap_tol = problem.settings.gap_tolerance;
    let n_total = sdp.sizes.iter().sum::<usize>() as f64;
    let state = ipm::solve(&sdp, DVector::from_vec(y0), &settings, |y, mu, residual| {
        let v = unscale(y);
        let t = v[p];
        best_t = best_t.min(t);
        if t < 0.0 {
            if let Some((xs, c)) = reduced.accept(&v[..p], mu_margin) {
                accepted = Some((xs, c, t));
                return true;
            }
        }
        // Past the duality tolerance, stop once the margin's sign is settled.
        mu < gap_tol && residual < 1e-9 && t - n_total * mu > mu_margin
    });
    log::debug!(
        "{}: {:?} after {} iterations, mu = {:.3e}, t = {:.3e}",
        lmi.label,
        state.stop,
        state.iterations,
        state.mu,
        best_t
    );

    if let Some((xs, rescale, t)) = accepted {
        let mut certificate = Certificate::from_vector(lmi, &xs)?;
        certificate.diagnostics = CertificateDiagnostics {
            iterations: state.iterations,
            solver_margin: t,
            rescale,
            pruned_rows: lmi.dim() - reduced.rows.len(),
        };
        let report = verify_certificate(lmi, &certificate)?;
        if !report.pass {
            return Err(Error::Numerical(format!(
                "{}: accepted point fails verification (λ_max = {:e}, tolerance {:e})",
                lmi.label, report.lambda_max, report.tolerance
            )));
        }
        return Ok(FeasibilityOutcome::Feasible { certificate });
    }

    let v = unscale(&state.y);
    let t = v[p];
    let gap = n_total * state.mu;
    let converged = state.residual_ok() && state.mu.is_finite();
    if converged && t - gap > mu_margin {
        let lambda_max = if reduced.rows.is_empty() { 0.0 } else { linalg::lambda_max(&reduced.evaluate_original(&v[..p])) };
        return Ok(FeasibilityOutcome::Infeasible { min_margin: t, lambda_max, iterations: state.iterations });
    }
    Ok(FeasibilityOutcome::Inconclusive {
        min_margin: t,
        duality_measure: state.mu,
        iterations: state.iterations,
        reason: format!("{:?}", state.stop),
    })
}

impl ipm::IpmState {
    fn residual_ok(&self) -> bool {
        self.primal_residual < 1e-7
    }
}

#[cfg(test)]
mod tests;
