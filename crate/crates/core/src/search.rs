//! One-dimensional searches over the sampling period, the PID delay and the trigger threshold.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmi::{build_phi, build_phi_e, build_psi, AffineLmi, Certificate};
use crate::model::{DerivativeController, LtiPlant, PidController, PidPlant};
use crate::sdp::{solve_feasibility, verify_certificate, FeasibilityOutcome, FeasibilityProblem};
use crate::synthesis::{choose_delays, choose_pid_delay, map_gains, map_pid_gains};

/// Relative bracket width at which bisection stops.
pub const BRACKET_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayRule {
    /// Delays regenerated from `h` at every probe.
    RuleBased,
    Fixed(Vec<u32>),
}

/// Sampled-data design for an LTI plant; `sigma = None` selects the periodic condition.
#[derive(Debug, Clone)]
pub struct LtiDesign {
    pub plant: LtiPlant,
    pub ideal: DerivativeController,
    pub alpha: f64,
    pub sigma: Option<f64>,
    pub delays: DelayRule,
}

impl LtiDesign {
    pub fn delays_at(&self, h: f64) -> Result<Vec<u32>> {
        match &self.delays {
            DelayRule::RuleBased => choose_delays(h, self.ideal.order()),
            DelayRule::Fixed(q) => Ok(q.clone()),
        }
    }

    pub fn lmi_at(&self, h: f64) -> Result<AffineLmi> {
        self.lmi_with(h, self.sigma)
    }

    fn lmi_with(&self, h: f64, sigma: Option<f64>) -> Result<AffineLmi> {
        let ctrl = map_gains(&self.ideal, h, &self.delays_at(h)?)?;
        match sigma {
            None => build_phi(&self.plant, &ctrl, self.alpha),
            Some(s) => build_phi_e(&self.plant, &ctrl, self.alpha, s),
        }
    }
}

/// Event-triggered sampled PID design; `q = None` applies the delay rule.
#[derive(Debug, Clone)]
pub struct PidDesign {
    pub plant: PidPlant,
    pub ideal: PidController,
    pub alpha: f64,
    pub sigma: f64,
    pub q: Option<u32>,
}

impl PidDesign {
    pub fn q_at(&self, h: f64) -> Result<u32> {
        match self.q {
            Some(q) => Ok(q),
            None => choose_pid_delay(h),
        }
    }

    pub fn lmi_at(&self, h: f64) -> Result<AffineLmi> {
        self.lmi_with(h, self.sigma)
    }

    fn lmi_with(&self, h: f64, sigma: f64) -> Result<AffineLmi> {
        let ctrl = map_pid_gains(&self.ideal, h, self.q_at(h)?)?.with_sigma(sigma)?;
        build_psi(&self.plant, &ctrl, self.alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub value: f64,
    pub feasible: bool,
    /// Solver status, or the reason the probe could not be built.
    pub status: String,
    /// Normalised solver margin (negative when feasible); absent when not built.
    pub margin: Option<f64>,
    /// Delays used at this probe, for rule-based searches.
    pub delays: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub parameter: String,
    pub probes: Vec<Probe>,
    pub best: Option<f64>,
    pub certificate: Option<Certificate>,
    /// Set when probes disagree with a single feasible-then-infeasible boundary.
    pub local_boundary: bool,
    pub warnings: Vec<String>,
}

impl SearchReport {
    pub fn best_margin(&self) -> Option<f64> {
        self.certificate.as_ref().map(|c| c.diagnostics.solver_margin)
    }
}

struct ProbeResult {
    probe: Probe,
    certificate: Option<Certificate>,
}

fn run_probe(value: f64, delays: Vec<u32>, lmi: Result<AffineLmi>) -> ProbeResult {
    let lmi = match lmi {
        Ok(l) => l,
        Err(e) => {
            log::debug!("probe at {value:e} not built: {e}");
            return ProbeResult {
                probe: Probe { value, feasible: false, status: format!("invalid: {e}"), margin: None, delays },
                certificate: None,
            };
        }
    };
    let outcome = solve_feasibility(&FeasibilityProblem::new(lmi.clone()));
    let (status, margin, certificate) = match outcome {
        Ok(FeasibilityOutcome::Feasible { certificate }) => {
            // The report invariant: every certificate it carries re-verifies.
            match verify_certificate(&lmi, &certificate) {
                Ok(r) if r.pass => ("feasible".to_string(), Some(certificate.diagnostics.solver_margin), Some(certificate)),
                _ => ("unverified".to_string(), None, None),
            }
        }
        Ok(FeasibilityOutcome::Infeasible { min_margin, .. }) => ("infeasible".to_string(), Some(min_margin), None),
        Ok(FeasibilityOutcome::Inconclusive { min_margin, reason, .. }) => {
            (format!("inconclusive ({reason})"), Some(min_margin), None)
        }
        Err(e) => (format!("error: {e}"), None, None),
    };
    ProbeResult {
        probe: Probe { value, feasible: certificate.is_some(), status, margin, delays },
        certificate,
    }
}

fn bracket_closed(lo: f64, hi: f64) -> bool {
    if lo > 0.0 {
        (hi - lo) / lo <= BRACKET_TOLERANCE
    } else {
        hi - lo <= f64::MIN_POSITIVE
    }
}

/// Bisection for the largest feasible value in `[lo, hi]`, assuming feasibility at `lo`.
///
/// Wide positive brackets are split geometrically, narrow ones arithmetically.
/// After convergence three interior points of the final bracket are probed;
/// any feasible point above an infeasible one marks the result as a local boundary.
fn bisect<F>(parameter: &str, lo: f64, hi: f64, probe: F) -> Result<SearchReport>
where
    F: Fn(f64) -> ProbeResult,
{
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(Error::InvalidArgument(format!("{parameter} range [{lo}, {hi}] is empty or not finite")));
    }
    let mut probes = Vec::new();
    let mut warnings = Vec::new();
    let mut best: Option<(f64, Certificate)> = None;
    let mut record = |res: ProbeResult, probes: &mut Vec<Probe>| -> bool {
        let feasible = res.probe.feasible;
        if let Some(cert) = res.certificate {
            if best.as_ref().map_or(true, |(b, _)| res.probe.value > *b) {
                best = Some((res.probe.value, cert));
            }
        }
        probes.push(res.probe);
        feasible
    };

    if !record(probe(lo), &mut probes) {
        return Err(Error::InfeasibleRange(lo));
    }
    let (mut a, mut b) = (lo, hi);
    if hi > lo && !record(probe(hi), &mut probes) {
        {
            while !bracket_closed(a, b) {
                let mid = if a > 0.0 && b / a > 2.0 { (a * b).sqrt() } else { 0.5 * (a + b) };
                if record(probe(mid), &mut probes) {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            for frac in [0.25, 0.5, 0.75] {
                record(probe(a + (b - a) * frac), &mut probes);
            }
        }
    }

    let mut sorted: Vec<&Probe> = probes.iter().collect();
    sorted.sort_by(|p, q| p.value.total_cmp(&q.value));
    let changes = sorted.windows(2).filter(|w| w[0].feasible != w[1].feasible).count();
    let local_boundary = changes > 1;
    if local_boundary {
        let msg = format!("feasibility in {parameter} changes sign {changes} times across probes; reporting a local boundary");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    for w in sorted.windows(2) {
        if w[0].delays != w[1].delays && w[0].feasible != w[1].feasible {
            let msg = format!(
                "delays change from {:?} to {:?} between {} = {:e} and {:e}",
                w[0].delays, w[1].delays, parameter, w[0].value, w[1].value
            );
            log::info!("{msg}");
            warnings.push(msg);
        }
    }
    let (best, certificate) = match best {
        Some((v, c)) => (Some(v), Some(c)),
        None => (None, None),
    };
    Ok(SearchReport { parameter: parameter.to_string(), probes, best, certificate, local_boundary, warnings })
}

/// Largest sampling period in `h_range` for which the LTI design is certified.
pub fn max_h(design: &LtiDesign, h_range: (f64, f64)) -> Result<SearchReport> {
    if h_range.0 <= 0.0 {
        return Err(Error::InvalidArgument(format!("h range must start above zero, got {}", h_range.0)));
    }
    bisect("h", h_range.0, h_range.1, |h| {
        let delays = design.delays_at(h).unwrap_or_default();
        run_probe(h, delays, design.lmi_at(h))
    })
}

/// Largest sampling period in `h_range` for which the PID design is certified.
pub fn max_h_pid(design: &PidDesign, h_range: (f64, f64)) -> Result<SearchReport> {
    if h_range.0 <= 0.0 {
        return Err(Error::InvalidArgument(format!("h range must start above zero, got {}", h_range.0)));
    }
    bisect("h", h_range.0, h_range.1, |h| {
        let delays = design.q_at(h).map(|q| vec![q]).unwrap_or_default();
        run_probe(h, delays, design.lmi_at(h))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub q: u32,
    pub best_h: Option<f64>,
    pub margin: Option<f64>,
    pub local_boundary: bool,
    pub certificate: Option<Certificate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Row with the largest certified `h`; ties go to the smaller `q`.
    pub best_q: Option<u32>,
}

impl SweepReport {
    pub fn best_row(&self) -> Option<&SweepRow> {
        self.best_q.and_then(|q| self.rows.iter().find(|r| r.q == q))
    }
}

/// Geometric grid points used to locate a feasible start for each sweep row.
const SWEEP_GRID: usize = 24;

/// For each fixed `q` in the range, the largest certified `h` of the PID design.
///
/// With `q` fixed, small `h` inflates the mapped gains, so feasibility need
/// not hold at the lower end of `h_range`. Each row therefore scans a coarse
/// geometric grid, takes the largest feasible grid point and bisects from
/// there to the next grid point. Rows are computed in parallel and sorted by
/// `q`, so the table does not depend on completion order.
pub fn sweep_q(base: &PidDesign, q_range: (u32, u32), h_range: (f64, f64)) -> Result<SweepReport> {
    if q_range.0 == 0 || q_range.0 > q_range.1 {
        return Err(Error::InvalidArgument(format!("q range [{}, {}] is invalid", q_range.0, q_range.1)));
    }
    let (lo, hi) = h_range;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::InvalidArgument(format!("h range [{lo}, {hi}] is invalid")));
    }
    let grid: Vec<f64> = if hi > lo {
        (0..SWEEP_GRID).map(|i| lo * (hi / lo).powf(i as f64 / (SWEEP_GRID - 1) as f64)).collect()
    } else {
        vec![lo]
    };
    let rows: Vec<SweepRow> = (q_range.0..=q_range.1)
        .into_par_iter()
        .map(|q| {
            let design = PidDesign { q: Some(q), ..base.clone() };
            let feasible_at = |h: f64| run_probe(h, vec![q], design.lmi_at(h)).probe.feasible;
            let start = grid.iter().rposition(|&h| feasible_at(h));
            let empty = SweepRow { q, best_h: None, margin: None, local_boundary: false, certificate: None };
            let Some(i) = start else {
                log::debug!("q = {q}: no feasible grid point in [{lo:e}, {hi:e}]");
                return empty;
            };
            let upper = grid.get(i + 1).copied().unwrap_or(grid[i]);
            match max_h_pid(&design, (grid[i], upper)) {
                Ok(report) => SweepRow {
                    q,
                    best_h: report.best,
                    margin: report.best_margin(),
                    local_boundary: report.local_boundary,
                    certificate: report.certificate,
                },
                Err(e) => {
                    log::debug!("q = {q}: {e}");
                    empty
                }
            }
        })
        .collect();
    let best_q = rows
        .iter()
        .filter_map(|r| r.best_h.map(|h| (r.q, h)))
        .fold(None::<(u32, f64)>, |acc, (q, h)| match acc {
            Some((_, bh)) if bh >= h => acc,
            _ => Some((q, h)),
        })
        .map(|(q, _)| q);
    Ok(SweepReport { rows, best_q })
}

fn sigma_range_checked(range: (f64, f64)) -> Result<(f64, f64)> {
    let (lo, hi) = range;
    if !(0.0..1.0).contains(&lo) || hi < lo || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!("σ range [{lo}, {hi}] must lie in [0, 1)")));
    }
    // σ = 1 itself is outside the admissible set; stop just below it.
    Ok((lo, hi.min(1.0 - 1e-9)))
}

/// Largest certified trigger threshold for the LTI design at sampling period `h`.
pub fn max_sigma(design: &LtiDesign, h: f64, sigma_range: (f64, f64)) -> Result<SearchReport> {
    let (lo, hi) = sigma_range_checked(sigma_range)?;
    let delays = design.delays_at(h)?;
    bisect("sigma", lo, hi, |s| run_probe(s, delays.clone(), design.lmi_with(h, Some(s))))
}

/// Largest certified trigger threshold for the PID design at sampling period `h`.
pub fn max_sigma_pid(design: &PidDesign, h: f64, sigma_range: (f64, f64)) -> Result<SearchReport> {
    let (lo, hi) = sigma_range_checked(sigma_range)?;
    let q = design.q_at(h)?;
    bisect("sigma", lo, hi, |s| run_probe(s, vec![q], design.lmi_with(h, s)))
}
