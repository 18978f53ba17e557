//! Delayed sampled-data controllers built from ideal derivative-dependent ones.
//!
//! Output derivatives are replaced by finite differences of delayed samples.
//! The gains are chosen so that the Taylor expansion of the delayed samples
//! reproduces the ideal closed loop exactly, which means solving one small
//! Vandermonde-type system.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::model::{DerivativeController, PidController};

/// Above this, the Taylor matrix is flagged as ill-conditioned.
pub const CONDITION_WARNING: f64 = 1e12;

/// `u(t) = K_0 y(t_k) + Σ_i K_i y(t_k − q_i h)` held on `[t_k, t_{k+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SampledControllerRepr", into = "SampledControllerRepr")]
pub struct SampledController {
    h: f64,
    delays: Vec<u32>,
    gains: Vec<Mat>,
    /// Condition number of the Taylor matrix used to derive the gains (1 when
    /// the gains were supplied directly).
    pub condition: f64,
}

#[derive(Serialize, Deserialize)]
struct SampledControllerRepr {
    h: f64,
    delays: Vec<u32>,
    gains: Vec<Vec<Vec<f64>>>,
    #[serde(default = "one")]
    condition: f64,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<SampledControllerRepr> for SampledController {
    type Error = Error;
    fn try_from(r: SampledControllerRepr) -> Result<Self> {
        let gains = r.gains.iter().map(|g| linalg::from_rows(g, "K_i")).collect::<Result<Vec<_>>>()?;
        let mut c = SampledController::new(r.h, r.delays, gains)?;
        c.condition = r.condition;
        Ok(c)
    }
}

impl From<SampledController> for SampledControllerRepr {
    fn from(c: SampledController) -> Self {
        SampledControllerRepr {
            h: c.h,
            delays: c.delays,
            gains: c.gains.iter().map(linalg::to_rows).collect(),
            condition: c.condition,
        }
    }
}

impl SampledController {
    pub fn new(h: f64, delays: Vec<u32>, gains: Vec<Mat>) -> Result<Self> {
        validate_period(h)?;
        validate_delays(&delays)?;
        if gains.len() != delays.len() + 1 {
            return Err(Error::Dimension(format!("{} gains for {} delays", gains.len(), delays.len())));
        }
        let shape = gains[0].shape();
        if gains.iter().any(|g| g.shape() != shape) {
            return Err(Error::Dimension("gains must share one m×l shape".into()));
        }
        for g in &gains {
            linalg::ensure_finite(g, "sampled gains")?;
        }
        Ok(Self { h, delays, gains, condition: 1.0 })
    }

    pub fn h(&self) -> f64 {
        self.h
    }
    /// `q_1 < … < q_{r-1}`.
    pub fn delays(&self) -> &[u32] {
        &self.delays
    }
    pub fn gains(&self) -> &[Mat] {
        &self.gains
    }
    pub fn order(&self) -> usize {
        self.gains.len()
    }
    pub fn inputs(&self) -> usize {
        self.gains[0].nrows()
    }
    pub fn outputs(&self) -> usize {
        self.gains[0].ncols()
    }
    pub fn ill_conditioned(&self) -> bool {
        self.condition > CONDITION_WARNING
    }

    /// `[K_0, K_1, …, K_{r-1}]` as one `m × rl` row block.
    pub fn concatenated(&self) -> Mat {
        let (m, l) = (self.inputs(), self.outputs());
        let mut out = Mat::zeros(m, l * self.order());
        for (i, g) in self.gains.iter().enumerate() {
            out.view_mut((0, i * l), (m, l)).copy_from(g);
        }
        out
    }
}

/// Sampled PID `u = k_p y(t_k) + k_i h Σ_{j<k} y(t_j) + k_d y(t_{k−q})`, with an
/// event threshold `σ` on the transmitted control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampledPidController {
    pub h: f64,
    pub q: u32,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub sigma: f64,
}

impl SampledPidController {
    pub fn validate(&self) -> Result<()> {
        validate_period(self.h)?;
        if self.q == 0 {
            return Err(Error::InvalidDelays(vec![self.q]));
        }
        validate_sigma(self.sigma)?;
        if !(self.kp.is_finite() && self.ki.is_finite() && self.kd.is_finite()) {
            return Err(Error::NonFinite("sampled PID gains".into()));
        }
        Ok(())
    }

    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        validate_sigma(sigma)?;
        self.sigma = sigma;
        Ok(self)
    }
}

pub(crate) fn validate_period(h: f64) -> Result<()> {
    if h.is_finite() && h > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("sampling period must be positive and finite, got {h}")))
    }
}

pub(crate) fn validate_sigma(sigma: f64) -> Result<()> {
    if (0.0..1.0).contains(&sigma) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("event threshold must lie in [0, 1), got {sigma}")))
    }
}

fn validate_delays(q: &[u32]) -> Result<()> {
    let mut prev = 0u32;
    for &qi in q {
        if qi <= prev {
            return Err(Error::InvalidDelays(q.to_vec()));
        }
        prev = qi;
    }
    Ok(())
}

/// Scalar Taylor factor `V` with `V[i][j] = (−q_i h)^j / j!`, `q_0 = 0`.
pub fn taylor_factor(h: f64, q: &[u32], r: usize) -> Result<Mat> {
    validate_period(h)?;
    validate_delays(q)?;
    if q.len() + 1 != r {
        return Err(Error::Dimension(format!("{} delays given for relative degree {r}", q.len())));
    }
    let mut v = Mat::zeros(r, r);
    for i in 0..r {
        let shift = if i == 0 { 0.0 } else { -(q[i - 1] as f64) * h };
        let mut term = 1.0;
        for j in 0..r {
            v[(i, j)] = term;
            term *= shift / (j as f64 + 1.0);
        }
    }
    Ok(v)
}

/// The `rl × rl` Taylor matrix `M = V ⊗ I_l`.
pub fn build_m(h: f64, q: &[u32], r: usize, l: usize) -> Result<Mat> {
    let v = taylor_factor(h, q, r)?;
    Ok(linalg::kron(&v, &Mat::identity(l, l)))
}

/// `[K_0..K_{r-1}] = [K̄_0..K̄_{r-1}]·M⁻¹`, so the sampled closed loop matches the ideal one.
pub fn map_gains(ideal: &DerivativeController, h: f64, q: &[u32]) -> Result<SampledController> {
    let r = ideal.order();
    let v = taylor_factor(h, q, r)?;
    let lu = v.clone().lu();
    let v_inv = lu
        .try_inverse()
        .ok_or_else(|| Error::SingularTaylorMatrix(format!("h = {h}, q = {q:?}")))?;
    linalg::ensure_finite(&v_inv, "inverse Taylor matrix")?;
    let sv = v.singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };

    let (m, l) = (ideal.inputs(), ideal.outputs());
    let gains = (0..r)
        .map(|j| {
            let mut k = Mat::zeros(m, l);
            for (i, kbar) in ideal.gains().iter().enumerate() {
                k += kbar * v_inv[(i, j)];
            }
            k
        })
        .collect();
    let mut ctrl = SampledController::new(h, q.to_vec(), gains)?;
    ctrl.condition = condition;
    if ctrl.ill_conditioned() {
        log::warn!("Taylor matrix condition number {condition:e} exceeds {CONDITION_WARNING:e}");
    }
    Ok(ctrl)
}

/// Floor that tolerates representation error just below an integer.
fn robust_floor(x: f64) -> f64 {
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * x.abs().max(1.0) {
        nearest
    } else {
        x.floor()
    }
}

/// Delays `q_i = i·⌊h^{1/r − 1}⌋`, `i = 1..r−1`.
pub fn choose_delays(h: f64, r: usize) -> Result<Vec<u32>> {
    validate_period(h)?;
    if r == 0 {
        return Err(Error::InvalidArgument("relative degree must be at least 1".into()));
    }
    let base = robust_floor(h.powf(1.0 / r as f64 - 1.0));
    if base < 1.0 {
        return Err(Error::SamplingTooLarge { h });
    }
    if base * (r as f64) > u32::MAX as f64 {
        return Err(Error::InvalidArgument(format!("delays overflow for h = {h}")));
    }
    Ok((1..r).map(|i| i as u32 * base as u32).collect())
}

/// `k_p = k̄_p + k̄_d/(qh)`, `k_i = k̄_i`, `k_d = −k̄_d/(qh)`; σ starts at zero.
pub fn map_pid_gains(ideal: &PidController, h: f64, q: u32) -> Result<SampledPidController> {
    validate_period(h)?;
    if q == 0 {
        return Err(Error::InvalidDelays(vec![q]));
    }
    let qh = q as f64 * h;
    let kp = ideal.kp_bar + ideal.kd_bar / qh;
    let kd = -ideal.kd_bar / qh;
    Ok(SampledPidController { h, q, kp, ki: ideal.ki_bar, kd, sigma: 0.0 })
}

/// `q = ⌊h^{−1/2}⌋` for `h ∈ (0, 1)`.
pub fn choose_pid_delay(h: f64) -> Result<u32> {
    validate_period(h)?;
    if h >= 1.0 {
        return Err(Error::SamplingTooLarge { h });
    }
    let q = robust_floor(h.powf(-0.5));
    if q < 1.0 {
        return Err(Error::SamplingTooLarge { h });
    }
    Ok(q as u32)
}
