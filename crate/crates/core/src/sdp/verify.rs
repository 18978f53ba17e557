//! Certificate checks by direct evaluation and dense eigenvalues only.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg;
use crate::lmi::{AffineLmi, Certificate, Positivity};

/// Floor `ε` on the smallest eigenvalue of positive-definite unknowns.
pub const PD_FLOOR: f64 = 1e-9;
/// Relative slack on `λ_max` of the evaluated LMI.
pub const LMI_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableCheck {
    pub name: String,
    pub lambda_min: f64,
    pub required: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub lambda_max: f64,
    /// `1 + Σ |x_k|·‖F_k‖`, the magnitude the LMI slack is relative to.
    pub scale: f64,
    pub tolerance: f64,
    pub lmi_pass: bool,
    pub variables: Vec<VariableCheck>,
    pub pass: bool,
}

/// Pass iff `λ_max(F(x)) ≤ 1e-8·scale`, every positive-definite unknown has
/// `λ_min ≥ ε/2`, and every nonnegative scalar is `≥ 0`.
pub fn verify_certificate(lmi: &AffineLmi, cert: &Certificate) -> Result<VerificationReport> {
    let x = cert.to_vector(lmi.layout())?;
    let value = lmi.evaluate(&x)?;
    let lambda_max = linalg::lambda_max(&value);
    let scale = 1.0
        + linalg::fro(lmi.constant())
        + x.iter().zip(lmi.coefficients()).map(|(xk, fk)| xk.abs() * linalg::fro(fk)).sum::<f64>();
    let tolerance = LMI_SLACK * scale;
    let lmi_pass = lambda_max <= tolerance;
    let variables: Vec<VariableCheck> = lmi
        .layout()
        .vars()
        .iter()
        .map(|v| {
            let lambda_min = linalg::lambda_min(&lmi.layout().value(v, &x));
            let required = match v.positivity {
                Positivity::PositiveDefinite => PD_FLOOR / 2.0,
                Positivity::Nonnegative => 0.0,
            };
            VariableCheck { name: v.name.clone(), lambda_min, required, pass: lambda_min >= required }
        })
        .collect();
    let pass = lmi_pass && variables.iter().all(|c| c.pass);
    Ok(VerificationReport { lambda_max, scale, tolerance, lmi_pass, variables, pass })
}
