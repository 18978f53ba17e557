//! JSON run configuration. Problems are reported with the JSON pointer of the
//! offending field so that a malformed file can be fixed without guesswork.
//!
//! ```json
//! {
//!   "mode": "analyze",
//!   "plant": { "type": "lti", "A": [[0,1,0],[0,0,1],[0,0,0]], "B": [[0],[0],[1]], "C": [[1,0,0]] },
//!   "controller": { "gains": [[[-2e-4]], [[-0.06]], [[-0.342]]] },
//!   "parameters": { "h": 0.044, "q": [30, 60], "alpha": 1e-3 },
//!   "output": { "dir": "out" }
//! }
//! ```
//!
//! A PID plant is `{"type": "pid", "a1": .., "a2": .., "b": ..}` with the
//! controller `{"kp": .., "ki": .., "kd": ..}`.

use std::path::PathBuf;
use std::str::FromStr;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::model::{DerivativeController, LtiPlant, PidController, PidPlant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Analyze,
    Synthesize,
    Search,
    Simulate,
    Reproduce,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Analyze => "analyze",
            Mode::Synthesize => "synthesize",
            Mode::Search => "search",
            Mode::Simulate => "simulate",
            Mode::Reproduce => "reproduce",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "analyze" => Ok(Mode::Analyze),
            "synthesize" => Ok(Mode::Synthesize),
            "search" => Ok(Mode::Search),
            "simulate" => Ok(Mode::Simulate),
            "reproduce" => Ok(Mode::Reproduce),
            other => Err(format!("unknown mode {other:?}; expected analyze, synthesize, search, simulate or reproduce")),
        }
    }
}

#[derive(Debug, Clone)]
pub enum System {
    Lti { plant: LtiPlant, ideal: DerivativeController },
    Pid { plant: PidPlant, ideal: PidController },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SearchTarget {
    /// Largest sampling period in the range.
    H { range: (f64, f64) },
    /// Largest threshold at the configured sampling period.
    Sigma { range: (f64, f64) },
    /// Best PID delay over `q_range`, each with its largest sampling period.
    Q { q_range: (u32, u32), h_range: (f64, f64) },
}

#[derive(Debug, Clone, Default)]
pub struct Parameters {
    pub h: Option<f64>,
    pub q: Option<Vec<u32>>,
    pub alpha: Option<f64>,
    pub sigma: Option<f64>,
    pub horizon: Option<f64>,
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub x0: Option<Vec<f64>>,
    pub omega: Option<Mat>,
    pub substeps: Option<usize>,
    pub lyapunov: bool,
    pub search: Option<SearchTarget>,
}

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    pub example: Option<String>,
    pub system: Option<System>,
    pub parameters: Parameters,
    pub output_dir: Option<PathBuf>,
}

fn config_err(pointer: &str, message: impl Into<String>) -> Error {
    Error::Config { pointer: pointer.to_string(), message: message.into() }
}

fn get<'a>(root: &'a Value, pointer: &str) -> Option<&'a Value> {
    root.pointer(pointer).filter(|v| !v.is_null())
}

fn number(v: &Value, pointer: &str) -> Result<f64> {
    let x = v.as_f64().ok_or_else(|| config_err(pointer, "expected a number"))?;
    if !x.is_finite() {
        return Err(config_err(pointer, "must be finite"));
    }
    Ok(x)
}

fn opt_number(root: &Value, pointer: &str) -> Result<Option<f64>> {
    get(root, pointer).map(|v| number(v, pointer)).transpose()
}

fn positive(root: &Value, pointer: &str) -> Result<Option<f64>> {
    match opt_number(root, pointer)? {
        Some(x) if x <= 0.0 => Err(config_err(pointer, "must be positive")),
        other => Ok(other),
    }
}

fn unsigned(v: &Value, pointer: &str) -> Result<u64> {
    v.as_u64().ok_or_else(|| config_err(pointer, "expected a nonnegative integer"))
}

fn opt_unsigned(root: &Value, pointer: &str) -> Result<Option<u64>> {
    get(root, pointer).map(|v| unsigned(v, pointer)).transpose()
}

fn string<'a>(root: &'a Value, pointer: &str) -> Result<Option<&'a str>> {
    get(root, pointer).map(|v| v.as_str().ok_or_else(|| config_err(pointer, "expected a string"))).transpose()
}

fn vector(v: &Value, pointer: &str) -> Result<Vec<f64>> {
    let items = v.as_array().ok_or_else(|| config_err(pointer, "expected an array of numbers"))?;
    items.iter().enumerate().map(|(i, x)| number(x, &format!("{pointer}/{i}"))).collect()
}

fn matrix(v: &Value, pointer: &str) -> Result<Mat> {
    let rows = v.as_array().ok_or_else(|| config_err(pointer, "expected an array of rows"))?;
    let rows: Vec<Vec<f64>> =
        rows.iter().enumerate().map(|(i, r)| vector(r, &format!("{pointer}/{i}"))).collect::<Result<_>>()?;
    linalg::from_rows(&rows, pointer).map_err(|e| config_err(pointer, e.to_string()))
}

fn required<'a>(root: &'a Value, pointer: &str) -> Result<&'a Value> {
    get(root, pointer).ok_or_else(|| config_err(pointer, "missing required field"))
}

fn range(root: &Value, pointer: &str) -> Result<Option<(f64, f64)>> {
    let Some(v) = get(root, pointer) else { return Ok(None) };
    let xs = vector(v, pointer)?;
    match xs[..] {
        [lo, hi] if lo < hi => Ok(Some((lo, hi))),
        [_, _] => Err(config_err(pointer, "lower end must be below upper end")),
        _ => Err(config_err(pointer, "expected [lo, hi]")),
    }
}

fn system(root: &Value) -> Result<Option<System>> {
    let Some(plant) = get(root, "/plant") else { return Ok(None) };
    if !plant.is_object() {
        return Err(config_err("/plant", "expected an object"));
    }
    let kind = string(root, "/plant/type")?.ok_or_else(|| config_err("/plant/type", "missing required field"))?;
    match kind {
        "lti" => {
            let a = matrix(required(root, "/plant/A")?, "/plant/A")?;
            let b = matrix(required(root, "/plant/B")?, "/plant/B")?;
            let c = matrix(required(root, "/plant/C")?, "/plant/C")?;
            let plant = LtiPlant::new(a, b, c).map_err(|e| config_err("/plant", e.to_string()))?;
            let gains = required(root, "/controller/gains")?
                .as_array()
                .ok_or_else(|| config_err("/controller/gains", "expected an array of matrices"))?;
            let gains: Vec<Mat> = gains
                .iter()
                .enumerate()
                .map(|(i, g)| matrix(g, &format!("/controller/gains/{i}")))
                .collect::<Result<_>>()?;
            let ideal = DerivativeController::new(gains).map_err(|e| config_err("/controller/gains", e.to_string()))?;
            if ideal.inputs() != plant.inputs() || ideal.outputs() != plant.outputs() {
                return Err(config_err("/controller/gains", "gain shape does not match the plant"));
            }
            Ok(Some(System::Lti { plant, ideal }))
        }
        "pid" => {
            let field = |name: &str| -> Result<f64> {
                let p = format!("/plant/{name}");
                number(required(root, &p)?, &p)
            };
            let plant = PidPlant::new(field("a1")?, field("a2")?, field("b")?).map_err(|e| config_err("/plant", e.to_string()))?;
            let gain = |name: &str| -> Result<f64> {
                let p = format!("/controller/{name}");
                number(required(root, &p)?, &p)
            };
            let ideal = PidController::new(gain("kp")?, gain("ki")?, gain("kd")?)
                .map_err(|e| config_err("/controller", e.to_string()))?;
            Ok(Some(System::Pid { plant, ideal }))
        }
        other => Err(config_err("/plant/type", format!("unknown plant type {other:?}; expected \"lti\" or \"pid\""))),
    }
}

fn delays(root: &Value) -> Result<Option<Vec<u32>>> {
    let Some(v) = get(root, "/parameters/q") else { return Ok(None) };
    let to_u32 = |x: &Value, p: &str| -> Result<u32> {
        let n = unsigned(x, p)?;
        u32::try_from(n).ok().filter(|n| *n > 0).ok_or_else(|| config_err(p, "delay must be a positive 32-bit integer"))
    };
    if let Some(items) = v.as_array() {
        let q = items.iter().enumerate().map(|(i, x)| to_u32(x, &format!("/parameters/q/{i}"))).collect::<Result<_>>()?;
        Ok(Some(q))
    } else {
        Ok(Some(vec![to_u32(v, "/parameters/q")?]))
    }
}

fn search(root: &Value) -> Result<Option<SearchTarget>> {
    let Some(_) = get(root, "/parameters/search") else { return Ok(None) };
    let target = string(root, "/parameters/search/target")?.unwrap_or("h");
    let need = |p: &str| range(root, p)?.ok_or_else(|| config_err(p, "missing required field"));
    match target {
        "h" => Ok(Some(SearchTarget::H { range: need("/parameters/search/range")? })),
        "sigma" => Ok(Some(SearchTarget::Sigma { range: need("/parameters/search/range")? })),
        "q" => {
            let p = "/parameters/search/q_range";
            let q = vector(required(root, p)?, p)?;
            let q_range = match q[..] {
                [lo, hi] if lo >= 1.0 && lo <= hi && lo.fract() == 0.0 && hi.fract() == 0.0 && hi <= u32::MAX as f64 => {
                    (lo as u32, hi as u32)
                }
                _ => return Err(config_err(p, "expected [lo, hi] with 1 ≤ lo ≤ hi integers")),
            };
            Ok(Some(SearchTarget::Q { q_range, h_range: need("/parameters/search/range")? }))
        }
        other => Err(config_err("/parameters/search/target", format!("unknown target {other:?}; expected h, sigma or q"))),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text).map_err(|e| config_err("", format!("invalid JSON: {e}")))?;
        if !root.is_object() {
            return Err(config_err("", "expected a JSON object"));
        }
        let mode = string(&root, "/mode")?.map(|s| s.parse::<Mode>().map_err(|e| config_err("/mode", e))).transpose()?;
        let sigma = opt_number(&root, "/parameters/sigma")?;
        if let Some(s) = sigma {
            if !(0.0..1.0).contains(&s) {
                return Err(config_err("/parameters/sigma", "must lie in [0, 1)"));
            }
        }
        let alpha = opt_number(&root, "/parameters/alpha")?;
        if alpha.is_some_and(|a| a < 0.0) {
            return Err(config_err("/parameters/alpha", "must be nonnegative"));
        }
        let runs = opt_unsigned(&root, "/parameters/runs")?.map(|n| n as usize);
        if runs == Some(0) {
            return Err(config_err("/parameters/runs", "must be at least 1"));
        }
        let parameters = Parameters {
            h: positive(&root, "/parameters/h")?,
            q: delays(&root)?,
            alpha,
            sigma,
            horizon: positive(&root, "/parameters/T")?,
            seed: opt_unsigned(&root, "/parameters/seed")?,
            runs,
            x0: get(&root, "/parameters/x0").map(|v| vector(v, "/parameters/x0")).transpose()?,
            omega: get(&root, "/parameters/omega").map(|v| matrix(v, "/parameters/omega")).transpose()?,
            substeps: opt_unsigned(&root, "/parameters/substeps")?.map(|n| n as usize),
            lyapunov: get(&root, "/parameters/lyapunov")
                .map(|v| v.as_bool().ok_or_else(|| config_err("/parameters/lyapunov", "expected a boolean")))
                .transpose()?
                .unwrap_or(false),
            search: search(&root)?,
        };
        Ok(Self {
            mode,
            example: string(&root, "/example")?.map(str::to_string),
            system: system(&root)?,
            parameters,
            output_dir: string(&root, "/output/dir")?.map(PathBuf::from),
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Checks that the fields `mode` needs are present.
    pub fn validate_for(&self, mode: Mode) -> Result<()> {
        let p = &self.parameters;
        if mode == Mode::Reproduce {
            return match &self.example {
                Some(_) => Ok(()),
                None => Err(config_err("/example", "missing required field")),
            };
        }
        let system = self.system.as_ref().ok_or_else(|| config_err("/plant", "missing required field"))?;
        let need = |present: bool, pointer: &str| if present { Ok(()) } else { Err(config_err(pointer, "missing required field")) };
        match mode {
            Mode::Analyze => {
                need(p.h.is_some(), "/parameters/h")?;
                need(p.alpha.is_some(), "/parameters/alpha")?;
            }
            Mode::Synthesize => need(p.h.is_some(), "/parameters/h")?,
            Mode::Search => {
                need(p.alpha.is_some(), "/parameters/alpha")?;
                match &p.search {
                    None => need(false, "/parameters/search")?,
                    Some(SearchTarget::Sigma { .. }) => need(p.h.is_some(), "/parameters/h")?,
                    Some(SearchTarget::Q { .. }) if matches!(system, System::Lti { .. }) => {
                        return Err(config_err("/parameters/search/target", "the q sweep applies to PID plants only"))
                    }
                    _ => {}
                }
            }
            Mode::Simulate => {
                need(p.h.is_some(), "/parameters/h")?;
                need(p.horizon.is_some(), "/parameters/T")?;
                let lti_event = matches!(system, System::Lti { .. }) && p.sigma.is_some_and(|s| s > 0.0);
                if (lti_event && p.omega.is_none()) || p.lyapunov {
                    need(p.alpha.is_some(), "/parameters/alpha")?;
                }
            }
            Mode::Reproduce => unreachable!(),
        }
        if let (Some(q), System::Pid { .. }) = (&p.q, system) {
            if q.len() != 1 {
                return Err(config_err("/parameters/q", "a PID controller takes a single delay"));
            }
        }
        if let Some(x0) = &p.x0 {
            let n = match system {
                System::Lti { plant, .. } => plant.states(),
                System::Pid { .. } => 2,
            };
            if x0.len() != n {
                return Err(config_err("/parameters/x0", format!("expected {n} entries")));
            }
        }
        Ok(())
    }
}
