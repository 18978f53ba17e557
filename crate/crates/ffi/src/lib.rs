//! C ABI over the `artdelay` core.
//!
//! Every fallible call returns an [`AdStatus`]; on failure the message is kept
//! per thread and can be fetched with [`ad_last_error_message`]. Objects are
//! handed out as opaque pointers and must be released with the matching
//! `*_free` function. Matrices are passed row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use artdelay::lmi::{build_phi, build_phi_e, build_psi, AffineLmi, Certificate};
use artdelay::linalg::Mat;
use artdelay::model::{relative_degree, DerivativeController, LtiPlant, PidController, PidPlant};
use artdelay::sdp::{solve_feasibility, verify_certificate, FeasibilityProblem};
use artdelay::sim;
use artdelay::synthesis::{choose_delays, choose_pid_delay, map_gains, map_pid_gains, SampledController, SampledPidController};
use artdelay::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    NonFinite = 4,
    NoRelativeDegree = 5,
    Numerical = 6,
    BufferTooSmall = 7,
    Io = 8,
    Panic = 9,
}

pub struct AdLtiPlant(LtiPlant);
pub struct AdController(SampledController);
pub struct AdPidController(SampledPidController);
pub struct AdCertificate(Certificate);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> AdStatus {
    match e {
        Error::Dimension(_) | Error::LayoutMismatch(_) => AdStatus::Dimension,
        Error::NonFinite(_) => AdStatus::NonFinite,
        Error::NoRelativeDegree(_) | Error::IllConditionedRelativeDegree { .. } => AdStatus::NoRelativeDegree,
        Error::Numerical(_) | Error::SingularTaylorMatrix(_) => AdStatus::Numerical,
        Error::Io(_) | Error::Json(_) => AdStatus::Io,
        _ => AdStatus::InvalidArgument,
    }
}

struct Fail(AdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(AdStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status plus a stored message.
fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> AdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AdStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            AdStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or valid for reads of `len` doubles.
unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn matrix(p: *const f64, rows: usize, cols: usize, what: &str) -> Result<Mat, Fail> {
    Ok(Mat::from_row_slice(rows, cols, slice(p, rows * cols, what)?))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn copy_out(values: &[f64], out: *mut f64, len: usize) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len < values.len() {
        return Err(Fail(AdStatus::BufferTooSmall, format!("buffer holds {len} values, need {}", values.len())));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

fn to_c_string(s: &str) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

/// Library version as a static NUL-terminated string. Do not free.
#[no_mangle]
pub extern "C" fn ad_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy of the last error message on this thread, or NULL when the last call
/// succeeded. Free with [`ad_string_free`].
#[no_mangle]
pub extern "C" fn ad_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |c| c.clone().into_raw()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ad_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Plant `ẋ = Ax + Bu, y = Cx` with `A` n×n, `B` n×m, `C` l×n.
///
/// # Safety
/// `a`, `b`, `c` must point to the stated number of doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ad_lti_plant_new(
    a: *const f64,
    b: *const f64,
    c: *const f64,
    n: usize,
    m: usize,
    l: usize,
    out: *mut *mut AdLtiPlant,
) -> AdStatus {
    guard(|| {
        let plant = LtiPlant::new(matrix(a, n, n, "A")?, matrix(b, n, m, "B")?, matrix(c, l, n, "C")?)?;
        write(out, Box::into_raw(Box::new(AdLtiPlant(plant))), "out")
    })
}

/// # Safety
/// `plant` must be NULL or a handle from [`ad_lti_plant_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ad_lti_plant_free(plant: *mut AdLtiPlant) {
    if !plant.is_null() {
        drop(Box::from_raw(plant));
    }
}

/// # Safety
/// `plant` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ad_relative_degree(plant: *const AdLtiPlant, r_max: usize, out: *mut usize) -> AdStatus {
    guard(|| {
        let p = handle(plant, "plant")?;
        write(out, relative_degree(&p.0, r_max)?, "out")
    })
}

/// Maps ideal gains `K̄_0..K̄_{r-1}` (each m×l, concatenated) to the delayed
/// sampled-data controller. With `delays` NULL the delays follow the default rule.
///
/// # Safety
/// `ideal` must hold `r·m·l` doubles; `delays` must be NULL or hold `r − 1` values.
#[no_mangle]
pub unsafe extern "C" fn ad_map_gains(
    ideal: *const f64,
    r: usize,
    m: usize,
    l: usize,
    h: f64,
    delays: *const u32,
    out: *mut *mut AdController,
) -> AdStatus {
    guard(|| {
        if r < 2 {
            return Err(Fail(AdStatus::InvalidArgument, "need at least two gains".into()));
        }
        let flat = slice(ideal, r * m * l, "ideal")?;
        let gains: Vec<Mat> = flat.chunks(m * l).map(|g| Mat::from_row_slice(m, l, g)).collect();
        let ideal = DerivativeController::new(gains)?;
        let q = if delays.is_null() { choose_delays(h, r)? } else { std::slice::from_raw_parts(delays, r - 1).to_vec() };
        write(out, Box::into_raw(Box::new(AdController(map_gains(&ideal, h, &q)?))), "out")
    })
}

/// # Safety
/// `ctrl` must be NULL or a live controller handle.
#[no_mangle]
pub unsafe extern "C" fn ad_controller_free(ctrl: *mut AdController) {
    if !ctrl.is_null() {
        drop(Box::from_raw(ctrl));
    }
}

/// Number of gains `r`; 0 for a NULL handle.
///
/// # Safety
/// `ctrl` must be NULL or a live controller handle.
#[no_mangle]
pub unsafe extern "C" fn ad_controller_order(ctrl: *const AdController) -> usize {
    ctrl.as_ref().map_or(0, |c| c.0.order())
}

/// Copies gain `K_i` row-major into `out` (capacity `len`).
///
/// # Safety
/// `ctrl` must be live and `out` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ad_controller_gain(ctrl: *const AdController, i: usize, out: *mut f64, len: usize) -> AdStatus {
    guard(|| {
        let c = handle(ctrl, "controller")?;
        let g = c.0.gains().get(i).ok_or_else(|| Fail(AdStatus::InvalidArgument, format!("no gain {i}")))?;
        copy_out(&g.transpose().iter().copied().collect::<Vec<_>>(), out, len)
    })
}

/// Copies the `r − 1` delays into `out` (capacity `len`).
///
/// # Safety
/// `ctrl` must be live and `out` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn ad_controller_delays(ctrl: *const AdController, out: *mut u32, len: usize) -> AdStatus {
    guard(|| {
        let q = handle(ctrl, "controller")?.0.delays();
        if out.is_null() {
            return Err(null("output buffer"));
        }
        if len < q.len() {
            return Err(Fail(AdStatus::BufferTooSmall, format!("buffer holds {len} values, need {}", q.len())));
        }
        ptr::copy_nonoverlapping(q.as_ptr(), out, q.len());
        Ok(())
    })
}

unsafe fn analyze(lmi: AffineLmi, feasible: *mut bool, cert: *mut *mut AdCertificate) -> Result<(), Fail> {
    if feasible.is_null() {
        return Err(null("feasible"));
    }
    let outcome = solve_feasibility(&FeasibilityProblem::new(lmi.clone()))?;
    let found = match outcome.certificate() {
        Some(c) if verify_certificate(&lmi, c)?.pass => Some(c.clone()),
        _ => None,
    };
    feasible.write(found.is_some());
    if !cert.is_null() {
        cert.write(found.map_or(ptr::null_mut(), |c| Box::into_raw(Box::new(AdCertificate(c)))));
    }
    Ok(())
}

/// Solves the periodic sampled-data LMI. `*feasible` tells whether a verified
/// certificate exists; it is stored in `*cert` when `cert` is not NULL
/// (NULL is stored otherwise).
///
/// # Safety
/// Handles must be live; `feasible` must be writable; `cert` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn ad_analyze_phi(
    plant: *const AdLtiPlant,
    ctrl: *const AdController,
    alpha: f64,
    feasible: *mut bool,
    cert: *mut *mut AdCertificate,
) -> AdStatus {
    guard(|| analyze(build_phi(&handle(plant, "plant")?.0, &handle(ctrl, "controller")?.0, alpha)?, feasible, cert))
}

/// Event-triggered variant of [`ad_analyze_phi`] with threshold `sigma`.
///
/// # Safety
/// As for [`ad_analyze_phi`].
#[no_mangle]
pub unsafe extern "C" fn ad_analyze_phi_e(
    plant: *const AdLtiPlant,
    ctrl: *const AdController,
    alpha: f64,
    sigma: f64,
    feasible: *mut bool,
    cert: *mut *mut AdCertificate,
) -> AdStatus {
    guard(|| analyze(build_phi_e(&handle(plant, "plant")?.0, &handle(ctrl, "controller")?.0, alpha, sigma)?, feasible, cert))
}

/// # Safety
/// `cert` must be NULL or a live certificate handle.
#[no_mangle]
pub unsafe extern "C" fn ad_certificate_free(cert: *mut AdCertificate) {
    if !cert.is_null() {
        drop(Box::from_raw(cert));
    }
}

/// Certificate as JSON; NULL on error. Free with [`ad_string_free`].
///
/// # Safety
/// `cert` must be a live certificate handle.
#[no_mangle]
pub unsafe extern "C" fn ad_certificate_to_json(cert: *const AdCertificate) -> *mut c_char {
    let mut json = None;
    let status = guard(|| {
        json = Some(handle(cert, "certificate")?.0.to_json()?);
        Ok(())
    });
    match (status, json) {
        (AdStatus::Ok, Some(s)) => to_c_string(&s),
        _ => ptr::null_mut(),
    }
}

/// Copies the named unknown (row-major) into `out`, writing its dimension to `dim`.
///
/// # Safety
/// `cert` must be live, `name` a NUL-terminated string, `out` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ad_certificate_variable(
    cert: *const AdCertificate,
    name: *const c_char,
    out: *mut f64,
    len: usize,
    dim: *mut usize,
) -> AdStatus {
    guard(|| {
        let c = handle(cert, "certificate")?;
        if name.is_null() {
            return Err(null("name"));
        }
        let name = std::ffi::CStr::from_ptr(name).to_string_lossy();
        let m = c.0.get(&name).ok_or_else(|| Fail(AdStatus::InvalidArgument, format!("no variable {name}")))?;
        write(dim, m.nrows(), "dim")?;
        copy_out(&m.transpose().iter().copied().collect::<Vec<_>>(), out, len)
    })
}

/// Sampled PID controller for ideal gains `(kp, ki, kd)`. With `q == 0` the
/// delay follows the default rule.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ad_map_pid_gains(
    kp: f64,
    ki: f64,
    kd: f64,
    h: f64,
    q: u32,
    sigma: f64,
    out: *mut *mut AdPidController,
) -> AdStatus {
    guard(|| {
        let ideal = PidController::new(kp, ki, kd)?;
        let q = if q == 0 { choose_pid_delay(h)? } else { q };
        let ctrl = map_pid_gains(&ideal, h, q)?.with_sigma(sigma)?;
        write(out, Box::into_raw(Box::new(AdPidController(ctrl))), "out")
    })
}

/// # Safety
/// `ctrl` must be NULL or a live PID controller handle.
#[no_mangle]
pub unsafe extern "C" fn ad_pid_controller_free(ctrl: *mut AdPidController) {
    if !ctrl.is_null() {
        drop(Box::from_raw(ctrl));
    }
}

/// Writes the mapped gains and delay.
///
/// # Safety
/// `ctrl` must be live; all outputs writable.
#[no_mangle]
pub unsafe extern "C" fn ad_pid_controller_gains(
    ctrl: *const AdPidController,
    kp: *mut f64,
    ki: *mut f64,
    kd: *mut f64,
    q: *mut u32,
) -> AdStatus {
    guard(|| {
        let c = handle(ctrl, "controller")?.0;
        write(kp, c.kp, "kp")?;
        write(ki, c.ki, "ki")?;
        write(kd, c.kd, "kd")?;
        write(q, c.q, "q")
    })
}

/// Solves the PID LMI for the plant `ÿ + a1 ẏ + a2 y = b u`.
///
/// # Safety
/// As for [`ad_analyze_phi`].
#[no_mangle]
pub unsafe extern "C" fn ad_analyze_psi(
    a1: f64,
    a2: f64,
    b: f64,
    ctrl: *const AdPidController,
    alpha: f64,
    feasible: *mut bool,
    cert: *mut *mut AdCertificate,
) -> AdStatus {
    guard(|| {
        let plant = PidPlant::new(a1, a2, b)?;
        analyze(build_psi(&plant, &handle(ctrl, "controller")?.0, alpha)?, feasible, cert)
    })
}

/// Event-triggered LTI simulation over `[0, horizon]`. `omega` is m×m; the
/// final sampled state is copied to `final_state` (n doubles) when not NULL.
///
/// # Safety
/// Handles must be live; `x0` must hold n doubles; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn ad_simulate_event_triggered(
    plant: *const AdLtiPlant,
    ctrl: *const AdController,
    sigma: f64,
    omega: *const f64,
    x0: *const f64,
    horizon: f64,
    samples: *mut usize,
    transmissions: *mut usize,
    final_state: *mut f64,
) -> AdStatus {
    guard(|| {
        let p = &handle(plant, "plant")?.0;
        let c = &handle(ctrl, "controller")?.0;
        let m = p.inputs();
        let omega = matrix(omega, m, m, "omega")?;
        let x0 = slice(x0, p.states(), "x0")?;
        let (trace, log) = sim::simulate_event_triggered(p, c, sigma, &omega, x0, horizon, None)?;
        write(samples, trace.len(), "samples")?;
        write(transmissions, log.transmissions(), "transmissions")?;
        if !final_state.is_null() {
            let last = trace.x.last().expect("at least one sample");
            ptr::copy_nonoverlapping(last.as_ptr(), final_state, last.len());
        }
        Ok(())
    })
}

/// Event-triggered sampled PID simulation from `x0 = (y, ẏ)`.
///
/// # Safety
/// `ctrl` must be live; `x0` must hold 2 doubles; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn ad_simulate_pid(
    a1: f64,
    a2: f64,
    b: f64,
    ctrl: *const AdPidController,
    x0: *const f64,
    horizon: f64,
    samples: *mut usize,
    transmissions: *mut usize,
) -> AdStatus {
    guard(|| {
        let plant = PidPlant::new(a1, a2, b)?;
        let x0 = slice(x0, 2, "x0")?;
        let (trace, log) = sim::simulate_pid(&plant, &handle(ctrl, "controller")?.0, x0, horizon, None)?;
        write(samples, trace.len(), "samples")?;
        write(transmissions, log.transmissions(), "transmissions")
    })
}
