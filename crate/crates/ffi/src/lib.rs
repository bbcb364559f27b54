//! C ABI over `dpdmon`.
//!
//! Every function returns a [`DpdStatus`]; results go through out-pointers.
//! Handles are opaque and must be released with the matching `*_free`.
//! After a non-OK status, [`dpd_last_error_message`] describes the failure
//! on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dpdmon::critval;
use dpdmon::retro::{self, RetroOptions};
use dpdmon::{Alpha, BoundaryFn, Engine, Error, FitOptions, FitResult, MonitorState, NormKind};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InsufficientData = 3,
    DegenerateSample = 4,
    NotConverged = 5,
    SingularInformation = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpdEngine {
    Normal = 0,
    Garch = 1,
}

/// Fitted model with its information estimate.
pub struct DpdFit {
    inner: FitResult,
}

/// Sequential monitor with frozen parameters and a constant boundary.
pub struct DpdMonitor {
    state: MonitorState,
    boundary: BoundaryFn,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DpdStatus {
    match e {
        Error::InsufficientData { .. } => DpdStatus::InsufficientData,
        Error::DegenerateSample(_) => DpdStatus::DegenerateSample,
        Error::OptimizationFailure { .. } => DpdStatus::NotConverged,
        Error::SingularInformation { .. } => DpdStatus::SingularInformation,
        _ => DpdStatus::InvalidArgument,
    }
}

fn fail(status: DpdStatus, msg: impl Into<String>) -> DpdStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), DpdStatus>) -> DpdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DpdStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(DpdStatus::Panic, "internal panic"),
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, DpdStatus>;
}

impl<T> OrStatus<T> for dpdmon::Result<T> {
    fn or_status(self) -> Result<T, DpdStatus> {
        self.map_err(|e| fail(status_of(&e), e.to_string()))
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), DpdStatus> {
    if p.is_null() {
        Err(fail(DpdStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `data` must point to `len` readable doubles.
unsafe fn slice<'a>(data: *const f64, len: usize, name: &str) -> Result<&'a [f64], DpdStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(data, name)?;
    Ok(std::slice::from_raw_parts(data, len))
}

fn alpha(a: f64) -> Result<Alpha, DpdStatus> {
    Alpha::new(a).or_status()
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dpd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// `P(sup_{0<s<1} |W(s)| ≤ b)`.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn dpd_sup_abs_bm_cdf(b: f64, out: *mut f64) -> DpdStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = critval::sup_abs_bm_cdf(b, critval::DEFAULT_SERIES_TOL).or_status()?;
        Ok(())
    })
}

/// Constant boundary of the max-norm detector in dimension `d`.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn dpd_critval_sequential(d: usize, level: f64, out: *mut f64) -> DpdStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = critval::critical_value_sequential(d, level).or_status()?;
        Ok(())
    })
}

/// Monte Carlo critical value of the retrospective test.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn dpd_critval_retro(
    d: usize,
    level: f64,
    grid_n: usize,
    n_mc: usize,
    seed: u64,
    out: *mut f64,
) -> DpdStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = critval::critical_value_retro(d, level, grid_n, n_mc, seed).or_status()?;
        Ok(())
    })
}

fn engine_of(engine: DpdEngine, p: usize, q: usize) -> Engine {
    match engine {
        DpdEngine::Normal => Engine::Normal,
        DpdEngine::Garch => Engine::Garch { p, q },
    }
}

/// Fits `engine` (`p`, `q` ignored for the normal engine) and stores a new
/// handle in `*out`.
///
/// # Safety
/// `data` must point to `len` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpd_fit(
    data: *const f64,
    len: usize,
    engine: DpdEngine,
    p: usize,
    q: usize,
    alpha_value: f64,
    out: *mut *mut DpdFit,
) -> DpdStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let x = slice(data, len, "data")?;
        let f = dpdmon::fit(x, engine_of(engine, p, q), alpha(alpha_value)?, &FitOptions::default()).or_status()?;
        if !f.converged {
            return Err(fail(DpdStatus::NotConverged, "fit did not converge"));
        }
        *out = Box::into_raw(Box::new(DpdFit { inner: f }));
        Ok(())
    })
}

/// # Safety
/// `fit` must be null or a handle from [`dpd_fit`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dpd_fit_free(fit: *mut DpdFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Number of parameters, or 0 for a null handle.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dpd_fit_dim(fit: *const DpdFit) -> usize {
    fit.as_ref().map_or(0, |f| f.inner.dim())
}

/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dpd_fit_objective(fit: *const DpdFit, out: *mut f64) -> DpdStatus {
    guard(|| {
        non_null(fit, "fit")?;
        non_null(out, "out")?;
        *out = (*fit).inner.objective;
        Ok(())
    })
}

unsafe fn copy_out(src: &[f64], out: *mut f64, cap: usize) -> Result<(), DpdStatus> {
    non_null(out, "out")?;
    if cap < src.len() {
        return Err(fail(
            DpdStatus::BufferTooSmall,
            format!("buffer holds {cap} values, {} needed", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

/// Writes the `dim` estimated parameters; GARCH order is
/// `(omega, alpha_1..alpha_p, beta_1..beta_q)`, normal is `(mu, sigma)`.
///
/// # Safety
/// `fit` must be a live handle and `out` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn dpd_fit_theta(fit: *const DpdFit, out: *mut f64, cap: usize) -> DpdStatus {
    guard(|| {
        non_null(fit, "fit")?;
        copy_out(&(*fit).inner.theta.to_vec(), out, cap)
    })
}

/// Writes the `dim × dim` information estimate in row-major order.
///
/// # Safety
/// `fit` must be a live handle and `out` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn dpd_fit_info(fit: *const DpdFit, out: *mut f64, cap: usize) -> DpdStatus {
    guard(|| {
        non_null(fit, "fit")?;
        let m = &(*fit).inner.info_hat;
        let d = m.nrows();
        let v: Vec<f64> = (0..d * d).map(|i| m[(i / d, i % d)]).collect();
        copy_out(&v, out, cap)
    })
}

/// Starts monitoring after `hist`, the series `fit` was estimated on, with
/// the constant boundary `b` and the max norm.
///
/// # Safety
/// `fit` must be live, `hist` must point to `len` doubles, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dpd_monitor_new(
    fit: *const DpdFit,
    hist: *const f64,
    len: usize,
    b: f64,
    out: *mut *mut DpdMonitor,
) -> DpdStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        non_null(fit, "fit")?;
        let h = slice(hist, len, "hist")?;
        let boundary = BoundaryFn::constant(b).or_status()?;
        let state = MonitorState::init(&(*fit).inner, h).or_status()?;
        *out = Box::into_raw(Box::new(DpdMonitor { state, boundary }));
        Ok(())
    })
}

/// Consumes one observation, writing the detector value and whether it
/// exceeds the boundary (1) or not (0).
///
/// # Safety
/// `mon` must be live; `detector` and `alarm` writable.
#[no_mangle]
pub unsafe extern "C" fn dpd_monitor_step(mon: *mut DpdMonitor, x: f64, detector: *mut f64, alarm: *mut i32) -> DpdStatus {
    guard(|| {
        non_null(mon, "monitor")?;
        non_null(detector, "detector")?;
        non_null(alarm, "alarm")?;
        if !x.is_finite() {
            return Err(fail(DpdStatus::InvalidArgument, "observation is not finite"));
        }
        let m = &mut *mon;
        let o = m.state.step(x, &m.boundary, NormKind::Max);
        *detector = o.detector;
        *alarm = i32::from(o.alarm);
        Ok(())
    })
}

/// Observations consumed so far, or 0 for a null handle.
///
/// # Safety
/// `mon` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn dpd_monitor_k(mon: *const DpdMonitor) -> usize {
    mon.as_ref().map_or(0, |m| m.state.k())
}

/// # Safety
/// `mon` must be null or a handle from [`dpd_monitor_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dpd_monitor_free(mon: *mut DpdMonitor) {
    if !mon.is_null() {
        drop(Box::from_raw(mon));
    }
}

/// Retrospective test against a given critical value. `change_point` is
/// 1-based; `reject` is 1 when the statistic exceeds `critical`.
///
/// # Safety
/// `data` must point to `len` doubles; out-pointers must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn dpd_retro(
    data: *const f64,
    len: usize,
    engine: DpdEngine,
    p: usize,
    q: usize,
    alpha_value: f64,
    critical: f64,
    statistic: *mut f64,
    change_point: *mut usize,
    reject: *mut i32,
) -> DpdStatus {
    guard(|| {
        non_null(statistic, "statistic")?;
        non_null(change_point, "change_point")?;
        non_null(reject, "reject")?;
        if !(critical.is_finite() && critical > 0.0) {
            return Err(fail(DpdStatus::InvalidArgument, "critical value must be positive"));
        }
        let x = slice(data, len, "data")?;
        let opts = RetroOptions {
            critical: Some(critical),
            ..Default::default()
        };
        let r = retro::retro_test(x, alpha(alpha_value)?, engine_of(engine, p, q), 0.05, &opts).or_status()?;
        *statistic = r.statistic;
        *change_point = r.change_point;
        *reject = i32::from(r.reject);
        Ok(())
    })
}
