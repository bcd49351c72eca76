//! C ABI over `robustvol`.
//!
//! Scenarios live behind an opaque `RvScenario` handle. Every function returns
//! an `RvStatus`; on failure the message is kept per thread and can be read
//! with `rv_last_error_message`. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use robustvol::detection::{self, DetectionOptions};
use robustvol::riccati::ValueCoefficients;
use robustvol::welfare::{self, StrategyTag};
use robustvol::{strategy, Error, ScenarioConfig};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Schema or parameter validation failed.
    InvalidInput = 3,
    /// The computation does not apply to this scenario.
    Configuration = 4,
    /// An argument is outside the function's domain.
    Domain = 5,
    /// Blow-up, quadrature, series or model-breakdown failure.
    Numerical = 6,
    Panic = 7,
}

/// Opaque scenario handle.
pub struct RvScenario {
    inner: ScenarioConfig,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RvExposures {
    pub beta_s: [f64; 2],
    pub beta_v: [f64; 2],
    /// NaN without jumps.
    pub beta_n: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RvWorstCase {
    pub e_s: [f64; 2],
    pub e_v: [f64; 2],
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> RvStatus {
    match e {
        Error::Schema(_) | Error::InvalidParameter { .. } | Error::Io(_) => RvStatus::InvalidInput,
        Error::Configuration(_) => RvStatus::Configuration,
        Error::Domain(_) => RvStatus::Domain,
        _ => RvStatus::Numerical,
    }
}

fn guard<F: FnOnce() -> Result<(), RvStatus>>(f: F) -> RvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RvStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            RvStatus::Panic
        }
    }
}

fn fail(e: Error) -> RvStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, RvStatus> {
    if p.is_null() {
        set_error("null string argument".into());
        return Err(RvStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("string argument is not UTF-8".into());
        RvStatus::InvalidUtf8
    })
}

unsafe fn scenario_arg<'a>(p: *const RvScenario) -> Result<&'a ScenarioConfig, RvStatus> {
    p.as_ref().map(|s| &s.inner).ok_or_else(|| {
        set_error("null scenario handle".into());
        RvStatus::NullPointer
    })
}

unsafe fn out_arg<'a, T>(p: *mut T) -> Result<&'a mut T, RvStatus> {
    p.as_mut().ok_or_else(|| {
        set_error("null output pointer".into());
        RvStatus::NullPointer
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length excluding the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn rv_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Parses and validates a TOML scenario document.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be a valid pointer.
/// The handle must be released with `rv_scenario_free`.
#[no_mangle]
pub unsafe extern "C" fn rv_scenario_from_toml(toml: *const c_char, out: *mut *mut RvScenario) -> RvStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = ptr::null_mut();
        let text = str_arg(toml)?;
        let (inner, _) = ScenarioConfig::from_toml_str(text).map_err(fail)?;
        *out = Box::into_raw(Box::new(RvScenario { inner }));
        Ok(())
    })
}

/// # Safety
/// `scenario` must be null or a handle from `rv_scenario_from_toml` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rv_scenario_free(scenario: *mut RvScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Sets a named scalar parameter (e.g. `phi_s1`, `kappa2`, `T`) and revalidates.
/// On failure the scenario is unchanged.
///
/// # Safety
/// Valid handle and NUL-terminated `name`.
#[no_mangle]
pub unsafe extern "C" fn rv_scenario_set_param(scenario: *mut RvScenario, name: *const c_char, value: f64) -> RvStatus {
    guard(|| {
        let s = scenario.as_mut().ok_or_else(|| {
            set_error("null scenario handle".into());
            RvStatus::NullPointer
        })?;
        let name = str_arg(name)?;
        let mut next = s.inner;
        next.set_param(name, value).map_err(fail)?;
        next.validate().map_err(fail)?;
        s.inner = next;
        Ok(())
    })
}

/// # Safety
/// Valid handle, NUL-terminated `name`, valid `out`.
#[no_mangle]
pub unsafe extern "C" fn rv_scenario_get_param(scenario: *const RvScenario, name: *const c_char, out: *mut f64) -> RvStatus {
    guard(|| {
        let s = scenario_arg(scenario)?;
        let out = out_arg(out)?;
        *out = s.get_param(str_arg(name)?).map_err(fail)?;
        Ok(())
    })
}

/// Optimal exposures at time-to-horizon `tau`; uses the jump model when the
/// scenario has a jump section.
///
/// # Safety
/// Valid handle and `out`.
#[no_mangle]
pub unsafe extern "C" fn rv_optimal_exposures(scenario: *const RvScenario, tau: f64, out: *mut RvExposures) -> RvStatus {
    guard(|| {
        let s = scenario_arg(scenario)?;
        let out = out_arg(out)?;
        let vc = if s.jumps.is_some() {
            ValueCoefficients::jump(s)
        } else {
            ValueCoefficients::complete(s)
        }
        .map_err(fail)?;
        let e = strategy::optimal_exposures(&vc, tau).map_err(fail)?;
        *out = RvExposures {
            beta_s: e.beta_s,
            beta_v: e.beta_v,
            beta_n: e.beta_n.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// Worst-case drift distortions at `tau` and variances `(v1, v2)`.
///
/// # Safety
/// Valid handle and `out`.
#[no_mangle]
pub unsafe extern "C" fn rv_worst_case(scenario: *const RvScenario, tau: f64, v1: f64, v2: f64, out: *mut RvWorstCase) -> RvStatus {
    guard(|| {
        let s = scenario_arg(scenario)?;
        let out = out_arg(out)?;
        let vc = ValueCoefficients::complete(s).map_err(fail)?;
        let w = strategy::worst_case(&vc, tau, [v1, v2]).map_err(fail)?;
        *out = RvWorstCase { e_s: w.e_s, e_v: w.e_v };
        Ok(())
    })
}

/// Indirect utility `J` at time-to-horizon `tau`, wealth `x`, variances `(v1, v2)`.
///
/// # Safety
/// Valid handle and `out`.
#[no_mangle]
pub unsafe extern "C" fn rv_value(scenario: *const RvScenario, tau: f64, x: f64, v1: f64, v2: f64, out: *mut f64) -> RvStatus {
    guard(|| {
        let s = scenario_arg(scenario)?;
        let out = out_arg(out)?;
        let vc = if s.jumps.is_some() {
            ValueCoefficients::jump(s)
        } else {
            ValueCoefficients::complete(s)
        }
        .map_err(fail)?;
        *out = vc.value(tau, x, [v1, v2]).map_err(fail)?;
        Ok(())
    })
}

/// Wealth-equivalent utility loss of `strategy` (`pi1`, `pi2`, `pi3`, `jump-ignore`).
///
/// # Safety
/// Valid handle, NUL-terminated `strategy`, valid `out`.
#[no_mangle]
pub unsafe extern "C" fn rv_utility_loss(scenario: *const RvScenario, strategy: *const c_char, out: *mut f64) -> RvStatus {
    guard(|| {
        let s = scenario_arg(scenario)?;
        let out = out_arg(out)?;
        let tag = StrategyTag::parse(str_arg(strategy)?).map_err(fail)?;
        *out = welfare::utility_loss(s, tag).map_err(fail)?.loss;
        Ok(())
    })
}

/// Detection-error probability with default quadrature settings.
///
/// # Safety
/// Valid handle and `out`.
#[no_mangle]
pub unsafe extern "C" fn rv_detection_error(scenario: *const RvScenario, out: *mut f64) -> RvStatus {
    guard(|| {
        let s = scenario_arg(scenario)?;
        let out = out_arg(out)?;
        *out = detection::detection_error(s, &DetectionOptions::default()).map_err(fail)?.epsilon;
        Ok(())
    })
}
