//! C interface to the spatial-cvm library.
//!
//! Every fallible function returns a [`SpcvmStatus`]; on failure the message
//! is available from [`spcvm_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use spatial_cvm::calibration::{calibrate, CalibrationResult};
use spatial_cvm::config::calibration_from_toml;
use spatial_cvm::mvn::{chi2_survival, mvn_cdf, CorrelationMatrix, OrthantQuery};
use spatial_cvm::rank_test::{FieldDataset, PreparedTest};
use spatial_cvm::Error;

/// Status codes. Values 2–4 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpcvmStatus {
    Ok = 0,
    NullPointer = 1,
    /// Invalid configuration or argument.
    Config = 2,
    /// Malformed data, calibration mismatch or i/o failure.
    Data = 3,
    /// Numerical or calibration failure.
    Numeric = 4,
    Panic = 5,
}

/// Null-distribution calibration, owned by the caller. Free with [`spcvm_calibration_free`].
pub struct SpcvmCalibration {
    result: CalibrationResult,
    test: PreparedTest,
}

/// Outcome of one test.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SpcvmTestResult {
    pub tn: f64,
    pub a: f64,
    pub nu: f64,
    pub p_value: f64,
    pub eff_n: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SpcvmStatus {
    match e.exit_code() {
        2 => SpcvmStatus::Config,
        3 => SpcvmStatus::Data,
        _ => SpcvmStatus::Numeric,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (SpcvmStatus, String)>) -> SpcvmStatus {
    set_error(String::new());
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpcvmStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SpcvmStatus::Panic
        }
    }
}

fn lib<T>(r: spatial_cvm::Result<T>) -> Result<T, (SpcvmStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (SpcvmStatus, String) {
    (SpcvmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (SpcvmStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (SpcvmStatus::Config, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (SpcvmStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn boxed(result: CalibrationResult) -> Result<*mut SpcvmCalibration, (SpcvmStatus, String)> {
    let test = lib(PreparedTest::new(&result))?;
    Ok(Box::into_raw(Box::new(SpcvmCalibration { result, test })))
}

/// Message of the last failure on this thread, or an empty string. The
/// pointer stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn spcvm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn spcvm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Computes a calibration from flat TOML keys (`phi` is required).
/// `cache_dir` may be null to bypass the cache.
///
/// # Safety
/// `config_toml` and a non-null `cache_dir` must be NUL-terminated strings;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spcvm_calibration_new(
    config_toml: *const c_char,
    cache_dir: *const c_char,
    out: *mut *mut SpcvmCalibration,
) -> SpcvmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(config_toml, "config_toml")?;
        let dir = if cache_dir.is_null() {
            None
        } else {
            Some(Path::new(str_arg(cache_dir, "cache_dir")?))
        };
        let config = lib(calibration_from_toml(text))?;
        let (result, _) = lib(calibrate(&config, dir))?;
        *out = boxed(result)?;
        Ok(())
    })
}

/// Loads a calibration record written by [`spcvm_calibration_save`] or the
/// command-line tool.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spcvm_calibration_load(path: *const c_char, out: *mut *mut SpcvmCalibration) -> SpcvmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let result = lib(CalibrationResult::load(Path::new(path)))?;
        *out = boxed(result)?;
        Ok(())
    })
}

/// # Safety
/// `cal` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn spcvm_calibration_save(cal: *const SpcvmCalibration, path: *const c_char) -> SpcvmStatus {
    guard(|| {
        let cal = cal.as_ref().ok_or_else(|| null("cal"))?;
        let path = str_arg(path, "path")?;
        lib(cal.result.save(Path::new(path)))
    })
}

/// # Safety
/// `cal` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spcvm_calibration_free(cal: *mut SpcvmCalibration) {
    if !cal.is_null() {
        drop(Box::from_raw(cal));
    }
}

/// Scale of the approximating chi-square; NaN for a null handle.
///
/// # Safety
/// `cal` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spcvm_calibration_a(cal: *const SpcvmCalibration) -> f64 {
    cal.as_ref().map_or(f64::NAN, |c| c.result.a)
}

/// Degrees of freedom of the approximating chi-square; NaN for a null handle.
///
/// # Safety
/// `cal` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spcvm_calibration_nu(cal: *const SpcvmCalibration) -> f64 {
    cal.as_ref().map_or(f64::NAN, |c| c.result.nu)
}

/// Effective sample size of the kernel weights; NaN for a null handle.
///
/// # Safety
/// `cal` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spcvm_calibration_eff_n(cal: *const SpcvmCalibration) -> f64 {
    cal.as_ref().map_or(f64::NAN, |c| c.result.eff_n)
}

/// Expected data shape `(k, n_sites, p)`.
///
/// # Safety
/// `cal` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn spcvm_calibration_shape(
    cal: *const SpcvmCalibration,
    k: *mut usize,
    n_sites: *mut usize,
    p: *mut usize,
) -> SpcvmStatus {
    guard(|| {
        let cal = cal.as_ref().ok_or_else(|| null("cal"))?;
        if k.is_null() || n_sites.is_null() || p.is_null() {
            return Err(null("output pointer"));
        }
        let m = &cal.result.metadata;
        *k = m.k;
        *n_sites = m.grid_size * m.grid_size;
        *p = m.p;
        Ok(())
    })
}

/// Runs the test. `values` holds `k * n_sites * p` numbers ordered field,
/// then site (x fastest), then variable.
///
/// # Safety
/// `cal` must be a live handle, `values` must point to `k * n_sites * p`
/// readable doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spcvm_run_test(
    cal: *const SpcvmCalibration,
    values: *const f64,
    k: usize,
    n_sites: usize,
    p: usize,
    out: *mut SpcvmTestResult,
) -> SpcvmStatus {
    guard(|| {
        let cal = cal.as_ref().ok_or_else(|| null("cal"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let block = n_sites
            .checked_mul(p)
            .filter(|b| k.checked_mul(*b).is_some())
            .ok_or((SpcvmStatus::Config, "data shape overflows".to_string()))?;
        let data = slice_arg(values, k * block, "values")?;
        let fields = if block == 0 {
            vec![Vec::new(); k]
        } else {
            data.chunks(block).map(<[f64]>::to_vec).collect()
        };
        let dataset = lib(FieldDataset::new(fields, n_sites, p))?;
        let r = lib(cal.test.run(&dataset))?;
        *out = SpcvmTestResult {
            tn: r.tn,
            a: r.a,
            nu: r.nu,
            p_value: r.p_value,
            eff_n: r.eff_n,
        };
        Ok(())
    })
}

/// `P(Z <= upper)` for `Z ~ N(0, corr)`, `corr` a row-major `dim * dim`
/// correlation matrix, `1 <= dim <= 4`.
///
/// # Safety
/// `upper` must hold `dim` doubles, `corr` `dim * dim` doubles, and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn spcvm_mvn_cdf(
    dim: usize,
    upper: *const f64,
    corr: *const f64,
    tol: f64,
    seed: u64,
    out: *mut f64,
) -> SpcvmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let upper = slice_arg(upper, dim, "upper")?;
        let entries = slice_arg(corr, dim.saturating_mul(dim), "corr")?;
        let corr = lib(CorrelationMatrix::new(dim, entries.to_vec()))?;
        *out = lib(mvn_cdf(&OrthantQuery::new(upper, &corr).tol(tol).seed(seed)))?;
        Ok(())
    })
}

/// Upper tail of the chi-square distribution with `nu` degrees of freedom.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spcvm_chi2_survival(x: f64, nu: f64, out: *mut f64) -> SpcvmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if x.is_nan() || nu.is_nan() || nu <= 0.0 {
            return Err((SpcvmStatus::Config, format!("need x not NaN and nu > 0, got x={x}, nu={nu}")));
        }
        *out = chi2_survival(x, nu);
        Ok(())
    })
}
