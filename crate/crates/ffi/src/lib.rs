//! C ABI for the varpx solver.
//!
//! Objects cross the boundary as opaque handles created by `*_parse` /
//! `varpx_run` and released by the matching `*_free`. Every fallible call
//! returns a [`VarpxStatus`]; on failure the message is available through
//! [`varpx_last_error`] on the same thread. Panics never unwind into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use varpx::config::{parse_config, RunConfig};
use varpx::expspace::{luxemburg_norm, ExponentField};
use varpx::grid::{DomainSpec, GridFunction, Mesh};
use varpx::pipeline::{self, RunOptions, RunOutcome};
use varpx::Error;

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarpxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Hypothesis = 4,
    NotConverged = 5,
    Numerical = 6,
    Io = 7,
    BufferTooSmall = 8,
    OutOfRange = 9,
    Panic = 10,
}

/// A validated run configuration.
pub struct VarpxConfig {
    inner: RunConfig,
}

/// The outcome of a pipeline run.
pub struct VarpxRun {
    inner: RunOutcome,
    certificate_json: Option<String>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> VarpxStatus {
    match e {
        Error::Config { .. } | Error::Expr(_) => VarpxStatus::Config,
        Error::Hypothesis { .. } | Error::InvalidExponent(_) => VarpxStatus::Hypothesis,
        Error::NotConverged { .. } | Error::Infeasible(_) => VarpxStatus::NotConverged,
        Error::Io(_) => VarpxStatus::Io,
        Error::OutOfRange(_) | Error::Resolution { .. } | Error::MeshMismatch { .. } | Error::DegenerateDomain(_) => {
            VarpxStatus::OutOfRange
        }
        _ => VarpxStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), VarpxStatus>) -> VarpxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VarpxStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            VarpxStatus::Panic
        }
    }
}

fn fail(e: Error) -> VarpxStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn null(what: &str) -> VarpxStatus {
    set_error(format!("null pointer: {what}"));
    VarpxStatus::NullPointer
}

/// Copies `text` plus a NUL into `buf`; `needed` receives the full size.
/// Leaves the last-error slot alone so querying it is idempotent.
unsafe fn write_str(text: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> Result<(), VarpxStatus> {
    if !needed.is_null() {
        *needed = text.len() + 1;
    }
    if buf.is_null() || len < text.len() + 1 {
        return Err(VarpxStatus::BufferTooSmall);
    }
    std::ptr::copy_nonoverlapping(text.as_ptr() as *const c_char, buf, text.len());
    *buf.add(text.len()) = 0;
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn varpx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the last error message of this thread into `buf`.
///
/// # Safety
/// `buf` must be valid for `len` bytes (or null to query `needed`).
#[no_mangle]
pub unsafe extern "C" fn varpx_last_error(buf: *mut c_char, len: usize, needed: *mut usize) -> VarpxStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    guard(|| write_str(&msg, buf, len, needed))
}

/// Parses and validates a JSON run configuration.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn varpx_config_parse(json: *const c_char, out: *mut *mut VarpxConfig) -> VarpxStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let text = CStr::from_ptr(json).to_str().map_err(|e| {
            set_error(e.to_string());
            VarpxStatus::InvalidUtf8
        })?;
        let inner = parse_config(text).map_err(fail)?;
        *out = Box::into_raw(Box::new(VarpxConfig { inner }));
        Ok(())
    })
}

/// Overrides the mesh resolution of a parsed config.
///
/// # Safety
/// `cfg` must be a live handle from [`varpx_config_parse`].
#[no_mangle]
pub unsafe extern "C" fn varpx_config_set_resolution(cfg: *mut VarpxConfig, n: usize) -> VarpxStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        let mut next = cfg.inner.clone();
        next.resolution = n;
        varpx::config::prepare(&next).map_err(fail)?;
        cfg.inner = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle from [`varpx_config_parse`], freed once.
#[no_mangle]
pub unsafe extern "C" fn varpx_config_free(cfg: *mut VarpxConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the pipeline without writing files. A run that completes but is
/// not certified still returns `Ok` with a handle; inspect
/// [`varpx_run_exit_code`].
///
/// # Safety
/// `cfg` must be a live config handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn varpx_run(cfg: *const VarpxConfig, out: *mut *mut VarpxRun) -> VarpxStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let opts = RunOptions {
            no_artifacts: true,
            ..RunOptions::default()
        };
        let inner = pipeline::run(&cfg.inner, &opts).map_err(fail)?;
        let certificate_json = inner.certificate.as_ref().map(|c| c.to_json());
        *out = Box::into_raw(Box::new(VarpxRun {
            inner,
            certificate_json,
        }));
        Ok(())
    })
}

/// CLI-equivalent exit code: 0 certified, 2 not certified.
///
/// # Safety
/// `run` must be a live run handle.
#[no_mangle]
pub unsafe extern "C" fn varpx_run_exit_code(run: *const VarpxRun) -> i32 {
    run.as_ref().map_or(-1, |r| r.inner.exit_code)
}

/// Number of mesh nodes (length of each solution component).
///
/// # Safety
/// `run` must be a live run handle.
#[no_mangle]
pub unsafe extern "C" fn varpx_run_num_nodes(run: *const VarpxRun) -> usize {
    run.as_ref().map_or(0, |r| r.inner.mesh.num_nodes())
}

/// Copies solution component `component` (1 or 2) into `buf`.
///
/// # Safety
/// `run` must be a live run handle and `buf` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn varpx_run_solution(
    run: *const VarpxRun,
    component: u32,
    buf: *mut f64,
    len: usize,
) -> VarpxStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        if !(1..=2).contains(&component) {
            set_error(format!("component must be 1 or 2, got {component}"));
            return Err(VarpxStatus::OutOfRange);
        }
        let Some(z) = &run.inner.solution else {
            set_error(run.inner.trace.error.clone().unwrap_or_else(|| "no solution".into()));
            return Err(VarpxStatus::NotConverged);
        };
        let v = &z[component as usize - 1].values;
        if len < v.len() {
            set_error(format!("buffer of {len} doubles too small for {}", v.len()));
            return Err(VarpxStatus::BufferTooSmall);
        }
        std::ptr::copy_nonoverlapping(v.as_ptr(), buf, v.len());
        Ok(())
    })
}

/// Largest weak residual of the coupled system at the accepted pair.
///
/// # Safety
/// `run` must be a live run handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn varpx_run_residual(run: *const VarpxRun, out: *mut f64) -> VarpxStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        match &run.inner.certificate {
            Some(c) => {
                *out = c.residuals.max;
                Ok(())
            }
            None => {
                set_error(run.inner.trace.error.clone().unwrap_or_else(|| "no certificate".into()));
                Err(VarpxStatus::NotConverged)
            }
        }
    })
}

/// Copies the certificate JSON (NUL-terminated) into `buf`.
///
/// # Safety
/// `run` must be a live run handle, `buf` valid for `len` bytes or null.
#[no_mangle]
pub unsafe extern "C" fn varpx_run_certificate_json(
    run: *const VarpxRun,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> VarpxStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        match &run.certificate_json {
            Some(j) => write_str(j, buf, len, needed)
                .inspect_err(|_| set_error(format!("buffer of {len} bytes too small for {}", j.len() + 1))),
            None => {
                set_error(run.inner.trace.error.clone().unwrap_or_else(|| "no certificate".into()));
                Err(VarpxStatus::NotConverged)
            }
        }
    })
}

/// # Safety
/// `run` must be null or a handle from [`varpx_run`], freed once.
#[no_mangle]
pub unsafe extern "C" fn varpx_run_free(run: *mut VarpxRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Luxemburg norm of the P1 function with nodal values `u` and nodal
/// exponent `p` on a uniform grid of `n` cells over `(a, b)`.
///
/// # Safety
/// `u` and `p` must be valid for `n + 1` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn varpx_luxemburg_norm_1d(
    a: f64,
    b: f64,
    n: usize,
    u: *const f64,
    p: *const f64,
    out: *mut f64,
) -> VarpxStatus {
    guard(|| {
        if u.is_null() || p.is_null() || out.is_null() {
            return Err(null("u, p or out"));
        }
        let mesh = Mesh::build(DomainSpec::Interval(a, b), n).map_err(fail)?;
        let k = mesh.num_nodes();
        let u = GridFunction::new(std::slice::from_raw_parts(u, k).to_vec());
        let p = ExponentField::new(std::slice::from_raw_parts(p, k).to_vec()).map_err(fail)?;
        *out = luxemburg_norm(&u, &p, &mesh).map_err(fail)?;
        Ok(())
    })
}
