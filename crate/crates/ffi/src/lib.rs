//! C ABI for `silt-core`.
//!
//! Every entry point returns a [`SiltStatus`] and writes results through out
//! pointers. On failure the thread-local message from [`silt_last_error`]
//! explains why. Objects are opaque handles owned by the caller and released
//! with the matching `*_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use silt_core::harness::{run, ExperimentConfig, RunError, RunOptions};
use silt_core::variational::{solve_whole_space, SolveOptions, WholeSpace};
use silt_core::walk_kernel::{GreenKernel, IncrementLaw, LawSpec};
use silt_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SiltStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidLaw = 3,
    NotSubcritical = 4,
    MemoryCap = 5,
    Numerical = 6,
    Config = 7,
    /// Validation refused the config; the message lists every diagnostic.
    ConfigRefused = 8,
    Io = 9,
    Panic = 10,
}

/// Opaque increment law.
pub struct SiltLaw(IncrementLaw);

/// Opaque Green kernel `(lambda - A_N)^{-1}` on a torus.
pub struct SiltGreenKernel(GreenKernel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SiltStatus {
    match e {
        Error::InvalidParameter(_) | Error::UnboundedFunctional(_) => SiltStatus::InvalidArgument,
        Error::InvalidLaw(_) => SiltStatus::InvalidLaw,
        Error::NotSubcritical { .. } => SiltStatus::NotSubcritical,
        Error::MemoryCap { .. } => SiltStatus::MemoryCap,
        Error::Stagnation { .. } => SiltStatus::Numerical,
        Error::Config(_) | Error::Json(_) => SiltStatus::Config,
        Error::Io(_) => SiltStatus::Io,
    }
}

/// Runs `f`, recording its error message and turning panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (SiltStatus, String)>) -> SiltStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SiltStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            SiltStatus::Panic
        }
    }
}

fn core<T>(r: silt_core::Result<T>) -> Result<T, (SiltStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (SiltStatus, String) {
    (SiltStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, (SiltStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (SiltStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), (SiltStatus, String)> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn silt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn silt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

unsafe fn new_law(out: *mut *mut SiltLaw, law: silt_core::Result<IncrementLaw>) -> Result<(), (SiltStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    let law = core(law)?;
    out.write(Box::into_raw(Box::new(SiltLaw(law))));
    Ok(())
}

/// Product law with independent axes, each ±1 with mass 3/8 and ±2 with 1/8.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn silt_law_finite_range(dim: usize, out: *mut *mut SiltLaw) -> SiltStatus {
    guard(|| new_law(out, IncrementLaw::finite_range(dim)))
}

/// Simple random walk.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn silt_law_nearest_neighbor(dim: usize, out: *mut *mut SiltLaw) -> SiltStatus {
    guard(|| new_law(out, IncrementLaw::nearest_neighbor(dim)))
}

/// Symmetric law with tail `|x|^{-dim-alpha}` truncated at `truncation`
/// (0 picks the default for the dimension).
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn silt_law_power_tail(
    dim: usize,
    alpha: f64,
    truncation: u64,
    out: *mut *mut SiltLaw,
) -> SiltStatus {
    guard(|| new_law(out, IncrementLaw::power_tail(dim, alpha, (truncation > 0).then_some(truncation))))
}

/// Law from its TOML text record (the `[law]` table of a config).
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn silt_law_from_toml(toml: *const c_char, out: *mut *mut SiltLaw) -> SiltStatus {
    guard(|| {
        let spec = core(LawSpec::from_text(text(toml, "toml")?))?;
        new_law(out, IncrementLaw::from_spec(&spec))
    })
}

/// # Safety
/// `law` must come from a `silt_law_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn silt_law_free(law: *mut SiltLaw) {
    if !law.is_null() {
        drop(Box::from_raw(law));
    }
}

/// Energy weight `sigma` of the law's small-frequency symbol.
///
/// # Safety
/// `law` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn silt_law_sigma(law: *const SiltLaw, out: *mut f64) -> SiltStatus {
    guard(|| {
        let law = law.as_ref().ok_or_else(|| null("law"))?;
        put(out, law.0.sigma(), "out")
    })
}

/// # Safety
/// `law` must be a live handle; `dim` and `alpha` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn silt_law_shape(law: *const SiltLaw, dim: *mut usize, alpha: *mut f64) -> SiltStatus {
    guard(|| {
        let law = law.as_ref().ok_or_else(|| null("law"))?;
        put(dim, law.0.dim(), "dim")?;
        put(alpha, law.0.alpha(), "alpha")
    })
}

/// Green kernel of `law` on the torus of side `side` with killing `lambda`.
///
/// # Safety
/// `law` must be a live handle and `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn silt_green_new(
    law: *const SiltLaw,
    side: usize,
    lambda: f64,
    out: *mut *mut SiltGreenKernel,
) -> SiltStatus {
    guard(|| {
        let law = law.as_ref().ok_or_else(|| null("law"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let k = core(GreenKernel::new(&law.0, side, lambda))?;
        out.write(Box::into_raw(Box::new(SiltGreenKernel(k))));
        Ok(())
    })
}

/// # Safety
/// `kernel` must come from `silt_green_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn silt_green_free(kernel: *mut SiltGreenKernel) {
    if !kernel.is_null() {
        drop(Box::from_raw(kernel));
    }
}

/// Number of torus sites, the length of vectors passed to `silt_green_apply`.
///
/// # Safety
/// `kernel` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn silt_green_len(kernel: *const SiltGreenKernel, out: *mut usize) -> SiltStatus {
    guard(|| {
        let k = kernel.as_ref().ok_or_else(|| null("kernel"))?;
        put(out, k.0.grid().len(), "out")
    })
}

/// `G(x, y)`; `x` and `y` point to three coordinates each (unused axes 0).
///
/// # Safety
/// `kernel` must be a live handle, `x` and `y` valid for three reads, `out`
/// valid for a write.
#[no_mangle]
pub unsafe extern "C" fn silt_green_value(
    kernel: *const SiltGreenKernel,
    x: *const i64,
    y: *const i64,
    out: *mut f64,
) -> SiltStatus {
    guard(|| {
        let k = kernel.as_ref().ok_or_else(|| null("kernel"))?;
        if x.is_null() || y.is_null() {
            return Err(null("site"));
        }
        let site = |p: *const i64| {
            let s = std::slice::from_raw_parts(p, 3);
            [s[0], s[1], s[2]]
        };
        put(out, k.0.value(&site(x), &site(y)), "out")
    })
}

unsafe fn apply_with(
    kernel: *const SiltGreenKernel,
    input: *const f64,
    output: *mut f64,
    len: usize,
    f: fn(&GreenKernel, &[f64]) -> Vec<f64>,
) -> SiltStatus {
    guard(|| {
        let k = kernel.as_ref().ok_or_else(|| null("kernel"))?;
        if input.is_null() || output.is_null() {
            return Err(null("buffer"));
        }
        let n = k.0.grid().len();
        if len != n {
            return Err((SiltStatus::InvalidArgument, format!("buffer length {len}, torus has {n} sites")));
        }
        let r = f(&k.0, std::slice::from_raw_parts(input, n));
        std::slice::from_raw_parts_mut(output, n).copy_from_slice(&r);
        Ok(())
    })
}

/// `output = G input` over row-major site vectors of length `len`.
///
/// # Safety
/// `input` and `output` must be valid for `len` elements each.
#[no_mangle]
pub unsafe extern "C" fn silt_green_apply(
    kernel: *const SiltGreenKernel,
    input: *const f64,
    output: *mut f64,
    len: usize,
) -> SiltStatus {
    apply_with(kernel, input, output, len, GreenKernel::apply)
}

/// `output = (lambda - A_N) input`.
///
/// # Safety
/// `input` and `output` must be valid for `len` elements each.
#[no_mangle]
pub unsafe extern "C" fn silt_green_apply_inverse(
    kernel: *const SiltGreenKernel,
    input: *const f64,
    output: *mut f64,
    len: usize,
) -> SiltStatus {
    apply_with(kernel, input, output, len, GreenKernel::apply_inverse)
}

/// Whole-space constant `rho(a)` for energy weight `sigma`, solved in a
/// periodic box of length `box_len` with `resolution` points per axis.
/// `certified` receives 1 when the solver met its residual tolerance.
///
/// # Safety
/// `value` and `certified` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn silt_rho_whole_space(
    dim: usize,
    alpha: f64,
    p: f64,
    a: f64,
    sigma: f64,
    box_len: f64,
    resolution: usize,
    value: *mut f64,
    certified: *mut i32,
) -> SiltStatus {
    guard(|| {
        if value.is_null() || certified.is_null() {
            return Err(null("out"));
        }
        let r = core(solve_whole_space(
            WholeSpace::Rho { a },
            dim,
            alpha,
            p,
            box_len,
            resolution,
            sigma,
            &SolveOptions::default(),
        ))?;
        value.write(r.result.value);
        certified.write(r.result.certified as i32);
        Ok(())
    })
}

/// Runs a TOML experiment config, writing artifacts into `out_dir`.
/// `exit_code` receives the run status as the CLI would report it.
///
/// # Safety
/// `config` and `out_dir` must be NUL-terminated strings; `exit_code` valid
/// for a write.
#[no_mangle]
pub unsafe extern "C" fn silt_run_config(
    config: *const c_char,
    out_dir: *const c_char,
    workers: usize,
    exit_code: *mut i32,
) -> SiltStatus {
    guard(|| {
        let cfg = core(ExperimentConfig::from_toml(text(config, "config")?))?;
        let dir = text(out_dir, "out_dir")?;
        if exit_code.is_null() {
            return Err(null("exit_code"));
        }
        let opts = RunOptions {
            workers: (workers > 0).then_some(workers),
        };
        match run(&cfg, Path::new(dir), &opts) {
            Ok(report) => {
                exit_code.write(report.status.exit_code());
                Ok(())
            }
            Err(e @ RunError::Invalid(_)) => Err((SiltStatus::ConfigRefused, e.to_string())),
            Err(RunError::Failed(e)) => Err((status_of(&e), e.to_string())),
        }
    })
}
