//! C ABI for `tsprox`.
//!
//! Every fallible function returns a [`TsproxStatus`]; on failure the message
//! is available from [`tsprox_last_error_message`] on the same thread.
//! Objects cross the boundary as opaque handles that must be released with
//! their matching `_free` function. Strings returned by the library are
//! released with [`tsprox_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tsprox::experiment::{self, ExperimentConfig, RunOptions, RunReport};
use tsprox::{metrics, Block, Error, Regularizer};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsproxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Capped = 4,
    Io = 5,
    Schema = 6,
    Internal = 7,
}

/// A regularizer `g`.
pub struct TsproxRegularizer(Regularizer);

/// The outcome of one experiment.
pub struct TsproxReport(RunReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> TsproxStatus {
    match e.root() {
        Error::Config { .. } => TsproxStatus::Config,
        Error::Capped { .. } => TsproxStatus::Capped,
        Error::Io(_) => TsproxStatus::Io,
        Error::Schema(_) => TsproxStatus::Schema,
        Error::Invariant(_) => TsproxStatus::Internal,
        _ => TsproxStatus::InvalidArgument,
    }
}

struct Fail(TsproxStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(TsproxStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TsproxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            TsproxStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside tsprox");
            TsproxStatus::Internal
        }
    }
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a>(p: *mut f64, n: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(TsproxStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn reg<'a>(g: *const TsproxRegularizer) -> Result<&'a Regularizer, Fail> {
    g.as_ref().map(|g| &g.0).ok_or_else(|| null("regularizer"))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on this thread.
#[no_mangle]
pub extern "C" fn tsprox_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn tsprox_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn tsprox_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// `g ≡ 0`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tsprox_regularizer_zero(out: *mut *mut TsproxRegularizer) -> TsproxStatus {
    guard(|| put(out, TsproxRegularizer(Regularizer::Zero)))
}

/// `g = μ‖·‖₁`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tsprox_regularizer_l1(mu: f64, out: *mut *mut TsproxRegularizer) -> TsproxStatus {
    guard(|| {
        let g = Regularizer::L1 { mu };
        g.validate(0)?;
        put(out, TsproxRegularizer(g))
    })
}

/// Indicator of `[lo, hi]` in `n` dimensions.
///
/// # Safety
/// `lo` and `hi` must point to `n` doubles; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tsprox_regularizer_box(
    lo: *const f64,
    hi: *const f64,
    n: usize,
    out: *mut *mut TsproxRegularizer,
) -> TsproxStatus {
    guard(|| {
        let g = Regularizer::Box {
            lo: slice(lo, n, "lo")?.to_vec(),
            hi: slice(hi, n, "hi")?.to_vec(),
        };
        g.validate(n)?;
        put(out, TsproxRegularizer(g))
    })
}

/// Indicator of a product of simplices with the given consecutive block
/// lengths, plus `μ‖·‖₁` (pass `mu = 0` for the plain indicator).
///
/// # Safety
/// `lens` must point to `blocks` lengths; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tsprox_regularizer_simplex(
    lens: *const usize,
    blocks: usize,
    mu: f64,
    out: *mut *mut TsproxRegularizer,
) -> TsproxStatus {
    guard(|| {
        if blocks == 0 || lens.is_null() {
            return Err(null("lens"));
        }
        let lens = std::slice::from_raw_parts(lens, blocks);
        let b = Block::consecutive(lens);
        let n = lens.iter().sum();
        let g = if mu == 0.0 {
            Regularizer::Simplex { blocks: b }
        } else {
            Regularizer::SimplexL1 { blocks: b, mu }
        };
        g.validate(n)?;
        put(out, TsproxRegularizer(g))
    })
}

/// Regularizer from its JSON form, e.g. `{"kind":"l1","mu":0.1}`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tsprox_regularizer_from_json(
    json: *const c_char,
    out: *mut *mut TsproxRegularizer,
) -> TsproxStatus {
    guard(|| {
        let g: Regularizer = serde_json::from_str(text(json, "json")?)
            .map_err(|e| Fail(TsproxStatus::Schema, e.to_string()))?;
        put(out, TsproxRegularizer(g))
    })
}

/// # Safety
/// `g` must come from a `tsprox_regularizer_*` constructor and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn tsprox_regularizer_free(g: *mut TsproxRegularizer) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// `g(x)`; `INFINITY` outside the domain.
///
/// # Safety
/// `x` must point to `n` doubles; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tsprox_regularizer_value(
    g: *const TsproxRegularizer,
    x: *const f64,
    n: usize,
    out: *mut f64,
) -> TsproxStatus {
    guard(|| {
        let g = reg(g)?;
        g.validate(n)?;
        let v = g.value(slice(x, n, "x")?);
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// `out ← prox_{ηg}(x − η d)`.
///
/// # Safety
/// `x`, `d` and `out` must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn tsprox_prox_grad_map(
    g: *const TsproxRegularizer,
    x: *const f64,
    d: *const f64,
    n: usize,
    eta: f64,
    out: *mut f64,
) -> TsproxStatus {
    guard(|| {
        let v = tsprox::prox_grad_map(reg(g)?, slice(x, n, "x")?, slice(d, n, "d")?, eta)?;
        slice_mut(out, n, "out")?.copy_from_slice(&v);
        Ok(())
    })
}

/// `out ← (x − prox_{ηg}(x − η d)) / η`.
///
/// # Safety
/// `x`, `d` and `out` must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn tsprox_prox_residual(
    g: *const TsproxRegularizer,
    x: *const f64,
    d: *const f64,
    n: usize,
    eta: f64,
    out: *mut f64,
) -> TsproxStatus {
    guard(|| {
        let v = tsprox::prox_residual(reg(g)?, slice(x, n, "x")?, slice(d, n, "d")?, eta)?;
        slice_mut(out, n, "out")?.copy_from_slice(&v);
        Ok(())
    })
}

/// `‖(x − prox_{ηg}(x − η d)) / η‖²`.
///
/// # Safety
/// `x` and `d` must point to `n` doubles; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tsprox_residual_norm_sq(
    g: *const TsproxRegularizer,
    x: *const f64,
    d: *const f64,
    n: usize,
    eta: f64,
    out: *mut f64,
) -> TsproxStatus {
    guard(|| {
        let v = tsprox::residual_norm_sq(reg(g)?, slice(x, n, "x")?, slice(d, n, "d")?, eta)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Euclidean projection onto the probability simplex.
///
/// # Safety
/// `v` and `out` must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn tsprox_project_simplex(v: *const f64, n: usize, out: *mut f64) -> TsproxStatus {
    guard(|| {
        let p = tsprox::project_simplex(slice(v, n, "v")?)?;
        slice_mut(out, n, "out")?.copy_from_slice(&p);
        Ok(())
    })
}

/// `(2/w²)(Tδ² + V)`.
#[no_mangle]
pub extern "C" fn tsprox_bound_regret_det(horizon: usize, w: usize, delta: f64, variation: f64) -> f64 {
    metrics::bound_thm_regret_det(horizon, w, delta, variation)
}

/// `2(T/w²)(δ² + 7σ²) + (6/w²)V`.
#[no_mangle]
pub extern "C" fn tsprox_bound_regret_stoch(
    horizon: usize,
    w: usize,
    delta: f64,
    sigma: f64,
    variation: f64,
) -> f64 {
    metrics::bound_thm_regret_stoch(horizon, w, delta, sigma, variation)
}

/// `2w²(g(x₁) + 2M) / ((2 − ηL)ηδ²)`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tsprox_bound_queries_det(
    w: usize,
    g_x1: f64,
    m: f64,
    eta: f64,
    smoothness: f64,
    delta: f64,
    out: *mut f64,
) -> TsproxStatus {
    guard(|| {
        let v = metrics::bound_thm_queries_det(w, g_x1, m, eta, smoothness, delta)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// `2w²(g(x₁) + 2M) / ((1 − η(L+1))ηδ² − σ²)`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tsprox_bound_queries_stoch(
    w: usize,
    g_x1: f64,
    m: f64,
    eta: f64,
    smoothness: f64,
    delta: f64,
    sigma: f64,
    out: *mut f64,
) -> TsproxStatus {
    guard(|| {
        let v = metrics::bound_thm_queries_stoch(w, g_x1, m, eta, smoothness, delta, sigma)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Window and horizon of the offline reduction.
///
/// # Safety
/// `window` and `horizon` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tsprox_offline_params(
    epsilon: f64,
    delta: f64,
    sigma: f64,
    c: f64,
    window: *mut usize,
    horizon: *mut usize,
) -> TsproxStatus {
    guard(|| {
        let p = metrics::offline_params(epsilon, delta, sigma, c)?;
        *window.as_mut().ok_or_else(|| null("window"))? = p.window;
        *horizon.as_mut().ok_or_else(|| null("horizon"))? = p.horizon;
        Ok(())
    })
}

fn run(cfg: ExperimentConfig, jobs: usize) -> Result<TsproxReport, Fail> {
    let opts = RunOptions {
        jobs: (jobs > 0).then_some(jobs),
        out: None,
    };
    Ok(TsproxReport(experiment::run_experiment(&cfg, &opts)?))
}

/// Runs a built-in experiment without writing artifacts. `jobs = 0` uses
/// all cores.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tsprox_run_preset(
    name: *const c_char,
    seed: u64,
    jobs: usize,
    out: *mut *mut TsproxReport,
) -> TsproxStatus {
    guard(|| {
        let mut cfg = experiment::preset(text(name, "name")?)?;
        cfg.seed = seed;
        cfg.out = None;
        put(out, run(cfg, jobs)?)
    })
}

/// Runs an experiment from TOML or JSON text. Artifacts are written only if
/// the configuration names an output directory.
///
/// # Safety
/// `config` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tsprox_run_config(
    config: *const c_char,
    jobs: usize,
    out: *mut *mut TsproxReport,
) -> TsproxStatus {
    guard(|| {
        let cfg = ExperimentConfig::parse(text(config, "config")?)?;
        put(out, run(cfg, jobs)?)
    })
}

/// Whether every asserted check passed; 0 for a null handle.
///
/// # Safety
/// `r` must be null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn tsprox_report_passed(r: *const TsproxReport) -> bool {
    r.as_ref().is_some_and(|r| r.0.passed)
}

/// Number of summary rows; 0 for a null handle.
///
/// # Safety
/// `r` must be null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn tsprox_report_rows(r: *const TsproxReport) -> usize {
    r.as_ref().map_or(0, |r| r.0.rows.len())
}

/// The report as JSON; release with [`tsprox_string_free`].
///
/// # Safety
/// `r` must be a live report handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tsprox_report_json(r: *const TsproxReport, out: *mut *mut c_char) -> TsproxStatus {
    guard(|| {
        let r = r.as_ref().ok_or_else(|| null("report"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = serde_json::to_string(&r.0).map_err(|e| Fail(TsproxStatus::Internal, e.to_string()))?;
        *out = CString::new(s)
            .map_err(|e| Fail(TsproxStatus::Internal, e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `r` must come from `tsprox_run_*` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn tsprox_report_free(r: *mut TsproxReport) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}
