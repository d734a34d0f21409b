//! C ABI over `kcm_lab`.
//!
//! Models are opaque handles created by [`kcm_model_new`] and released with
//! [`kcm_model_free`]. Every fallible call returns a [`KcmStatus`]; on failure
//! [`kcm_last_error`] describes the most recent error of the calling thread.
//! Configurations cross the boundary as NUL-terminated `0`/`1` strings
//! (`1` = healthy) together with the site of their first character. Strings
//! returned by the library are freed with [`kcm_string_free`].

use std::cell::RefCell;
use std::ffi::{CStr, CString, c_char};
use std::panic::{AssertUnwindSafe, catch_unwind};
use std::ptr;

use kcm_lab::bootstrap::bp_closure;
use kcm_lab::duality::{ExactDuality, SetDescriptor};
use kcm_lab::models::{dfp_edge_rates, flip_rate};
use kcm_lab::sim::{build_timeline, evolve_final};
use kcm_lab::spectral::{Restriction, chain, log_sobolev_of_chain, spectral_gap, stationary_vector};
use kcm_lab::{BoundaryCondition, Configuration, Error, ModelKind, ModelSpec, SiteState, TypeMap, Window};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KcmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidString = 2,
    InvalidParameter = 3,
    InvalidConfiguration = 4,
    UnsupportedModel = 5,
    CapExceeded = 6,
    Numerical = 7,
    Internal = 8,
}

/// Opaque model handle.
pub struct KcmModel {
    spec: ModelSpec,
}

/// Rates of one DFP edge.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KcmDfpRates {
    pub create: f64,
    pub annihilate: f64,
    pub swap: f64,
    pub p_hat: f64,
}

/// Both sides of an exact duality identity.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KcmDualitySides {
    pub lhs: f64,
    pub rhs: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> KcmStatus {
    match e {
        Error::InvalidConfiguration(_) | Error::OutOfRange { .. } | Error::InvalidWindow(_) | Error::WindowMismatch(_) => {
            KcmStatus::InvalidConfiguration
        }
        Error::UnsupportedModel(_) => KcmStatus::UnsupportedModel,
        Error::CapExceeded { .. } => KcmStatus::CapExceeded,
        Error::Numerical(_) | Error::Optimization(_) | Error::Reducible { .. } | Error::NotReversible(_) => {
            KcmStatus::Numerical
        }
        _ => KcmStatus::InvalidParameter,
    }
}

enum Fail {
    Status(KcmStatus, String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, converting errors and panics into a status and a stored message.
fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> KcmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KcmStatus::Ok,
        Ok(Err(Fail::Status(s, m))) => {
            set_error(m);
            s
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            KcmStatus::Internal
        }
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(KcmStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null and NUL-terminated per the caller's contract.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail::Status(KcmStatus::InvalidString, format!("{what} is not UTF-8")))
}

/// # Safety
/// `p` is null or a live handle from [`kcm_model_new`].
unsafe fn model<'a>(p: *const KcmModel) -> Result<&'a ModelSpec, Fail> {
    // SAFETY: see above.
    unsafe { p.as_ref() }.map(|m| &m.spec).ok_or_else(|| null("model"))
}

/// # Safety
/// `out` is null or valid for a write of `T`.
unsafe fn put<T>(out: *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    // SAFETY: non-null and writable per the caller's contract.
    unsafe { out.write(v) };
    Ok(())
}

fn bc(left: i32, right: i32) -> Result<BoundaryCondition, Fail> {
    let s = |v: i32| match v {
        0 => Ok(SiteState::Infected),
        1 => Ok(SiteState::Healthy),
        _ => Err(Fail::Status(KcmStatus::InvalidParameter, format!("boundary state {v} is not 0 or 1"))),
    };
    Ok(BoundaryCondition::new(s(left)?, s(right)?))
}

fn opt(v: f64) -> Option<f64> {
    (!v.is_nan()).then_some(v)
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s).map_or(ptr::null_mut(), CString::into_raw)
}

/// Creates a model. `kind` is one of `fa1f`, `east`, `east-polluted`,
/// `delta-west`, `babp`, `dfp`. Pass NaN for parameters that do not apply;
/// `types` (East-polluted only) is a periodic `E`/`F` pattern anchored at 0,
/// or null.
///
/// # Safety
/// `kind` and non-null `types` are NUL-terminated strings; `out` is writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn kcm_model_new(
    kind: *const c_char,
    q: f64,
    lambda: f64,
    delta: f64,
    types: *const c_char,
    out: *mut *mut KcmModel,
) -> KcmStatus {
    guard(|| {
        let kind: ModelKind = unsafe { text(kind, "kind") }?.parse()?;
        let tm = if types.is_null() { None } else { Some(TypeMap::periodic(unsafe { text(types, "types") }?, 0)?) };
        let spec = ModelSpec::from_parts(kind, opt(q), opt(lambda), opt(delta), tm)?;
        unsafe { put(out, Box::into_raw(Box::new(KcmModel { spec }))) }
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `m` is null or a handle from [`kcm_model_new`] not yet freed.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn kcm_model_free(m: *mut KcmModel) {
    if !m.is_null() {
        // SAFETY: created by Box::into_raw in kcm_model_new.
        drop(unsafe { Box::from_raw(m) });
    }
}

/// Infected density `q` of the model.
///
/// # Safety
/// `m` is a live handle; `out` is writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn kcm_model_q(m: *const KcmModel, out: *mut f64) -> KcmStatus {
    guard(|| unsafe { put(out, model(m)?.q) })
}

/// Flip rate at site `x` of `config` (first character at site `lo`), with
/// boundary states `bc_left`, `bc_right` (0 infected, 1 healthy).
///
/// # Safety
/// `m` is a live handle, `config` a NUL-terminated string, `out` writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn kcm_flip_rate(
    m: *const KcmModel,
    config: *const c_char,
    lo: i64,
    bc_left: i32,
    bc_right: i32,
    x: i64,
    out: *mut f64,
) -> KcmStatus {
    guard(|| {
        let spec = unsafe { model(m) }?;
        let eta = Configuration::parse_at(unsafe { text(config, "config") }?, lo)?;
        let r = flip_rate(spec, &eta, &bc(bc_left, bc_right)?, x)?;
        unsafe { put(out, r) }
    })
}

/// Edge rates of the double flip process with parameter `lambda`.
///
/// # Safety
/// `out` is writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn kcm_dfp_edge_rates(lambda: f64, out: *mut KcmDfpRates) -> KcmStatus {
    guard(|| {
        let r = dfp_edge_rates(lambda)?;
        let v = KcmDfpRates { create: r.r_create, annihilate: r.r_annihilate, swap: r.r_swap, p_hat: r.p_hat };
        unsafe { put(out, v) }
    })
}

/// Bootstrap closure of `config`; `*out` receives a new string.
///
/// # Safety
/// `m` is a live handle, `config` a NUL-terminated string, `out` writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn kcm_bp_closure(
    m: *const KcmModel,
    config: *const c_char,
    lo: i64,
    bc_left: i32,
    bc_right: i32,
    out: *mut *mut c_char,
) -> KcmStatus {
    guard(|| {
        let spec = unsafe { model(m) }?;
        let eta = Configuration::parse_at(unsafe { text(config, "config") }?, lo)?;
        let c = bp_closure(spec, &eta, &bc(bc_left, bc_right)?)?;
        unsafe { put(out, into_c_string(c.to_string())) }
    })
}

/// Spectral gap of the chain on sites `0..n-1`.
///
/// # Safety
/// `m` is a live handle; `out` is writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn kcm_spectral_gap(
    m: *const KcmModel,
    n: usize,
    bc_left: i32,
    bc_right: i32,
    out: *mut f64,
) -> KcmStatus {
    guard(|| {
        let spec = unsafe { model(m) }?;
        let g = chain(spec, Window::sites(n)?, bc(bc_left, bc_right)?, Restriction::None)?;
        let mu = stationary_vector(&g)?;
        unsafe { put(out, spectral_gap(&g, &mu)?) }
    })
}

/// Log-Sobolev constant of the chain on sites `0..n-1`. `restriction` uses
/// the textual form (`none`, `at_least_one_infection`, `parity(+)`, ...);
/// null means `none`.
///
/// # Safety
/// `m` is a live handle; non-null `restriction` is NUL-terminated; `out` is
/// writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn kcm_log_sobolev(
    m: *const KcmModel,
    n: usize,
    bc_left: i32,
    bc_right: i32,
    restriction: *const c_char,
    out: *mut f64,
) -> KcmStatus {
    guard(|| {
        let spec = unsafe { model(m) }?;
        let r: Restriction =
            if restriction.is_null() { Restriction::None } else { unsafe { text(restriction, "restriction") }?.parse()? };
        let g = chain(spec, Window::sites(n)?, bc(bc_left, bc_right)?, r)?;
        unsafe { put(out, log_sobolev_of_chain(&g)?.c_sob) }
    })
}

/// Exact BABP self-duality sides on the window `[lo, hi]` for explicit sets
/// `B` and `B'`.
///
/// # Safety
/// `b` points to `nb` sites and `b_prime` to `nb_prime` sites (either may be
/// null when its length is 0); `out` is writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn kcm_self_duality_exact(
    lambda: f64,
    lo: i64,
    hi: i64,
    b: *const i64,
    nb: usize,
    b_prime: *const i64,
    nb_prime: usize,
    t: f64,
    out: *mut KcmDualitySides,
) -> KcmStatus {
    guard(|| {
        let slice = |p: *const i64, n: usize, what: &str| -> Result<Vec<i64>, Fail> {
            if n == 0 {
                return Ok(Vec::new());
            }
            if p.is_null() {
                return Err(null(what));
            }
            // SAFETY: p points to n elements per the caller's contract.
            Ok(unsafe { std::slice::from_raw_parts(p, n) }.to_vec())
        };
        let bs = slice(b, nb, "b")?;
        let bp = slice(b_prime, nb_prime, "b_prime")?;
        let ex = ExactDuality::new(lambda, Window::line(lo, hi)?)?;
        let r = ex.self_duality(&bs, &SetDescriptor::explicit(&bp), t)?;
        unsafe { put(out, KcmDualitySides { lhs: r.lhs.value, rhs: r.rhs.value }) }
    })
}

/// Final configuration after time `horizon` of the graphical construction
/// seeded by `seed`; `*out` receives a new string.
///
/// # Safety
/// `m` is a live handle, `config` a NUL-terminated string, `out` writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn kcm_simulate_final(
    m: *const KcmModel,
    config: *const c_char,
    lo: i64,
    bc_left: i32,
    bc_right: i32,
    horizon: f64,
    seed: u64,
    out: *mut *mut c_char,
) -> KcmStatus {
    guard(|| {
        let spec = unsafe { model(m) }?;
        let eta = Configuration::parse_at(unsafe { text(config, "config") }?, lo)?;
        let tl = build_timeline(spec, eta.window(), horizon, seed)?;
        let fin = evolve_final(spec, &eta, &bc(bc_left, bc_right)?, &tl)?;
        unsafe { put(out, into_c_string(fin.to_string())) }
    })
}

/// Message of the last failed call on this thread, as a new string (null if
/// there was none).
#[unsafe(no_mangle)]
pub extern "C" fn kcm_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |c| c.clone().into_raw()))
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` is null or a string from this library not yet freed.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn kcm_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: created by CString::into_raw in this crate.
        drop(unsafe { CString::from_raw(s) });
    }
}
