//! C interface to the lrcox solver.
//!
//! Datasets and fits are opaque heap handles released with their `_free`
//! functions. Every fallible call returns an [`LrcoxStatus`]; the message of
//! the most recent failure on the calling thread is available from
//! [`lrcox_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lrcox::matrix::ConstraintPair;
use lrcox::{
    fit, FitConfig, FitResult, HessianMode, LrCoxError, Population, SurvivalDataset, Termination,
    TieMode,
};
use nalgebra::DMatrix;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrcoxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Data = 3,
    /// The fit finished without meeting the feasibility tolerance; the
    /// (projected, feasible) result is still returned.
    RhoCapHit = 4,
    Internal = 5,
}

/// Solver options; obtain defaults from [`lrcox_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LrcoxOptions {
    pub mu: f64,
    /// Maximum rank; 0 means min(p, J).
    pub rank: usize,
    /// Maximum number of nonzero rows; 0 means p.
    pub sparsity: usize,
    pub rho0: f64,
    pub incr_factor: f64,
    pub k_max: usize,
    pub feas_tol: f64,
    pub obj_tol: f64,
    pub max_rho_steps: usize,
    /// 0: standard Breslow, 1: squared tie-count weighting.
    pub tie_mode: c_int,
    /// 0: diagonal Hessian, 1: uniform bound.
    pub hessian_mode: c_int,
    /// Uniform bound value; nonpositive selects it automatically.
    pub phi: f64,
}

/// Opaque dataset handle.
pub struct LrcoxDataset {
    p: usize,
    populations: Vec<Population>,
}

/// Opaque fit handle.
pub struct LrcoxFit {
    result: FitResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &LrCoxError) -> LrcoxStatus {
    match e {
        LrCoxError::InvalidArgument { .. } => LrcoxStatus::InvalidArgument,
        LrCoxError::Singular(_) | LrCoxError::NonFiniteObjective { .. } => LrcoxStatus::Internal,
        _ => LrcoxStatus::Data,
    }
}

fn fail(status: LrcoxStatus, msg: impl Into<String>) -> LrcoxStatus {
    set_error(msg);
    status
}

fn guarded(f: impl FnOnce() -> LrcoxStatus) -> LrcoxStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(LrcoxStatus::Internal, "internal panic"),
    }
}

/// Message describing the last failed call on this thread, or NULL. The
/// pointer stays valid until the next lrcox call on the same thread.
#[no_mangle]
pub extern "C" fn lrcox_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub extern "C" fn lrcox_options_default() -> LrcoxOptions {
    let base = FitConfig::new(ConstraintPair::unconstrained(1, 1), 0.1);
    LrcoxOptions {
        mu: base.mu,
        rank: 0,
        sparsity: 0,
        rho0: base.rho0,
        incr_factor: base.incr_factor,
        k_max: base.k_max,
        feas_tol: base.feas_tol,
        obj_tol: base.obj_tol,
        max_rho_steps: base.max_rho_steps,
        tie_mode: 0,
        hessian_mode: 0,
        phi: 0.0,
    }
}

/// New empty dataset with `p` predictors; NULL if `p` is zero.
#[no_mangle]
pub extern "C" fn lrcox_dataset_new(p: usize) -> *mut LrcoxDataset {
    clear_error();
    if p == 0 {
        set_error("p must be positive");
        return ptr::null_mut();
    }
    Box::into_raw(Box::new(LrcoxDataset {
        p,
        populations: Vec::new(),
    }))
}

/// Appends a population. `x` holds `n * p` covariates in row-major order;
/// `status` entries are 0 (censored) or 1 (event).
///
/// # Safety
/// `dataset` must come from [`lrcox_dataset_new`]; `name` must be a
/// NUL-terminated string; `time` and `status` must point to `n` values and `x`
/// to `n * p` values.
#[no_mangle]
pub unsafe extern "C" fn lrcox_dataset_add_population(
    dataset: *mut LrcoxDataset,
    name: *const c_char,
    n: usize,
    time: *const f64,
    status: *const c_int,
    x: *const f64,
) -> LrcoxStatus {
    guarded(|| {
        if dataset.is_null() || name.is_null() || time.is_null() || status.is_null() || x.is_null() {
            return fail(LrcoxStatus::NullPointer, "null pointer argument");
        }
        let ds = &mut *dataset;
        let Ok(name) = CStr::from_ptr(name).to_str() else {
            return fail(LrcoxStatus::InvalidArgument, "population name is not UTF-8");
        };
        let Some(len) = n.checked_mul(ds.p) else {
            return fail(LrcoxStatus::InvalidArgument, "n * p overflows");
        };
        let time = std::slice::from_raw_parts(time, n).to_vec();
        let raw_status = std::slice::from_raw_parts(status, n);
        let mut st = Vec::with_capacity(n);
        for &s in raw_status {
            match s {
                0 => st.push(false),
                1 => st.push(true),
                other => return fail(LrcoxStatus::Data, format!("status must be 0 or 1, got {other}")),
            }
        }
        let xm = DMatrix::from_row_slice(n, ds.p, std::slice::from_raw_parts(x, len));
        match Population::new(name, time, st, xm) {
            Ok(pop) => {
                ds.populations.push(pop);
                LrcoxStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// Number of populations added so far (0 for NULL).
///
/// # Safety
/// `dataset` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lrcox_dataset_num_populations(dataset: *const LrcoxDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.populations.len())
}

/// # Safety
/// `dataset` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lrcox_dataset_free(dataset: *mut LrcoxDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

fn config_from(opts: &LrcoxOptions, p: usize, j: usize) -> Result<FitConfig, String> {
    let rank = if opts.rank == 0 { p.min(j) } else { opts.rank };
    let sparsity = if opts.sparsity == 0 { p } else { opts.sparsity };
    let mut cfg = FitConfig::new(
        ConstraintPair {
            max_rank: rank,
            max_rows: sparsity,
        },
        opts.mu,
    );
    cfg.rho0 = opts.rho0;
    cfg.incr_factor = opts.incr_factor;
    cfg.k_max = opts.k_max;
    cfg.feas_tol = opts.feas_tol;
    cfg.obj_tol = opts.obj_tol;
    cfg.max_rho_steps = opts.max_rho_steps;
    cfg.tie_mode = match opts.tie_mode {
        0 => TieMode::StandardBreslow,
        1 => TieMode::PerEventWeight,
        other => return Err(format!("tie_mode must be 0 or 1, got {other}")),
    };
    cfg.hessian_mode = match opts.hessian_mode {
        0 => HessianMode::TaylorDiagonal,
        1 => HessianMode::UniformBound((opts.phi > 0.0).then_some(opts.phi)),
        other => return Err(format!("hessian_mode must be 0 or 1, got {other}")),
    };
    let problems = cfg.problems(p, j);
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(problems.join("; "))
    }
}

/// Fits the constrained estimator. On `Ok` or `RhoCapHit`, `*out` receives a
/// new fit handle; otherwise it is set to NULL. `options` may be NULL for
/// defaults.
///
/// # Safety
/// `dataset` must be a live handle, `options` NULL or valid, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lrcox_fit(
    dataset: *const LrcoxDataset,
    options: *const LrcoxOptions,
    out: *mut *mut LrcoxFit,
) -> LrcoxStatus {
    guarded(|| {
        if dataset.is_null() || out.is_null() {
            return fail(LrcoxStatus::NullPointer, "null pointer argument");
        }
        *out = ptr::null_mut();
        let ds = &*dataset;
        let opts = options.as_ref().copied().unwrap_or_else(|| lrcox_options_default());
        let data = match SurvivalDataset::with_default_names(ds.populations.clone()) {
            Ok(d) => d,
            Err(e) => return fail(status_of(&e), e.to_string()),
        };
        let cfg = match config_from(&opts, ds.p, data.num_populations()) {
            Ok(c) => c,
            Err(msg) => return fail(LrcoxStatus::InvalidArgument, msg),
        };
        match fit(&data, &cfg) {
            Ok(result) => {
                let status = match result.termination {
                    Termination::FeasibilityMet => LrcoxStatus::Ok,
                    Termination::RhoCapHit => {
                        set_error("penalty parameter cap reached before feasibility");
                        LrcoxStatus::RhoCapHit
                    }
                };
                *out = Box::into_raw(Box::new(LrcoxFit { result }));
                status
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `fit` must be a live handle; `p` and `populations` writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn lrcox_fit_dims(
    fit: *const LrcoxFit,
    p: *mut usize,
    populations: *mut usize,
) -> LrcoxStatus {
    guarded(|| {
        let Some(f) = fit.as_ref() else {
            return fail(LrcoxStatus::NullPointer, "null fit handle");
        };
        if let Some(p) = p.as_mut() {
            *p = f.result.estimate.p();
        }
        if let Some(j) = populations.as_mut() {
            *j = f.result.estimate.populations();
        }
        LrcoxStatus::Ok
    })
}

/// Copies the `p x J` coefficient matrix in column-major order (column j is
/// population j) into `out`, which must hold `len >= p * J` values.
///
/// # Safety
/// `fit` must be a live handle and `out` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn lrcox_fit_coefficients(
    fit: *const LrcoxFit,
    out: *mut f64,
    len: usize,
) -> LrcoxStatus {
    guarded(|| {
        let Some(f) = fit.as_ref() else {
            return fail(LrcoxStatus::NullPointer, "null fit handle");
        };
        if out.is_null() {
            return fail(LrcoxStatus::NullPointer, "null output buffer");
        }
        let values = f.result.estimate.as_matrix().as_slice();
        if len < values.len() {
            return fail(
                LrcoxStatus::InvalidArgument,
                format!("buffer holds {len} values, {} needed", values.len()),
            );
        }
        std::slice::from_raw_parts_mut(out, values.len()).copy_from_slice(values);
        LrcoxStatus::Ok
    })
}

/// Writes the zero-based indices of nonzero rows (ascending) into `out` and
/// their count into `*count`. With `out` NULL only the count is reported.
///
/// # Safety
/// `fit` must be a live handle, `count` writable, and `out` NULL or pointing
/// to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn lrcox_fit_support(
    fit: *const LrcoxFit,
    out: *mut usize,
    len: usize,
    count: *mut usize,
) -> LrcoxStatus {
    guarded(|| {
        let Some(f) = fit.as_ref() else {
            return fail(LrcoxStatus::NullPointer, "null fit handle");
        };
        let Some(count) = count.as_mut() else {
            return fail(LrcoxStatus::NullPointer, "null count pointer");
        };
        let support = &f.result.support;
        *count = support.len();
        if out.is_null() {
            return LrcoxStatus::Ok;
        }
        if len < support.len() {
            return fail(
                LrcoxStatus::InvalidArgument,
                format!("buffer holds {len} indices, {} needed", support.len()),
            );
        }
        std::slice::from_raw_parts_mut(out, support.len()).copy_from_slice(support);
        LrcoxStatus::Ok
    })
}

/// Rank of the returned estimate (number of retained factors).
///
/// # Safety
/// `fit` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lrcox_fit_rank(fit: *const LrcoxFit) -> usize {
    fit.as_ref().map_or(0, |f| f.result.factorization.rank)
}

/// `LRCOX_STATUS_OK` if the feasibility tolerance was met, otherwise
/// `LRCOX_STATUS_RHO_CAP_HIT` (or `NULL_POINTER`).
///
/// # Safety
/// `fit` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lrcox_fit_termination(fit: *const LrcoxFit) -> LrcoxStatus {
    match fit.as_ref() {
        None => LrcoxStatus::NullPointer,
        Some(f) => match f.result.termination {
            Termination::FeasibilityMet => LrcoxStatus::Ok,
            Termination::RhoCapHit => LrcoxStatus::RhoCapHit,
        },
    }
}

/// Final penalty parameter and number of penalty steps taken.
///
/// # Safety
/// `fit` must be a live handle; outputs writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn lrcox_fit_penalty_path(
    fit: *const LrcoxFit,
    final_rho: *mut f64,
    rho_steps: *mut usize,
) -> LrcoxStatus {
    guarded(|| {
        let Some(f) = fit.as_ref() else {
            return fail(LrcoxStatus::NullPointer, "null fit handle");
        };
        if let Some(r) = final_rho.as_mut() {
            *r = f.result.final_rho;
        }
        if let Some(s) = rho_steps.as_mut() {
            *s = f.result.rho_steps;
        }
        LrcoxStatus::Ok
    })
}

/// # Safety
/// `fit` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lrcox_fit_free(fit: *mut LrcoxFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}
