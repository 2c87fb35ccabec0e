//! C interface to the pkgee fitting engine.
//!
//! Datasets and fits are opaque heap handles created and destroyed through
//! this API. Every fallible call returns a [`PkgeeStatus`]; on failure a
//! description is available from [`pkgee_last_error_message`] on the same
//! thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pkgee::gee::{solve, GeeError, GeeFit, SolverConfig, SubjectRecord, WorkingModel};
use pkgee::inference::{
    Contrast, InferenceContext, InferenceError, PkParameter, TestResult, VarianceKind,
};
use pkgee::pk_model::{concentration, Genotype, InfusionSpec, PkParams, NUM_COEFS};

/// Number of regression coefficients in a fit.
pub const PKGEE_NUM_COEFFICIENTS: usize = 12;
const _: () = assert!(PKGEE_NUM_COEFFICIENTS == NUM_COEFS);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PkgeeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    EvalFailure = 3,
    NotConverged = 4,
    SingularInformation = 5,
    NotEstimable = 6,
    LeverageSingular = 7,
    Internal = 99,
}

/// Result of a Wald (`df_numerator == 1`) or F test.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PkgeeTestResult {
    pub statistic: f64,
    pub df_numerator: f64,
    pub df_denominator: f64,
    pub p_value: f64,
    /// Denominator d.f. at or below 2.
    pub low_df: bool,
}

/// Subjects accumulated for one fit.
pub struct PkgeeDataset {
    subjects: Vec<SubjectRecord>,
}

/// A converged fit.
pub struct PkgeeFit {
    fit: GeeFit,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn fail(status: PkgeeStatus, msg: impl Into<String>) -> PkgeeStatus {
    set_error(msg);
    status
}

/// Runs `f`, converting a panic into `Internal`.
fn guarded(f: impl FnOnce() -> PkgeeStatus) -> PkgeeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(PkgeeStatus::Internal, "internal error (panic)"),
    }
}

fn gee_status(e: &GeeError) -> PkgeeStatus {
    match e {
        GeeError::EvalFailure { .. } => PkgeeStatus::EvalFailure,
        GeeError::NotConverged { .. } => PkgeeStatus::NotConverged,
        GeeError::SingularInformation => PkgeeStatus::SingularInformation,
        GeeError::InvalidConfig(_) => PkgeeStatus::InvalidArgument,
    }
}

fn inference_status(e: &InferenceError) -> PkgeeStatus {
    match e {
        InferenceError::SingularInformation => PkgeeStatus::SingularInformation,
        InferenceError::LeverageSingular { .. } => PkgeeStatus::LeverageSingular,
        InferenceError::ZeroTrace
        | InferenceError::NotEstimable(_)
        | InferenceError::SingularContrastCovariance => PkgeeStatus::NotEstimable,
        InferenceError::InvalidContrast(_) => PkgeeStatus::InvalidArgument,
        InferenceError::Eval(_) => PkgeeStatus::EvalFailure,
    }
}

fn parse_variance_kind(kind: i32) -> Option<VarianceKind> {
    match kind {
        0 => Some(VarianceKind::Plain),
        1 => Some(VarianceKind::BiasCorrected),
        _ => None,
    }
}

/// Message describing the last failure on this thread, or an empty string.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn pkgee_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates an empty dataset. Free it with `pkgee_dataset_free`.
#[no_mangle]
pub extern "C" fn pkgee_dataset_new() -> *mut PkgeeDataset {
    Box::into_raw(Box::new(PkgeeDataset { subjects: Vec::new() }))
}

/// # Safety
/// `ds` must be null or a pointer returned by `pkgee_dataset_new` that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn pkgee_dataset_free(ds: *mut PkgeeDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of subjects added so far; 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn pkgee_dataset_len(ds: *const PkgeeDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.subjects.len())
}

/// Adds one subject. `conc` holds natural-scale concentrations (> 0) at the
/// strictly increasing, positive `times`; `genotype` is the minor-allele
/// count 0, 1 or 2.
///
/// # Safety
/// `ds` must be a live dataset handle, `id` a NUL-terminated string, and
/// `times` and `conc` must each point to `n` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn pkgee_dataset_add_subject(
    ds: *mut PkgeeDataset,
    id: *const c_char,
    dose: f64,
    t_in: f64,
    genotype: i32,
    times: *const f64,
    conc: *const f64,
    n: usize,
) -> PkgeeStatus {
    guarded(|| {
        let Some(ds) = ds.as_mut() else {
            return fail(PkgeeStatus::NullPointer, "dataset handle is null");
        };
        if id.is_null() || times.is_null() || conc.is_null() {
            return fail(PkgeeStatus::NullPointer, "id, times and conc must be non-null");
        }
        let Ok(id) = CStr::from_ptr(id).to_str() else {
            return fail(PkgeeStatus::InvalidArgument, "subject id is not valid UTF-8");
        };
        let Some(infusion) = InfusionSpec::new(dose, t_in) else {
            return fail(PkgeeStatus::InvalidArgument, "dose and t_in must be positive");
        };
        let Some(g) = u8::try_from(genotype).ok().and_then(Genotype::from_minor_allele_count) else {
            return fail(PkgeeStatus::InvalidArgument, "genotype must be 0, 1 or 2");
        };
        let times = std::slice::from_raw_parts(times, n).to_vec();
        let conc = std::slice::from_raw_parts(conc, n);
        if let Some(c) = conc.iter().find(|c| !(**c > 0.0)) {
            return fail(PkgeeStatus::InvalidArgument, format!("concentration {c} is not positive"));
        }
        let log_conc = conc.iter().map(|c| c.ln()).collect();
        match SubjectRecord::new(id, infusion, times, log_conc, g) {
            Ok(r) => {
                ds.subjects.push(r);
                PkgeeStatus::Ok
            }
            Err(e) => fail(PkgeeStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Solves the estimating equations with default settings. On success
/// `*out` receives a handle to free with `pkgee_fit_free`.
///
/// # Safety
/// `ds` must be a live dataset handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pkgee_fit(ds: *const PkgeeDataset, out: *mut *mut PkgeeFit) -> PkgeeStatus {
    guarded(|| {
        if out.is_null() {
            return fail(PkgeeStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let Some(ds) = ds.as_ref() else {
            return fail(PkgeeStatus::NullPointer, "dataset handle is null");
        };
        match solve(&ds.subjects, &WorkingModel::default(), &SolverConfig::default()) {
            Ok(fit) => {
                *out = Box::into_raw(Box::new(PkgeeFit { fit }));
                PkgeeStatus::Ok
            }
            Err(e) => fail(gee_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `fit` must be null or a live fit handle.
#[no_mangle]
pub unsafe extern "C" fn pkgee_fit_free(fit: *mut PkgeeFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Copies the twelve coefficients into `out`; dropped coefficients are NaN.
///
/// # Safety
/// `fit` must be a live fit handle and `out` must point to 12 writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn pkgee_fit_coefficients(fit: *const PkgeeFit, out: *mut f64) -> PkgeeStatus {
    guarded(|| {
        let (Some(f), false) = (fit.as_ref(), out.is_null()) else {
            return fail(PkgeeStatus::NullPointer, "fit and out must be non-null");
        };
        let out = std::slice::from_raw_parts_mut(out, NUM_COEFS);
        out.copy_from_slice(&f.fit.beta_hat);
        for &c in &f.fit.dropped_columns {
            out[c] = f64::NAN;
        }
        PkgeeStatus::Ok
    })
}

/// Solver iterations used; 0 for a null handle.
///
/// # Safety
/// `fit` must be null or a live fit handle.
#[no_mangle]
pub unsafe extern "C" fn pkgee_fit_iterations(fit: *const PkgeeFit) -> usize {
    fit.as_ref().map_or(0, |f| f.fit.iterations)
}

fn write_result(out: *mut PkgeeTestResult, r: &TestResult) {
    // SAFETY: callers check `out` for null before calling.
    unsafe {
        *out = PkgeeTestResult {
            statistic: r.statistic,
            df_numerator: r.df_numerator,
            df_denominator: r.df_denominator,
            p_value: r.p_value,
            low_df: r.low_df,
        };
    }
}

/// Wald test of coefficient `coef` (0-11). `variance_kind` is 0 for the
/// plain sandwich and 1 for the bias-corrected one.
///
/// # Safety
/// `fit` must be a live fit handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pkgee_fit_wald(
    fit: *const PkgeeFit,
    coef: usize,
    variance_kind: i32,
    out: *mut PkgeeTestResult,
) -> PkgeeStatus {
    guarded(|| {
        let (Some(f), false) = (fit.as_ref(), out.is_null()) else {
            return fail(PkgeeStatus::NullPointer, "fit and out must be non-null");
        };
        if coef >= NUM_COEFS {
            return fail(PkgeeStatus::InvalidArgument, "coefficient index out of range");
        }
        let Some(kind) = parse_variance_kind(variance_kind) else {
            return fail(PkgeeStatus::InvalidArgument, "variance_kind must be 0 or 1");
        };
        let Contrast::Vector(c) = Contrast::coefficient(coef) else { unreachable!() };
        let result = InferenceContext::new(&f.fit)
            .and_then(|ctx| ctx.covariance(kind).and_then(|cov| ctx.wald(&cov, &c)));
        match result {
            Ok(r) => {
                write_result(out, &r);
                PkgeeStatus::Ok
            }
            Err(e) => fail(inference_status(&e), e.to_string()),
        }
    })
}

/// Joint F test of both genotype effects on one PK parameter
/// (0 Vd, 1 Kel, 2 K12, 3 K21).
///
/// # Safety
/// `fit` must be a live fit handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pkgee_fit_f(
    fit: *const PkgeeFit,
    parameter: i32,
    variance_kind: i32,
    out: *mut PkgeeTestResult,
) -> PkgeeStatus {
    guarded(|| {
        let (Some(f), false) = (fit.as_ref(), out.is_null()) else {
            return fail(PkgeeStatus::NullPointer, "fit and out must be non-null");
        };
        let Some(param) = usize::try_from(parameter).ok().and_then(|p| PkParameter::ALL.get(p)) else {
            return fail(PkgeeStatus::InvalidArgument, "parameter must be 0-3");
        };
        let Some(kind) = parse_variance_kind(variance_kind) else {
            return fail(PkgeeStatus::InvalidArgument, "variance_kind must be 0 or 1");
        };
        let result = InferenceContext::new(&f.fit).and_then(|ctx| {
            ctx.covariance(kind).and_then(|cov| ctx.f_test(&cov, &Contrast::parameter(*param)))
        });
        match result {
            Ok(r) => {
                write_result(out, &r);
                PkgeeStatus::Ok
            }
            Err(e) => fail(inference_status(&e), e.to_string()),
        }
    })
}

/// Model concentration at time `t` for log-scale parameters.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pkgee_concentration(
    log_vd: f64,
    log_kel: f64,
    log_k12: f64,
    log_k21: f64,
    dose: f64,
    t_in: f64,
    t: f64,
    out: *mut f64,
) -> PkgeeStatus {
    guarded(|| {
        if out.is_null() {
            return fail(PkgeeStatus::NullPointer, "out is null");
        }
        let Some(inf) = InfusionSpec::new(dose, t_in) else {
            return fail(PkgeeStatus::InvalidArgument, "dose and t_in must be positive");
        };
        if !(t >= 0.0) {
            return fail(PkgeeStatus::InvalidArgument, "t must be non-negative");
        }
        let p = PkParams::new(log_vd, log_kel, log_k12, log_k21);
        match concentration(&p, &inf, t) {
            Ok(c) => {
                *out = c;
                PkgeeStatus::Ok
            }
            Err(e) => fail(PkgeeStatus::EvalFailure, e.to_string()),
        }
    })
}
