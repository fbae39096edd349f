//! C ABI for the covariance filtering library.
//!
//! Handles are opaque pointers created and freed by this library; every
//! fallible call returns a [`BahcStatus`] and writes its output through an
//! out-parameter. `bahc_last_error_message` gives the detail of the most
//! recent failure on the calling thread. Matrices cross the boundary as
//! row-major `double` buffers.
//!
//! The generated header lives at `include/bahc.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use bahc::baselines::{cv_eigenvalue_shrink, lw_shrink};
use bahc::bootstrap::{bahc_filter, BootstrapSpec};
use bahc::hierclust::hcal_filter;
use bahc::matrix::{
    min_eigenvalue, sample_correlation, sample_covariance, CovarianceMatrix, ReturnsMatrix,
    SymmetricMatrix,
};
use bahc::portfolio::{
    min_variance_long_only, min_variance_long_short, realized_risk, PortfolioWeights,
};
use bahc::Error;

/// Opaque handle to an `n x t` returns matrix.
pub struct BahcReturns {
    inner: ReturnsMatrix,
}

/// Opaque handle to a symmetric `n x n` result matrix.
pub struct BahcMatrix {
    inner: SymmetricMatrix,
}

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BahcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    DegenerateData = 3,
    NumericalError = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> BahcStatus {
    match err {
        Error::InvalidInput(_) | Error::InsufficientData(_) => BahcStatus::InvalidInput,
        Error::ZeroVariance { .. }
        | Error::NonpositiveDiagonal { .. }
        | Error::NonpositivePrice { .. }
        | Error::DegenerateBootstrap { .. }
        | Error::DegenerateCophenetic => BahcStatus::DegenerateData,
        Error::ConvergenceFailure { .. }
        | Error::SingularCovariance { .. }
        | Error::NonpositiveEigenvalue { .. }
        | Error::QpNonConvergence { .. } => BahcStatus::NumericalError,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => BahcStatus::InvalidInput,
    }
}

fn fail(err: Error) -> BahcStatus {
    let status = status_of(&err);
    set_error(&err.to_string());
    status
}

/// Runs `f`, converting panics into `NumericalError` so they never unwind
/// across the ABI.
fn guarded<F: FnOnce() -> BahcStatus>(f: F) -> BahcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            BahcStatus::NumericalError
        }
    }
}

/// Detail of the most recent failure on this thread. The pointer stays valid
/// until the next failing call on the same thread. Never null.
#[no_mangle]
pub extern "C" fn bahc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static C string.
#[no_mangle]
pub extern "C" fn bahc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Creates a returns handle from a row-major `n x t` buffer.
///
/// # Safety
/// `data` must point to `n * t` readable doubles and `out` to a writable
/// pointer slot.
#[no_mangle]
pub unsafe extern "C" fn bahc_returns_create(
    data: *const f64,
    n: usize,
    t: usize,
    out: *mut *mut BahcReturns,
) -> BahcStatus {
    if data.is_null() || out.is_null() {
        set_error("null pointer");
        return BahcStatus::NullPointer;
    }
    guarded(|| {
        let values = std::slice::from_raw_parts(data, n.saturating_mul(t));
        match ReturnsMatrix::from_row_major(values, n, t) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(BahcReturns { inner }));
                BahcStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Frees a returns handle. Null is ignored.
///
/// # Safety
/// `r` must be a pointer from `bahc_returns_create`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bahc_returns_free(r: *mut BahcReturns) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Frees a matrix handle. Null is ignored.
///
/// # Safety
/// `m` must be a pointer produced by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bahc_matrix_free(m: *mut BahcMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Dimension of a matrix handle (0 for null).
///
/// # Safety
/// `m` must be a live matrix handle or null.
#[no_mangle]
pub unsafe extern "C" fn bahc_matrix_dim(m: *const BahcMatrix) -> usize {
    if m.is_null() {
        return 0;
    }
    (*m).inner.dim()
}

/// Entry `(i, j)` of a matrix handle; NaN for null handles or out-of-range
/// indices.
///
/// # Safety
/// `m` must be a live matrix handle or null.
#[no_mangle]
pub unsafe extern "C" fn bahc_matrix_get(m: *const BahcMatrix, i: usize, j: usize) -> f64 {
    if m.is_null() {
        return f64::NAN;
    }
    let inner = &(*m).inner;
    if i >= inner.dim() || j >= inner.dim() {
        return f64::NAN;
    }
    inner.get(i, j)
}

/// Copies a matrix into a row-major buffer of length `len >= n * n`.
///
/// # Safety
/// `buffer` must point to `len` writable doubles; `m` must be live.
#[no_mangle]
pub unsafe extern "C" fn bahc_matrix_copy(
    m: *const BahcMatrix,
    buffer: *mut f64,
    len: usize,
) -> BahcStatus {
    if m.is_null() || buffer.is_null() {
        set_error("null pointer");
        return BahcStatus::NullPointer;
    }
    let inner = &(*m).inner;
    let n = inner.dim();
    if len < n * n {
        set_error("buffer too small");
        return BahcStatus::InvalidInput;
    }
    let out = std::slice::from_raw_parts_mut(buffer, n * n);
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = inner.get(i, j);
        }
    }
    BahcStatus::Ok
}

/// Smallest eigenvalue of a matrix handle.
///
/// # Safety
/// `m` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bahc_matrix_min_eigenvalue(
    m: *const BahcMatrix,
    out: *mut f64,
) -> BahcStatus {
    if m.is_null() || out.is_null() {
        set_error("null pointer");
        return BahcStatus::NullPointer;
    }
    guarded(|| match min_eigenvalue(&(*m).inner) {
        Ok(v) => {
            *out = v;
            BahcStatus::Ok
        }
        Err(e) => fail(e),
    })
}

unsafe fn emit(out: *mut *mut BahcMatrix, inner: SymmetricMatrix) -> BahcStatus {
    *out = Box::into_raw(Box::new(BahcMatrix { inner }));
    BahcStatus::Ok
}

/// Sample correlation matrix of a returns handle.
///
/// # Safety
/// `r` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bahc_sample_correlation(
    r: *const BahcReturns,
    out: *mut *mut BahcMatrix,
) -> BahcStatus {
    if r.is_null() || out.is_null() {
        set_error("null pointer");
        return BahcStatus::NullPointer;
    }
    guarded(|| match sample_correlation(&(*r).inner) {
        Ok(c) => emit(out, c.as_sym().clone()),
        Err(e) => fail(e),
    })
}

/// Sample covariance matrix (divisor `t`).
///
/// # Safety
/// `r` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bahc_sample_covariance(
    r: *const BahcReturns,
    out: *mut *mut BahcMatrix,
) -> BahcStatus {
    if r.is_null() || out.is_null() {
        set_error("null pointer");
        return BahcStatus::NullPointer;
    }
    guarded(|| {
        let cov = sample_covariance(&(*r).inner);
        emit(out, cov.as_sym().clone())
    })
}

/// Average-linkage cluster-filtered correlation matrix.
///
/// # Safety
/// `r` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bahc_hcal_correlation(
    r: *const BahcReturns,
    out: *mut *mut BahcMatrix,
) -> BahcStatus {
    if r.is_null() || out.is_null() {
        set_error("null pointer");
        return BahcStatus::NullPointer;
    }
    guarded(|| match sample_correlation(&(*r).inner) {
        Ok(c) => emit(out, hcal_filter(&c).as_sym().clone()),
        Err(e) => fail(e),
    })
}

/// Bootstrapped-average filtered correlation matrix (`m` bootstraps, seeded).
///
/// # Safety
/// `r` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bahc_filter_correlation(
    r: *const BahcReturns,
    m: u32,
    seed: u64,
    out: *mut *mut BahcMatrix,
) -> BahcStatus {
    filter_both(r, m, seed, out, ptr::null_mut())
}

/// Bootstrapped-average filtered covariance matrix; shares its draws with
/// `bahc_filter_correlation` for the same arguments.
///
/// # Safety
/// `r` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bahc_filter_covariance(
    r: *const BahcReturns,
    m: u32,
    seed: u64,
    out: *mut *mut BahcMatrix,
) -> BahcStatus {
    filter_both(r, m, seed, ptr::null_mut(), out)
}

unsafe fn filter_both(
    r: *const BahcReturns,
    m: u32,
    seed: u64,
    corr_out: *mut *mut BahcMatrix,
    cov_out: *mut *mut BahcMatrix,
) -> BahcStatus {
    if r.is_null() || (corr_out.is_null() && cov_out.is_null()) {
        set_error("null pointer");
        return BahcStatus::NullPointer;
    }
    guarded(|| {
        let spec = match BootstrapSpec::new(m as usize, seed) {
            Ok(s) => s,
            Err(e) => return fail(e),
        };
        match bahc_filter(&(*r).inner, &spec) {
            Ok((corr, cov)) => {
                if !corr_out.is_null() {
                    let status = emit(corr_out, corr.as_sym().clone());
                    if status != BahcStatus::Ok {
                        return status;
                    }
                }
                if !cov_out.is_null() {
                    return emit(cov_out, cov.as_sym().clone());
                }
                BahcStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Ledoit-Wolf linear shrinkage covariance. When `delta_out` is non-null the
/// shrinkage intensity is written there.
///
/// # Safety
/// `r` must be live; `out` writable; `delta_out` writable or null.
#[no_mangle]
pub unsafe extern "C" fn bahc_lw_covariance(
    r: *const BahcReturns,
    delta_out: *mut f64,
    out: *mut *mut BahcMatrix,
) -> BahcStatus {
    if r.is_null() || out.is_null() {
        set_error("null pointer");
        return BahcStatus::NullPointer;
    }
    guarded(|| {
        let est = lw_shrink(&(*r).inner);
        if !delta_out.is_null() {
            *delta_out = est.shrinkage;
        }
        emit(out, est.covariance.as_sym().clone())
    })
}

/// Cross-validated eigenvalue shrinkage covariance.
///
/// # Safety
/// `r` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bahc_cv_covariance(
    r: *const BahcReturns,
    folds: usize,
    seed: u64,
    out: *mut *mut BahcMatrix,
) -> BahcStatus {
    if r.is_null() || out.is_null() {
        set_error("null pointer");
        return BahcStatus::NullPointer;
    }
    guarded(|| match cv_eigenvalue_shrink(&(*r).inner, folds, seed) {
        Ok(cov) => emit(out, cov.as_sym().clone()),
        Err(e) => fail(e),
    })
}

/// Global minimum-variance weights of a covariance handle, written into
/// `weights` (length `len >= n`). `long_only` selects the nonnegative
/// variant.
///
/// # Safety
/// `cov` must be live; `weights` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bahc_min_variance_weights(
    cov: *const BahcMatrix,
    long_only: bool,
    weights: *mut f64,
    len: usize,
) -> BahcStatus {
    if cov.is_null() || weights.is_null() {
        set_error("null pointer");
        return BahcStatus::NullPointer;
    }
    guarded(|| {
        let inner = &(*cov).inner;
        let n = inner.dim();
        if len < n {
            set_error("weight buffer too small");
            return BahcStatus::InvalidInput;
        }
        let matrix = match CovarianceMatrix::new(inner.clone()) {
            Ok(m) => m,
            Err(e) => return fail(e),
        };
        let solved = if long_only {
            min_variance_long_only(&matrix)
        } else {
            min_variance_long_short(&matrix)
        };
        match solved {
            Ok(w) => {
                let out = std::slice::from_raw_parts_mut(weights, n);
                out.copy_from_slice(w.as_slice());
                BahcStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Realized risk `sqrt(w' Sigma w)` of a weight vector against a covariance
/// handle.
///
/// # Safety
/// `cov` must be live; `weights` must point to `len` readable doubles; `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn bahc_realized_risk(
    cov: *const BahcMatrix,
    weights: *const f64,
    len: usize,
    out: *mut f64,
) -> BahcStatus {
    if cov.is_null() || weights.is_null() || out.is_null() {
        set_error("null pointer");
        return BahcStatus::NullPointer;
    }
    guarded(|| {
        let inner = &(*cov).inner;
        let matrix = match CovarianceMatrix::new(inner.clone()) {
            Ok(m) => m,
            Err(e) => return fail(e),
        };
        let w = std::slice::from_raw_parts(weights, len);
        let weights = match PortfolioWeights::new(nalgebra::DVector::from_column_slice(w)) {
            Ok(w) => w,
            Err(e) => return fail(e),
        };
        match realized_risk(&weights, &matrix) {
            Ok(v) => {
                *out = v;
                BahcStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}
