//! C ABI for the latmax library: opaque handles, integer status codes and a
//! thread-local error message. See `include/latmax.h` for the generated
//! header.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use latmax::cov::{kronecker_cov, NeighborhoodCov};
use latmax::error::Error;
use latmax::lookup::LookupTable;
use latmax::mcdlm::{sample_local_maxima, PeakModel, PeakSampleSet};

/// Success.
pub const LATMAX_OK: c_int = 0;
/// Invalid argument (null pointer, bad range, bad enum value).
pub const LATMAX_ERR_INVALID: c_int = 2;
/// Numeric failure (non-PSD covariance, quadrature, degenerate sampler).
pub const LATMAX_ERR_NUMERIC: c_int = 3;
/// I/O or file-format failure.
pub const LATMAX_ERR_IO: c_int = 4;
/// Unexpected internal failure.
pub const LATMAX_ERR_INTERNAL: c_int = 5;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn code_of(err: &Error) -> c_int {
    match err {
        Error::InvalidArgument(_) => LATMAX_ERR_INVALID,
        Error::Numeric(_) => LATMAX_ERR_NUMERIC,
        Error::Io(_) | Error::Format(_) => LATMAX_ERR_IO,
    }
}

fn guarded(f: impl FnOnce() -> c_int) -> c_int {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => {
            set_error("internal panic");
            LATMAX_ERR_INTERNAL
        }
    }
}

/// Opaque neighborhood covariance handle.
pub struct LatmaxCov(NeighborhoodCov);

/// Opaque Monte Carlo sample-set handle.
pub struct LatmaxSampleSet(PeakSampleSet);

/// Opaque lookup-table handle.
pub struct LatmaxTable(LookupTable);

/// Copies the last error message on this thread into `buf` (NUL-terminated,
/// truncated to `cap`). Returns the full message length.
///
/// # Safety
/// `buf` must point to at least `cap` writable bytes, or be null.
#[no_mangle]
pub unsafe extern "C" fn latmax_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len() - 1
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn latmax_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Converts a kernel FWHM (in voxels) to the adjacent-voxel correlation.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn latmax_fwhm_to_rho(fwhm: f64, out: *mut f64) -> c_int {
    guarded(|| {
        if out.is_null() {
            set_error("out is null");
            return LATMAX_ERR_INVALID;
        }
        match latmax::lattice::fwhm_to_rho(fwhm) {
            Ok(v) => {
                *out = v;
                LATMAX_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                code_of(&e)
            }
        }
    })
}

/// Converts an adjacent-voxel correlation to the kernel FWHM (in voxels).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn latmax_rho_to_fwhm(rho: f64, out: *mut f64) -> c_int {
    guarded(|| {
        if out.is_null() {
            set_error("out is null");
            return LATMAX_ERR_INVALID;
        }
        match latmax::lattice::rho_to_fwhm(rho) {
            Ok(v) => {
                *out = v;
                LATMAX_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                code_of(&e)
            }
        }
    })
}

/// Builds the closed-form fully connected covariance rho^{||s-t||^2}.
///
/// # Safety
/// `out` must be a valid pointer; the handle must be released with
/// `latmax_cov_free`.
#[no_mangle]
pub unsafe extern "C" fn latmax_cov_kronecker(
    rho: f64,
    dim: u32,
    out: *mut *mut LatmaxCov,
) -> c_int {
    guarded(|| {
        if out.is_null() {
            set_error("out is null");
            return LATMAX_ERR_INVALID;
        }
        match kronecker_cov(rho, dim as usize) {
            Ok(cov) => {
                *out = Box::into_raw(Box::new(LatmaxCov(cov)));
                LATMAX_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                code_of(&e)
            }
        }
    })
}

/// Order (k + 1) of the covariance.
///
/// # Safety
/// `cov` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn latmax_cov_order(cov: *const LatmaxCov, out: *mut u32) -> c_int {
    guarded(|| {
        if cov.is_null() || out.is_null() {
            set_error("null pointer");
            return LATMAX_ERR_INVALID;
        }
        *out = (*cov).0.size() as u32;
        LATMAX_OK
    })
}

/// Reads entry (i, j) of the covariance matrix.
///
/// # Safety
/// `cov` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn latmax_cov_entry(
    cov: *const LatmaxCov,
    i: u32,
    j: u32,
    out: *mut f64,
) -> c_int {
    guarded(|| {
        if cov.is_null() || out.is_null() {
            set_error("null pointer");
            return LATMAX_ERR_INVALID;
        }
        let m = (*cov).0.matrix();
        if i as usize >= m.nrows() || j as usize >= m.ncols() {
            set_error("index out of range");
            return LATMAX_ERR_INVALID;
        }
        *out = m[(i as usize, j as usize)];
        LATMAX_OK
    })
}

/// Releases a covariance handle. Null is a no-op.
///
/// # Safety
/// `cov` must be a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn latmax_cov_free(cov: *mut LatmaxCov) {
    if !cov.is_null() {
        drop(Box::from_raw(cov));
    }
}

/// Runs the Monte Carlo sampler. `model` 0 = Gaussian, 1 = multivariate t
/// with `nu` degrees of freedom.
///
/// # Safety
/// `cov` must be a live handle; `out` must be valid; release the result with
/// `latmax_sampleset_free`.
#[no_mangle]
pub unsafe extern "C" fn latmax_sample(
    cov: *const LatmaxCov,
    model: c_int,
    nu: u64,
    target_n: u64,
    max_m: u64,
    seed: u64,
    out: *mut *mut LatmaxSampleSet,
) -> c_int {
    guarded(|| {
        if cov.is_null() || out.is_null() {
            set_error("null pointer");
            return LATMAX_ERR_INVALID;
        }
        let model = match model {
            0 => PeakModel::Gaussian,
            1 => PeakModel::StudentT { nu },
            _ => {
                set_error("model must be 0 (gaussian) or 1 (t)");
                return LATMAX_ERR_INVALID;
            }
        };
        match sample_local_maxima(&(*cov).0, model, target_n as usize, max_m, seed) {
            Ok(set) => {
                *out = Box::into_raw(Box::new(LatmaxSampleSet(set)));
                LATMAX_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                code_of(&e)
            }
        }
    })
}

/// Number of accepted heights.
///
/// # Safety
/// `set` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn latmax_sampleset_len(set: *const LatmaxSampleSet, out: *mut u64) -> c_int {
    guarded(|| {
        if set.is_null() || out.is_null() {
            set_error("null pointer");
            return LATMAX_ERR_INVALID;
        }
        *out = (*set).0.accepted() as u64;
        LATMAX_OK
    })
}

/// Number of attempts consumed.
///
/// # Safety
/// `set` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn latmax_sampleset_attempted(
    set: *const LatmaxSampleSet,
    out: *mut u64,
) -> c_int {
    guarded(|| {
        if set.is_null() || out.is_null() {
            set_error("null pointer");
            return LATMAX_ERR_INVALID;
        }
        *out = (*set).0.attempted();
        LATMAX_OK
    })
}

/// Empirical CDF at `u`.
///
/// # Safety
/// `set` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn latmax_sampleset_cdf(
    set: *const LatmaxSampleSet,
    u: f64,
    out: *mut f64,
) -> c_int {
    guarded(|| {
        if set.is_null() || out.is_null() {
            set_error("null pointer");
            return LATMAX_ERR_INVALID;
        }
        *out = (*set).0.cdf(u);
        LATMAX_OK
    })
}

/// Peak p-value at `u`; `censored` (may be null) receives 1 when the value
/// was right-censored at 1/(N+1).
///
/// # Safety
/// `set` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn latmax_sampleset_pvalue(
    set: *const LatmaxSampleSet,
    u: f64,
    out: *mut f64,
    censored: *mut c_int,
) -> c_int {
    guarded(|| {
        if set.is_null() || out.is_null() {
            set_error("null pointer");
            return LATMAX_ERR_INVALID;
        }
        let p = (*set).0.pvalue(u);
        *out = p.value;
        if !censored.is_null() {
            *censored = p.censored as c_int;
        }
        LATMAX_OK
    })
}

unsafe fn path_from(ptr: *const c_char) -> Result<&'static Path, c_int> {
    if ptr.is_null() {
        set_error("path is null");
        return Err(LATMAX_ERR_INVALID);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(LATMAX_ERR_INVALID)
        }
    }
}

/// Writes the sample set to a file.
///
/// # Safety
/// `set` must be a live handle; `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn latmax_sampleset_save(
    set: *const LatmaxSampleSet,
    path: *const c_char,
) -> c_int {
    guarded(|| {
        if set.is_null() {
            set_error("set is null");
            return LATMAX_ERR_INVALID;
        }
        let path = match path_from(path) {
            Ok(p) => p,
            Err(code) => return code,
        };
        match latmax::io::write_sample_set(path, &(*set).0) {
            Ok(()) => LATMAX_OK,
            Err(e) => {
                set_error(&e.to_string());
                code_of(&e)
            }
        }
    })
}

/// Loads a sample set from a file.
///
/// # Safety
/// `path` must be NUL-terminated UTF-8; `out` valid; release with
/// `latmax_sampleset_free`.
#[no_mangle]
pub unsafe extern "C" fn latmax_sampleset_load(
    path: *const c_char,
    out: *mut *mut LatmaxSampleSet,
) -> c_int {
    guarded(|| {
        if out.is_null() {
            set_error("out is null");
            return LATMAX_ERR_INVALID;
        }
        let path = match path_from(path) {
            Ok(p) => p,
            Err(code) => return code,
        };
        match latmax::io::read_sample_set(path) {
            Ok(set) => {
                *out = Box::into_raw(Box::new(LatmaxSampleSet(set)));
                LATMAX_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                code_of(&e)
            }
        }
    })
}

/// Releases a sample-set handle. Null is a no-op.
///
/// # Safety
/// `set` must be a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn latmax_sampleset_free(set: *mut LatmaxSampleSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// ADLM peak p-value for a partially connected interior voxel with the given
/// per-axis correlations.
///
/// # Safety
/// `rhos` must point to `dim` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn latmax_adlm_pvalue(
    rhos: *const f64,
    dim: usize,
    u: f64,
    out: *mut f64,
) -> c_int {
    guarded(|| {
        if rhos.is_null() || out.is_null() || dim == 0 {
            set_error("null pointer or zero dimension");
            return LATMAX_ERR_INVALID;
        }
        let rhos = std::slice::from_raw_parts(rhos, dim).to_vec();
        let result = latmax::adlm::AdlmParams::new(rhos)
            .and_then(|params| latmax::adlm::adlm_pvalue(&params, u));
        match result {
            Ok(p) => {
                *out = p;
                LATMAX_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                code_of(&e)
            }
        }
    })
}

/// Loads a lookup table from a file.
///
/// # Safety
/// `path` must be NUL-terminated UTF-8; `out` valid; release with
/// `latmax_table_free`.
#[no_mangle]
pub unsafe extern "C" fn latmax_table_load(
    path: *const c_char,
    out: *mut *mut LatmaxTable,
) -> c_int {
    guarded(|| {
        if out.is_null() {
            set_error("out is null");
            return LATMAX_ERR_INVALID;
        }
        let path = match path_from(path) {
            Ok(p) => p,
            Err(code) => return code,
        };
        match latmax::io::read_table(path) {
            Ok(table) => {
                *out = Box::into_raw(Box::new(LatmaxTable(table)));
                LATMAX_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                code_of(&e)
            }
        }
    })
}

/// Queries the lookup table: p-value 1 - F(u; rho). `censored` (may be null)
/// receives 1 when `u` fell outside the tabulated grid.
///
/// # Safety
/// `table` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn latmax_table_query(
    table: *const LatmaxTable,
    rho: f64,
    u: f64,
    out: *mut f64,
    censored: *mut c_int,
) -> c_int {
    guarded(|| {
        if table.is_null() || out.is_null() {
            set_error("null pointer");
            return LATMAX_ERR_INVALID;
        }
        match (*table).0.query(rho, u) {
            Ok(p) => {
                *out = p.value;
                if !censored.is_null() {
                    *censored = p.censored as c_int;
                }
                LATMAX_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                code_of(&e)
            }
        }
    })
}

/// Releases a lookup-table handle. Null is a no-op.
///
/// # Safety
/// `table` must be a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn latmax_table_free(table: *mut LatmaxTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}
