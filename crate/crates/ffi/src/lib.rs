//! C ABI over the qcomp engine: opaque model handles, integer status codes,
//! and a thread-local last-error message.
//!
//! Conventions:
//! - All functions return `QcompStatus` (0 = ok); on failure the message is
//!   retrievable via `qcomp_last_error`.
//! - Observation masks are `uint8_t` arrays of length `p` (nonzero = observed).
//! - Output buffers are caller-allocated with length `p`; entries at observed
//!   positions are passed through unchanged (mean) or set to zero (variance,
//!   gain).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;

use qcomp::completion::{complete_row, gain_of_certainty};
use qcomp::model::{load_model, ModelParams};
use qcomp::planner::greedy_plan;
use qcomp::schema::{MaskPartition, SparseRow};
use qcomp::QcompError;

/// Status code returned by every API function.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum QcompStatus {
    Ok = 0,
    /// Bad arguments, unreadable files, schema mismatches.
    InvalidInput = 1,
    /// Numerical failure (covariance factorization did not recover).
    Numerical = 2,
}

/// Opaque handle to a loaded model.
pub struct QcompModel {
    params: ModelParams,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

fn status_of(err: &QcompError) -> QcompStatus {
    set_error(&err.to_string());
    match err.exit_code() {
        2 => QcompStatus::Numerical,
        _ => QcompStatus::InvalidInput,
    }
}

fn invalid(message: &str) -> QcompStatus {
    set_error(message);
    QcompStatus::InvalidInput
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn qcomp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Load a model file. On success `*out` owns the handle; release it with
/// `qcomp_model_free`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qcomp_model_load(
    path: *const c_char,
    out: *mut *mut QcompModel,
) -> QcompStatus {
    if path.is_null() || out.is_null() {
        return invalid("null pointer argument");
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(s) => s,
        Err(_) => return invalid("path is not valid UTF-8"),
    };
    match load_model(Path::new(path)) {
        Ok(params) => {
            *out = Box::into_raw(Box::new(QcompModel { params }));
            QcompStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Release a handle obtained from `qcomp_model_load`. Null is a no-op.
///
/// # Safety
/// `model` must be null or a pointer returned by `qcomp_model_load` that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn qcomp_model_free(model: *mut QcompModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of assays the model covers.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qcomp_model_assay_count(model: *const QcompModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).params.p()
}

unsafe fn slice_arg<'a, T>(ptr: *const T, len: usize) -> Option<&'a [T]> {
    if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

/// Complete one compound.
///
/// Inputs are length-`p` arrays: `f` base-model predictions, `y` measured
/// values (read only where `observed_mask` is nonzero), and optionally
/// `sigma_f` prediction standard deviations (null to skip composite
/// uncertainty). `out_mean` receives measured values at observed positions
/// and conditional means elsewhere; `out_var` the conditional variances
/// (zero at observed positions); `out_composite_var` (nullable) the
/// composite variances, requiring `sigma_f`.
///
/// # Safety
/// All non-null pointers must reference arrays of length `p` matching
/// `qcomp_model_assay_count`.
#[no_mangle]
pub unsafe extern "C" fn qcomp_complete(
    model: *const QcompModel,
    f: *const f64,
    y: *const f64,
    observed_mask: *const u8,
    sigma_f: *const f64,
    out_mean: *mut f64,
    out_var: *mut f64,
    out_composite_var: *mut f64,
) -> QcompStatus {
    if model.is_null() {
        return invalid("null model handle");
    }
    let params = &(*model).params;
    let p = params.p();
    let (Some(f), Some(mask), Some(y)) =
        (slice_arg(f, p), slice_arg(observed_mask, p), slice_arg(y, p))
    else {
        return invalid("null pointer argument");
    };
    if out_mean.is_null() || out_var.is_null() {
        return invalid("null output buffer");
    }
    if !out_composite_var.is_null() && sigma_f.is_null() {
        return invalid("composite variance requested without sigma_f");
    }

    let row = SparseRow {
        compound_id: String::new(),
        y: (0..p)
            .map(|j| if mask[j] != 0 { Some(y[j]) } else { None })
            .collect(),
        f: f.to_vec(),
        sigma_f: slice_arg(sigma_f, p).map(|s| s.to_vec()),
    };
    let res = match complete_row(params, &row) {
        Ok(res) => res,
        Err(e) => return status_of(&e),
    };

    let out_mean = std::slice::from_raw_parts_mut(out_mean, p);
    let out_var = std::slice::from_raw_parts_mut(out_var, p);
    for j in 0..p {
        if mask[j] != 0 {
            out_mean[j] = y[j];
            out_var[j] = 0.0;
        }
    }
    for (a, &j) in res.partition.missing_idx().iter().enumerate() {
        out_mean[j] = res.mu_tilde[a];
        out_var[j] = res.sigma_tilde[(a, a)];
    }
    if !out_composite_var.is_null() {
        let out_comp = std::slice::from_raw_parts_mut(out_composite_var, p);
        let comp = match &res.composite_var {
            Some(c) => c,
            None => return invalid("model row produced no composite variance"),
        };
        for j in 0..p {
            if mask[j] != 0 {
                out_comp[j] = 0.0;
            }
        }
        for (a, &j) in res.partition.missing_idx().iter().enumerate() {
            out_comp[j] = comp[a];
        }
    }
    QcompStatus::Ok
}

/// Gain of certainty for an observation pattern, written to `out_goc`
/// (length `p`, standardized units, zero at observed positions).
///
/// # Safety
/// `observed_mask` and `out_goc` must reference arrays of length `p`.
#[no_mangle]
pub unsafe extern "C" fn qcomp_goc(
    model: *const QcompModel,
    observed_mask: *const u8,
    out_goc: *mut f64,
) -> QcompStatus {
    if model.is_null() {
        return invalid("null model handle");
    }
    let params = &(*model).params;
    let p = params.p();
    let Some(mask) = slice_arg(observed_mask, p) else {
        return invalid("null pointer argument");
    };
    if out_goc.is_null() {
        return invalid("null output buffer");
    }
    let bool_mask: Vec<bool> = mask.iter().map(|&m| m != 0).collect();
    let part = MaskPartition::from_mask(&bool_mask);
    let goc = match gain_of_certainty(params, &part) {
        Ok(goc) => goc,
        Err(e) => return status_of(&e),
    };
    let out = std::slice::from_raw_parts_mut(out_goc, p);
    out.fill(0.0);
    for (a, &j) in part.missing_idx().iter().enumerate() {
        out[j] = goc[a];
    }
    QcompStatus::Ok
}

/// Greedy measurement plan for `target`. Candidates are all assays that are
/// neither observed nor the target. At most `p` steps are written to
/// `out_indices` / `out_marginal_goc`; `*out_len` receives the plan length.
///
/// # Safety
/// `observed_mask` must have length `p`; the output arrays must have room
/// for `p` entries.
#[no_mangle]
pub unsafe extern "C" fn qcomp_plan(
    model: *const QcompModel,
    target: usize,
    observed_mask: *const u8,
    stop_threshold: f64,
    out_indices: *mut usize,
    out_marginal_goc: *mut f64,
    out_len: *mut usize,
) -> QcompStatus {
    if model.is_null() {
        return invalid("null model handle");
    }
    let params = &(*model).params;
    let p = params.p();
    let Some(mask) = slice_arg(observed_mask, p) else {
        return invalid("null pointer argument");
    };
    if out_indices.is_null() || out_marginal_goc.is_null() || out_len.is_null() {
        return invalid("null output buffer");
    }
    let observed: Vec<usize> = (0..p).filter(|&j| mask[j] != 0).collect();
    let candidates: Vec<usize> = (0..p)
        .filter(|&j| mask[j] == 0 && j != target)
        .collect();
    let plan = match greedy_plan(params, target, &candidates, &observed, stop_threshold) {
        Ok(plan) => plan,
        Err(e) => return status_of(&e),
    };
    let indices = std::slice::from_raw_parts_mut(out_indices, p);
    let marginals = std::slice::from_raw_parts_mut(out_marginal_goc, p);
    for (i, step) in plan.iter().enumerate() {
        indices[i] = step.assay_index;
        marginals[i] = step.marginal_goc;
    }
    *out_len = plan.len();
    QcompStatus::Ok
}
