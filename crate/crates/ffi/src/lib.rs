//! C ABI over saved `splinefm` models.
//!
//! Models are opaque handles created by `sfm_model_load` or
//! `sfm_model_from_json` and released with `sfm_model_free`. Every fallible
//! call returns an [`SfmStatus`]; on failure the message is available from
//! `sfm_last_error` on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use splinefm::fm::ModelParams;
use splinefm::schema::{LabelKind, RawRecord, RawValue};
use splinefm::spline_basis::SplineBasis;
use splinefm::training::{predict, Loss};
use splinefm::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfmStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Format = 5,
    Data = 6,
    Numerical = 7,
    Internal = 8,
}

/// Opaque model handle.
pub struct SfmModel {
    model: ModelParams,
    names: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> SfmStatus {
    match e {
        Error::Invalid(_) | Error::Config(_) | Error::Dimension(_) => SfmStatus::InvalidArgument,
        Error::Io { .. } => SfmStatus::Io,
        Error::Format(_) => SfmStatus::Format,
        Error::Data(_) | Error::Field { .. } => SfmStatus::Data,
        Error::Numerical(_) => SfmStatus::Numerical,
        _ => SfmStatus::Internal,
    }
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (SfmStatus, String)>) -> SfmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SfmStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SfmStatus::Internal
        }
    }
}

fn lib(e: Error) -> (SfmStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (SfmStatus, String) {
    (SfmStatus::NullArgument, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (SfmStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (SfmStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

fn into_handle(model: ModelParams, out: *mut *mut SfmModel) {
    let names = model
        .schema()
        .fields
        .iter()
        .map(|f| CString::new(f.name.replace('\0', " ")).expect("nul removed"))
        .collect();
    // SAFETY: callers check `out` for null first.
    unsafe { *out = Box::into_raw(Box::new(SfmModel { model, names })) };
}

/// Loads a model JSON file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sfm_model_load(path: *const c_char, out: *mut *mut SfmModel) -> SfmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        into_handle(ModelParams::load(path).map_err(lib)?, out);
        Ok(())
    })
}

/// Parses a model from a JSON document.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sfm_model_from_json(json: *const c_char, out: *mut *mut SfmModel) -> SfmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let json = str_arg(json, "json")?;
        into_handle(ModelParams::from_json(json).map_err(lib)?, out);
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sfm_model_free(model: *mut SfmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of input fields, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sfm_model_num_fields(model: *const SfmModel) -> usize {
    model.as_ref().map_or(0, |m| m.names.len())
}

/// Name of field `index`, owned by the handle; null when out of range.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sfm_model_field_name(model: *const SfmModel, index: usize) -> *const c_char {
    model
        .as_ref()
        .and_then(|m| m.names.get(index))
        .map_or(ptr::null(), |n| n.as_ptr())
}

/// Whether the model predicts probabilities (1) or real values (0).
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sfm_model_is_binary(model: *const SfmModel) -> i32 {
    model
        .as_ref()
        .map_or(0, |m| i32::from(m.model.schema().label_kind == LabelKind::Binary))
}

unsafe fn record(m: &SfmModel, values: *const *const c_char, count: usize) -> Result<RawRecord, (SfmStatus, String)> {
    if count != m.names.len() {
        return Err((
            SfmStatus::InvalidArgument,
            format!("expected {} values, got {count}", m.names.len()),
        ));
    }
    if values.is_null() && count > 0 {
        return Err(null("values"));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let p = *values.add(i);
        out.push(if p.is_null() {
            RawValue::Missing
        } else {
            RawValue::text(str_arg(p, "value")?)
        });
    }
    Ok(RawRecord { values: out, label: 0.0 })
}

unsafe fn with_row(
    model: *const SfmModel,
    values: *const *const c_char,
    count: usize,
    out: *mut f64,
    f: impl FnOnce(&ModelParams, &splinefm::schema::EncodedRow) -> splinefm::Result<f64>,
) -> SfmStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let rec = record(m, values, count)?;
        let row = m.model.schema().encode_row(&rec).map_err(lib)?;
        *out = f(&m.model, &row).map_err(lib)?;
        Ok(())
    })
}

/// Raw model score for one record. `values` holds one string per field in
/// schema order; a null entry marks a missing value.
///
/// # Safety
/// `values` must point to `count` entries, each null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sfm_model_score(
    model: *const SfmModel,
    values: *const *const c_char,
    count: usize,
    out: *mut f64,
) -> SfmStatus {
    with_row(model, values, count, out, |m, row| m.score(row))
}

/// Prediction on the label scale: a probability for binary labels, the
/// de-standardized value for real labels.
///
/// # Safety
/// As for [`sfm_model_score`].
#[no_mangle]
pub unsafe extern "C" fn sfm_model_predict(
    model: *const SfmModel,
    values: *const *const c_char,
    count: usize,
    out: *mut f64,
) -> SfmStatus {
    with_row(model, values, count, out, |m, row| {
        let loss = match m.schema().label_kind {
            LabelKind::Binary => Loss::Logloss,
            LabelKind::Real => Loss::Squared,
        };
        predict(m, row, loss)
    })
}

/// Evaluates all `num_functions` clamped uniform B-spline basis functions of
/// the given degree at `z` into `out`. `z` is clamped into `[0, 1]`.
///
/// # Safety
/// `out` must have room for `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sfm_spline_eval(
    num_functions: usize,
    degree: usize,
    z: f64,
    out: *mut f64,
    out_len: usize,
) -> SfmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len < num_functions {
            return Err((
                SfmStatus::InvalidArgument,
                format!("output holds {out_len} values, need {num_functions}"),
            ));
        }
        let basis = SplineBasis::build_uniform(num_functions, degree).map_err(lib)?;
        let v = basis.eval(z).map_err(lib)?;
        std::slice::from_raw_parts_mut(out, v.len()).copy_from_slice(&v);
        Ok(())
    })
}

/// Message of the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sfm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version, static.
#[no_mangle]
pub extern "C" fn sfm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
