//! C ABI for the forecasting library: opaque handles, status codes, and a
//! thread-local last-error message. All functions are panic-safe; the
//! generated header lives in `include/driftline.h` (regenerate with
//! `cargo build -p driftline-ffi --features generate-header`).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use driftline::mean_model::{fit, FittedModel, ModelSpec};
use driftline::timebase::{RegressorTable, TimeSeries};
use driftline::volatility::VolatilityConfig;
use driftline::{Error, Frequency};

/// Status code returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DlStatus {
    DlOk = 0,
    /// A pointer argument was null or an argument was out of range.
    DlInvalidArgument = 1,
    DlConfigError = 2,
    DlDataError = 3,
    DlNumericError = 4,
    DlIoError = 5,
    /// A panic was caught at the boundary.
    DlInternalError = 6,
}

/// Sampling frequency of a series.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DlFrequency {
    DlHourly = 0,
    DlDaily = 1,
    DlWeekly = 2,
}

/// Opaque series handle: observations plus optional regressor columns.
pub struct DlSeries {
    series: TimeSeries,
    regressors: RegressorTable,
}

/// Opaque fitted-model handle.
pub struct DlModel {
    model: FittedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|c| *c != '\0').collect();
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> DlStatus {
    match err {
        Error::Config(_) => DlStatus::DlConfigError,
        Error::Data(_) => DlStatus::DlDataError,
        Error::Numeric(_) | Error::NonConvergence { .. } => DlStatus::DlNumericError,
        Error::Io(_) => DlStatus::DlIoError,
    }
}

fn fail(err: Error) -> DlStatus {
    let status = status_of(&err);
    set_error(&err.to_string());
    status
}

fn invalid(msg: &str) -> DlStatus {
    set_error(msg);
    DlStatus::DlInvalidArgument
}

/// Runs a closure with panics converted to `DlInternalError`.
fn guarded(f: impl FnOnce() -> DlStatus) -> DlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            DlStatus::DlInternalError
        }
    }
}

unsafe fn str_arg<'a>(ptr: *const c_char) -> Result<&'a str, DlStatus> {
    if ptr.is_null() {
        return Err(invalid("null string argument"));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| invalid("string argument is not valid UTF-8"))
}

/// Message describing the most recent error on this thread. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a series from epoch-second timestamps (naive local time) and
/// values (NaN marks a missing observation). On success writes a handle to
/// `out`; free it with `dl_series_free`.
///
/// # Safety
/// `epoch_seconds` and `values` must point to `len` readable elements;
/// `out` must be a valid writable pointer.
#[no_mangle]
pub unsafe extern "C" fn dl_series_create(
    epoch_seconds: *const i64,
    values: *const f64,
    len: usize,
    frequency: DlFrequency,
    out: *mut *mut DlSeries,
) -> DlStatus {
    guarded(|| {
        if epoch_seconds.is_null() || values.is_null() || out.is_null() {
            return invalid("null pointer argument");
        }
        let stamps = std::slice::from_raw_parts(epoch_seconds, len);
        let vals = std::slice::from_raw_parts(values, len).to_vec();
        let mut timestamps = Vec::with_capacity(len);
        for &s in stamps {
            match chrono::DateTime::from_timestamp(s, 0) {
                Some(dt) => timestamps.push(dt.naive_utc()),
                None => return invalid("timestamp out of range"),
            }
        }
        let freq = match frequency {
            DlFrequency::DlHourly => Frequency::Hourly,
            DlFrequency::DlDaily => Frequency::Daily,
            DlFrequency::DlWeekly => Frequency::Weekly,
        };
        match TimeSeries::new(timestamps, vals, freq) {
            Ok(series) => {
                *out = Box::into_raw(Box::new(DlSeries {
                    series,
                    regressors: RegressorTable::new(),
                }));
                DlStatus::DlOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Attaches a named regressor column aligned with the series.
///
/// # Safety
/// `series` must be a live handle from `dl_series_create`; `values` must
/// point to `len` readable elements; `name` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dl_series_add_regressor(
    series: *mut DlSeries,
    name: *const c_char,
    values: *const f64,
    len: usize,
) -> DlStatus {
    guarded(|| {
        if series.is_null() || values.is_null() {
            return invalid("null pointer argument");
        }
        let name = match str_arg(name) {
            Ok(s) => s,
            Err(st) => return st,
        };
        let handle = &mut *series;
        if len != handle.series.len() {
            return invalid("regressor length does not match the series");
        }
        let vals = std::slice::from_raw_parts(values, len).to_vec();
        match handle.regressors.push(name.to_string(), vals) {
            Ok(()) => DlStatus::DlOk,
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `series` must be a handle from `dl_series_create` that has not been
/// freed, or null.
#[no_mangle]
pub unsafe extern "C" fn dl_series_free(series: *mut DlSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// Fits the conditional mean model described by `model_spec_json`
/// (optionally attaching a volatility model from `volatility_json`) and
/// writes a model handle to `out`.
///
/// # Safety
/// `series` must be a live series handle; the JSON pointers must be
/// NUL-terminated strings (`volatility_json` may be null); `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn dl_fit_json(
    series: *const DlSeries,
    model_spec_json: *const c_char,
    volatility_json: *const c_char,
    out: *mut *mut DlModel,
) -> DlStatus {
    guarded(|| {
        if series.is_null() || out.is_null() {
            return invalid("null pointer argument");
        }
        let spec_text = match str_arg(model_spec_json) {
            Ok(s) => s,
            Err(st) => return st,
        };
        let spec: ModelSpec = match serde_json::from_str(spec_text) {
            Ok(s) => s,
            Err(e) => return fail(Error::Config(format!("model spec parse failure: {e}"))),
        };
        let vol: Option<VolatilityConfig> = if volatility_json.is_null() {
            None
        } else {
            let text = match str_arg(volatility_json) {
                Ok(t) => t,
                Err(st) => return st,
            };
            match serde_json::from_str(text) {
                Ok(v) => Some(v),
                Err(e) => {
                    return fail(Error::Config(format!(
                        "volatility config parse failure: {e}"
                    )))
                }
            }
        };
        let handle = &*series;
        let mut model = match fit(&handle.series, &handle.regressors, &spec) {
            Ok(m) => m,
            Err(e) => return fail(e),
        };
        if let Some(vol) = vol {
            if let Err(e) = model.fit_volatility(&vol) {
                return fail(e);
            }
        }
        *out = Box::into_raw(Box::new(DlModel { model }));
        DlStatus::DlOk
    })
}

/// Simulation-free prediction `horizon` periods past the training span.
/// `yhat` receives the point forecast; `lower`/`upper` (optional, may be
/// null) receive interval bounds and require a fitted volatility model.
/// Models with current-value regressors cannot be predicted through this
/// entry point (future regressor values are unavailable here).
///
/// # Safety
/// `model` must be a live model handle; `yhat` (and `lower`/`upper` when
/// non-null) must point to `horizon` writable elements.
#[no_mangle]
pub unsafe extern "C" fn dl_model_predict(
    model: *const DlModel,
    horizon: usize,
    yhat: *mut f64,
    lower: *mut f64,
    upper: *mut f64,
) -> DlStatus {
    guarded(|| {
        if model.is_null() || yhat.is_null() {
            return invalid("null pointer argument");
        }
        let handle = &*model;
        let wants_intervals = !lower.is_null() || !upper.is_null();
        if wants_intervals && handle.model.volatility.is_none() {
            return fail(Error::Config(
                "interval output requested but the model has no volatility table".into(),
            ));
        }
        let forecast = match handle.model.predict(horizon, &RegressorTable::new()) {
            Ok(f) => f,
            Err(e) => return fail(e),
        };
        std::slice::from_raw_parts_mut(yhat, horizon).copy_from_slice(&forecast.point);
        if !lower.is_null() {
            if let Some(lo) = &forecast.lower {
                std::slice::from_raw_parts_mut(lower, horizon).copy_from_slice(lo);
            }
        }
        if !upper.is_null() {
            if let Some(hi) = &forecast.upper {
                std::slice::from_raw_parts_mut(upper, horizon).copy_from_slice(hi);
            }
        }
        DlStatus::DlOk
    })
}

/// Serializes the model as a self-describing JSON document. Free the
/// returned string with `dl_string_free`.
///
/// # Safety
/// `model` must be a live model handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dl_model_to_json(
    model: *const DlModel,
    out: *mut *mut c_char,
) -> DlStatus {
    guarded(|| {
        if model.is_null() || out.is_null() {
            return invalid("null pointer argument");
        }
        match (*model).model.to_json() {
            Ok(doc) => match CString::new(doc) {
                Ok(c) => {
                    *out = c.into_raw();
                    DlStatus::DlOk
                }
                Err(_) => fail(Error::Data("model document contains NUL".into())),
            },
            Err(e) => fail(e),
        }
    })
}

/// Reconstructs a model from a JSON document produced by
/// `dl_model_to_json`; predictions reproduce bit for bit.
///
/// # Safety
/// `doc` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dl_model_from_json(
    doc: *const c_char,
    out: *mut *mut DlModel,
) -> DlStatus {
    guarded(|| {
        if out.is_null() {
            return invalid("null pointer argument");
        }
        let text = match str_arg(doc) {
            Ok(s) => s,
            Err(st) => return st,
        };
        match FittedModel::from_json(text) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(DlModel { model }));
                DlStatus::DlOk
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `model` must be a handle from `dl_fit_json`/`dl_model_from_json` that
/// has not been freed, or null.
#[no_mangle]
pub unsafe extern "C" fn dl_model_free(model: *mut DlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Detects trend changepoints with the given configuration (JSON; null for
/// frequency defaults) and returns them as a JSON document
/// `{"instants": [...], "magnitudes": [...], "baseline_slope": ...}`.
/// Free the returned string with `dl_string_free`.
///
/// # Safety
/// `series` must be a live series handle; `config_json` may be null;
/// `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dl_detect_trend_changepoints_json(
    series: *const DlSeries,
    config_json: *const c_char,
    out_json: *mut *mut c_char,
) -> DlStatus {
    guarded(|| {
        if series.is_null() || out_json.is_null() {
            return invalid("null pointer argument");
        }
        let handle = &*series;
        let config = if config_json.is_null() {
            driftline::changepoint::TrendCpConfig::defaults_for(handle.series.frequency())
        } else {
            let text = match str_arg(config_json) {
                Ok(t) => t,
                Err(st) => return st,
            };
            match serde_json::from_str(text) {
                Ok(c) => c,
                Err(e) => {
                    return fail(Error::Config(format!(
                        "changepoint config parse failure: {e}"
                    )))
                }
            }
        };
        match driftline::changepoint::detect_trend_changepoints(&handle.series, &config) {
            Ok(set) => {
                let doc = serde_json::to_string(&set).unwrap_or_else(|_| "{}".into());
                match CString::new(doc) {
                    Ok(c) => {
                        *out_json = c.into_raw();
                        DlStatus::DlOk
                    }
                    Err(_) => fail(Error::Data("output contains NUL".into())),
                }
            }
            Err(e) => fail(e),
        }
    })
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must be a pointer previously returned by a `dl_*` function that
/// allocates a string, not yet freed, or null.
#[no_mangle]
pub unsafe extern "C" fn dl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
