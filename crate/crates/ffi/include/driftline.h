#ifndef DRIFTLINE_H
#define DRIFTLINE_H

/* Generated with cbindgen; edit the Rust source instead. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Sampling frequency of a series.
typedef enum DlFrequency {
  DL_HOURLY = 0,
  DL_DAILY = 1,
  DL_WEEKLY = 2,
} DlFrequency;

// Status code returned by every fallible call.
typedef enum DlStatus {
  DL_OK = 0,
  // A pointer argument was null or an argument was out of range.
  DL_INVALID_ARGUMENT = 1,
  DL_CONFIG_ERROR = 2,
  DL_DATA_ERROR = 3,
  DL_NUMERIC_ERROR = 4,
  DL_IO_ERROR = 5,
  // A panic was caught at the boundary.
  DL_INTERNAL_ERROR = 6,
} DlStatus;

// Opaque fitted-model handle.
typedef struct DlModel DlModel;

// Opaque series handle: observations plus optional regressor columns.
typedef struct DlSeries DlSeries;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent error on this thread. The pointer is
// valid until the next failing call on the same thread.
const char *dl_last_error_message(void);

// Creates a series from epoch-second timestamps (naive local time) and
// values (NaN marks a missing observation). On success writes a handle to
// `out`; free it with `dl_series_free`.
//
// # Safety
// `epoch_seconds` and `values` must point to `len` readable elements;
// `out` must be a valid writable pointer.
enum DlStatus dl_series_create(const int64_t *epoch_seconds,
                               const double *values,
                               size_t len,
                               enum DlFrequency frequency,
                               struct DlSeries **out);

// Attaches a named regressor column aligned with the series.
//
// # Safety
// `series` must be a live handle from `dl_series_create`; `values` must
// point to `len` readable elements; `name` must be a NUL-terminated string.
enum DlStatus dl_series_add_regressor(struct DlSeries *series,
                                      const char *name,
                                      const double *values,
                                      size_t len);

// # Safety
// `series` must be a handle from `dl_series_create` that has not been
// freed, or null.
void dl_series_free(struct DlSeries *series);

// Fits the conditional mean model described by `model_spec_json`
// (optionally attaching a volatility model from `volatility_json`) and
// writes a model handle to `out`.
//
// # Safety
// `series` must be a live series handle; the JSON pointers must be
// NUL-terminated strings (`volatility_json` may be null); `out` must be
// writable.
enum DlStatus dl_fit_json(const struct DlSeries *series,
                          const char *model_spec_json,
                          const char *volatility_json,
                          struct DlModel **out);

// Simulation-free prediction `horizon` periods past the training span.
// `yhat` receives the point forecast; `lower`/`upper` (optional, may be
// null) receive interval bounds and require a fitted volatility model.
// Models with current-value regressors cannot be predicted through this
// entry point (future regressor values are unavailable here).
//
// # Safety
// `model` must be a live model handle; `yhat` (and `lower`/`upper` when
// non-null) must point to `horizon` writable elements.
enum DlStatus dl_model_predict(const struct DlModel *model,
                               size_t horizon,
                               double *yhat,
                               double *lower,
                               double *upper);

// Serializes the model as a self-describing JSON document. Free the
// returned string with `dl_string_free`.
//
// # Safety
// `model` must be a live model handle; `out` must be writable.
enum DlStatus dl_model_to_json(const struct DlModel *model, char **out);

// Reconstructs a model from a JSON document produced by
// `dl_model_to_json`; predictions reproduce bit for bit.
//
// # Safety
// `doc` must be a NUL-terminated string; `out` must be writable.
enum DlStatus dl_model_from_json(const char *doc, struct DlModel **out);

// # Safety
// `model` must be a handle from `dl_fit_json`/`dl_model_from_json` that
// has not been freed, or null.
void dl_model_free(struct DlModel *model);

// Detects trend changepoints with the given configuration (JSON; null for
// frequency defaults) and returns them as a JSON document
// `{"instants": [...], "magnitudes": [...], "baseline_slope": ...}`.
// Free the returned string with `dl_string_free`.
//
// # Safety
// `series` must be a live series handle; `config_json` may be null;
// `out_json` must be writable.
enum DlStatus dl_detect_trend_changepoints_json(const struct DlSeries *series,
                                                const char *config_json,
                                                char **out_json);

// Frees a string returned by this library.
//
// # Safety
// `s` must be a pointer previously returned by a `dl_*` function that
// allocates a string, not yet freed, or null.
void dl_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DRIFTLINE_H */
