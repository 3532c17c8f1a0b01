#ifndef SPLINEFM_H
#define SPLINEFM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SfmStatus {
  SFM_STATUS_OK = 0,
  SFM_STATUS_NULL_ARGUMENT = 1,
  SFM_STATUS_INVALID_UTF8 = 2,
  SFM_STATUS_INVALID_ARGUMENT = 3,
  SFM_STATUS_IO = 4,
  SFM_STATUS_FORMAT = 5,
  SFM_STATUS_DATA = 6,
  SFM_STATUS_NUMERICAL = 7,
  SFM_STATUS_INTERNAL = 8,
} SfmStatus;

/**
 * Opaque model handle.
 */
typedef struct SfmModel SfmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a model JSON file. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SfmStatus sfm_model_load(const char *path, struct SfmModel **out);

/**
 * Parses a model from a JSON document.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SfmStatus sfm_model_from_json(const char *json, struct SfmModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void sfm_model_free(struct SfmModel *model);

/**
 * Number of input fields, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t sfm_model_num_fields(const struct SfmModel *model);

/**
 * Name of field `index`, owned by the handle; null when out of range.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
const char *sfm_model_field_name(const struct SfmModel *model, size_t index);

/**
 * Whether the model predicts probabilities (1) or real values (0).
 *
 * # Safety
 * `model` must be null or a live handle.
 */
int32_t sfm_model_is_binary(const struct SfmModel *model);

/**
 * Raw model score for one record. `values` holds one string per field in
 * schema order; a null entry marks a missing value.
 *
 * # Safety
 * `values` must point to `count` entries, each null or NUL-terminated.
 */
enum SfmStatus sfm_model_score(const struct SfmModel *model,
                               const char *const *values,
                               size_t count,
                               double *out);

/**
 * Prediction on the label scale: a probability for binary labels, the
 * de-standardized value for real labels.
 *
 * # Safety
 * As for [`sfm_model_score`].
 */
enum SfmStatus sfm_model_predict(const struct SfmModel *model,
                                 const char *const *values,
                                 size_t count,
                                 double *out);

/**
 * Evaluates all `num_functions` clamped uniform B-spline basis functions of
 * the given degree at `z` into `out`. `z` is clamped into `[0, 1]`.
 *
 * # Safety
 * `out` must have room for `out_len` doubles.
 */
enum SfmStatus sfm_spline_eval(size_t num_functions,
                               size_t degree,
                               double z,
                               double *out,
                               size_t out_len);

/**
 * Message of the last failure on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *sfm_last_error(void);

/**
 * Library version, static.
 */
const char *sfm_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPLINEFM_H */
