#ifndef ERGOSTAT_H
#define ERGOSTAT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ErgoStatus {
  ERGO_STATUS_OK = 0,
  ERGO_STATUS_NULL_POINTER = 1,
  // Invalid parameters, model specification or scheme.
  ERGO_STATUS_INVALID_ARGUMENT = 2,
  // Input too short or otherwise outside the supported range.
  ERGO_STATUS_RANGE = 3,
  // The model cannot answer the query (for example exact probabilities
  // from a Monte Carlo oracle).
  ERGO_STATUS_CAPABILITY = 4,
  ERGO_STATUS_IO = 5,
  ERGO_STATUS_PARSE = 6,
  // A buffer supplied by the caller is too small.
  ERGO_STATUS_BUFFER_TOO_SMALL = 7,
  ERGO_STATUS_PANIC = 8,
} ErgoStatus;

// Opaque calibrated goodness-of-fit threshold.
typedef struct ErgoCalibration ErgoCalibration;

// Opaque process model.
typedef struct ErgoModel ErgoModel;

// Opaque sample of finite reals.
typedef struct ErgoSample ErgoSample;

// Truncation of the distance: tuple lengths `1..=m_max`, resolutions `0..=l_max`.
typedef struct ErgoScheme {
  size_t m_max;
  uint32_t l_max;
} ErgoScheme;

// A truncated distance; the untruncated value lies in `[value, value + tail_bound]`.
typedef struct ErgoDistance {
  double value;
  double tail_bound;
  size_t m_max;
  uint32_t l_max;
} ErgoDistance;

typedef struct ErgoGofResult {
  // 1 when H0 is rejected.
  int32_t reject;
  struct ErgoDistance statistic;
  double gamma_hat;
} ErgoGofResult;

typedef struct ErgoClassification {
  // 1 when z is assigned to x's law, 2 for y's.
  uint8_t label;
  struct ErgoDistance d_xz;
  struct ErgoDistance d_yz;
  // 1 when the truncation bound certifies the order of the two distances.
  int32_t certified;
} ErgoClassification;

typedef struct ErgoChangePoint {
  size_t k_hat;
  size_t boundary;
  size_t n;
  // Scan value at `k_hat`.
  double dhat_max;
} ErgoChangePoint;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer
// stays valid until the next failing call on the same thread.
const char *ergo_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *ergo_version(void);

// The default truncation, `m_max = 3`, `l_max = 8`.
struct ErgoScheme ergo_scheme_default(void);

// Copies `len` values into a new sample. Rejects non-finite values.
//
// # Safety
// `values` must point to `len` readable doubles (it may be NULL when `len`
// is 0); `out` must be valid for writes.
enum ErgoStatus ergo_sample_new(const double *values, size_t len, struct ErgoSample **out);

// Reads a sample from a text file (one value per line), or from the named
// column of a headed CSV file when `column` is not NULL.
//
// # Safety
// `path` and `column` (if not NULL) must be NUL-terminated strings; `out`
// must be valid for writes.
enum ErgoStatus ergo_sample_read(const char *path, const char *column, struct ErgoSample **out);

// Number of values in the sample; 0 for NULL.
//
// # Safety
// `sample` must be NULL or a live sample handle.
size_t ergo_sample_len(const struct ErgoSample *sample);

// Copies the sample into `buf`, which must hold at least
// `ergo_sample_len(sample)` values.
//
// # Safety
// `sample` must be a live handle; `buf` must be valid for `cap` writes.
enum ErgoStatus ergo_sample_copy(const struct ErgoSample *sample, double *buf, size_t cap);

// # Safety
// `sample` must be NULL or a handle not yet freed.
void ergo_sample_free(struct ErgoSample *sample);

// Parses a JSON model specification.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be valid for writes.
enum ErgoStatus ergo_model_from_json(const char *json, struct ErgoModel **out);

// Loads a model specification file (`.json` as JSON, anything else as TOML).
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be valid for writes.
enum ErgoStatus ergo_model_load(const char *path, struct ErgoModel **out);

// # Safety
// `model` must be NULL or a handle not yet freed.
void ergo_model_free(struct ErgoModel *model);

// Draws a stationary sample of length `n`; the result depends only on the
// model, `n` and `seed`.
//
// # Safety
// `model` must be a live handle; `out` must be valid for writes.
enum ErgoStatus ergo_model_sample(const struct ErgoModel *model,
                                  size_t n,
                                  uint64_t seed,
                                  struct ErgoSample **out);

// Exact stationary probability of the dyadic cell `cell[0..m]` at
// resolution `l`.
//
// # Safety
// `model` must be a live handle; `cell` must point to `m` readable values;
// `out` must be valid for writes.
enum ErgoStatus ergo_model_cell_prob(const struct ErgoModel *model,
                                     const int64_t *cell,
                                     size_t m,
                                     uint32_t l,
                                     double *out);

// d̂ between two samples.
//
// # Safety
// `x`, `y` must be live handles; `out` must be valid for writes.
enum ErgoStatus ergo_dhat(const struct ErgoSample *x,
                          const struct ErgoSample *y,
                          struct ErgoScheme scheme_,
                          struct ErgoDistance *out);

// d̂ between a sample and a model.
//
// # Safety
// `x`, `model` must be live handles; `out` must be valid for writes.
enum ErgoStatus ergo_dhat_model(const struct ErgoSample *x,
                                const struct ErgoModel *model,
                                struct ErgoScheme scheme_,
                                struct ErgoDistance *out);

// Exact truncated distance between two models.
//
// # Safety
// `a`, `b` must be live handles; `out` must be valid for writes.
enum ErgoStatus ergo_model_distance(const struct ErgoModel *a,
                                    const struct ErgoModel *b,
                                    struct ErgoScheme scheme_,
                                    struct ErgoDistance *out);

// Monte Carlo threshold for the goodness-of-fit test of length-`n` samples
// against `model` at level `alpha`, from `n_cal` calibration draws.
//
// # Safety
// `model` must be a live handle; `out` must be valid for writes.
enum ErgoStatus ergo_calibrate(const struct ErgoModel *model,
                               double alpha,
                               size_t n,
                               size_t n_cal,
                               uint64_t seed,
                               struct ErgoScheme scheme_,
                               struct ErgoCalibration **out);

// The calibrated threshold γ̂; NaN for NULL.
//
// # Safety
// `cal` must be NULL or a live handle.
double ergo_calibration_gamma(const struct ErgoCalibration *cal);

// # Safety
// `cal` must be NULL or a handle not yet freed.
void ergo_calibration_free(struct ErgoCalibration *cal);

// Tests `x` against `model` with a threshold from [`ergo_calibrate`]; `x`
// must have the calibrated length.
//
// # Safety
// `x`, `model`, `cal` must be live handles; `out` must be valid for writes.
enum ErgoStatus ergo_gof_test(const struct ErgoSample *x,
                              const struct ErgoModel *model,
                              const struct ErgoCalibration *cal,
                              struct ErgoGofResult *out);

// Assigns `z` to the law of `x` (label 1) or `y` (label 2).
//
// # Safety
// `x`, `y`, `z` must be live handles; `out` must be valid for writes.
enum ErgoStatus ergo_classify(const struct ErgoSample *x,
                              const struct ErgoSample *y,
                              const struct ErgoSample *z,
                              struct ErgoScheme scheme_,
                              struct ErgoClassification *out);

// Change-point estimate over `[b(n), n - b(n)]`, where `boundary` is an
// expression in `n` (NULL means `sqrt(n)`).
//
// # Safety
// `z` must be a live handle; `boundary` NULL or a NUL-terminated string;
// `out` valid for writes.
enum ErgoStatus ergo_changepoint(const struct ErgoSample *z,
                                 struct ErgoScheme scheme_,
                                 const char *boundary,
                                 struct ErgoChangePoint *out);

// Writes d̂(z[..t], z[t..]) for `t = lo..=hi` into `buf[0..=hi-lo]`.
//
// # Safety
// `z` must be a live handle; `buf` must be valid for `cap` writes.
enum ErgoStatus ergo_scan(const struct ErgoSample *z,
                          struct ErgoScheme scheme_,
                          size_t lo,
                          size_t hi,
                          double *buf,
                          size_t cap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ERGOSTAT_H */
