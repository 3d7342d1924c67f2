#ifndef SEDM_H
#define SEDM_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SedmStatus {
  SEDM_STATUS_OK = 0,
  SEDM_STATUS_NULL_POINTER = 1,
  SEDM_STATUS_INVALID_ARGUMENT = 2,
  SEDM_STATUS_IO = 3,
  SEDM_STATUS_BAD_CHECKPOINT = 4,
  SEDM_STATUS_NUMERIC = 5,
  SEDM_STATUS_BUFFER_TOO_SMALL = 6,
  SEDM_STATUS_PANIC = 7,
} SedmStatus;

/**
 * Opaque trained model.
 */
typedef struct SedmModel SedmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *sedm_last_error(void);

/**
 * Static, NUL-terminated version string.
 */
const char *sedm_version(void);

uint32_t sedm_sample_rate(void);

/**
 * Loads a checkpoint file. On success `*out` owns a model that must be
 * released with [`sedm_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SedmStatus sedm_model_load(const char *path, struct SedmModel **out);

/**
 * Loads a checkpoint from memory.
 *
 * # Safety
 * `bytes` must be valid for `len` reads; `out` must be writable.
 */
enum SedmStatus sedm_model_from_bytes(const uint8_t *bytes, size_t len, struct SedmModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from a load call and not be freed twice.
 */
void sedm_model_free(struct SedmModel *model);

/**
 * Number of reverse steps the model runs.
 *
 * # Safety
 * `model` must be a live handle or null (returns 0).
 */
size_t sedm_model_steps(const struct SedmModel *model);

/**
 * Enhances `len` samples at 16 kHz into `out`, which must hold `out_len >= len`
 * samples. The output has the input's length.
 *
 * # Safety
 * `input` must be valid for `len` reads and `out` for `out_len` writes.
 */
enum SedmStatus sedm_enhance(const struct SedmModel *model,
                             const double *input,
                             size_t len,
                             double *out,
                             size_t out_len);

/**
 * Scale-invariant SDR in dB of `estimate` against `reference`.
 *
 * # Safety
 * Both buffers must be valid for `len` reads; `out` must be writable.
 */
enum SedmStatus sedm_si_sdr(const double *reference,
                            const double *estimate,
                            size_t len,
                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEDM_H */
