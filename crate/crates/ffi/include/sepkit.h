#ifndef SEPKIT_H
#define SEPKIT_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * How estimates are paired with references when scoring.
 */
typedef enum SepkitAssign {
  /**
   * Output k is scored against reference k.
   */
  SEPKIT_ASSIGN_DEFAULT = 0,
  /**
   * The pairing with the highest total SDR.
   */
  SEPKIT_ASSIGN_OPTIMAL = 1,
} SepkitAssign;

/**
 * Training stage a loaded model came from.
 */
typedef enum SepkitStage {
  /**
   * Embedding network only; separation goes through K-means.
   */
  SEPKIT_STAGE_DC = 0,
  SEPKIT_STAGE_JOINT = 1,
  SEPKIT_STAGE_DL = 2,
  /**
   * Mask network without embeddings.
   */
  SEPKIT_STAGE_UPIT = 3,
} SepkitStage;

/**
 * Result code of every call.
 */
typedef enum SepkitStatus {
  SEPKIT_STATUS_OK = 0,
  SEPKIT_STATUS_NULL_POINTER = 1,
  SEPKIT_STATUS_INVALID_ARGUMENT = 2,
  SEPKIT_STATUS_INPUT_TOO_SHORT = 3,
  SEPKIT_STATUS_SHAPE_MISMATCH = 4,
  SEPKIT_STATUS_INVALID_CONFIG = 5,
  SEPKIT_STATUS_DEGENERATE_REFERENCE = 6,
  SEPKIT_STATUS_UNSUPPORTED_SOURCE_COUNT = 7,
  SEPKIT_STATUS_INCOMPATIBLE_CHECKPOINT = 8,
  SEPKIT_STATUS_UNSUPPORTED_STAGE = 9,
  SEPKIT_STATUS_IO = 10,
  SEPKIT_STATUS_NUMERIC_ERROR = 11,
  SEPKIT_STATUS_BUFFER_TOO_SMALL = 12,
  SEPKIT_STATUS_PANIC = 13,
  SEPKIT_STATUS_OTHER = 14,
} SepkitStatus;

/**
 * Opaque model handle.
 */
typedef struct SepkitModel SepkitModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *sepkit_version(void);

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `capacity`). Returns the full message length excluding the
 * terminator, or 0 if the last call succeeded.
 *
 * # Safety
 * `buf` must be null or point to `capacity` writable bytes.
 */
size_t sepkit_last_error_message(char *buf, size_t capacity);

/**
 * Loads a checkpoint file. On success `*out` receives a handle that must be
 * released with [`sepkit_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SepkitStatus sepkit_model_load(const char *path, struct SepkitModel **out);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle from [`sepkit_model_load`] not yet freed.
 */
void sepkit_model_free(struct SepkitModel *model);

/**
 * Number of sources the model separates.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum SepkitStatus sepkit_model_num_sources(const struct SepkitModel *model, size_t *out);

/**
 * Training stage of the loaded checkpoint.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum SepkitStatus sepkit_model_stage(const struct SepkitModel *model, enum SepkitStage *out);

/**
 * Sets the seed and iteration cap of the K-means step used for
 * embedding-only models.
 *
 * # Safety
 * `model` must be a live handle.
 */
enum SepkitStatus sepkit_model_set_kmeans(struct SepkitModel *model,
                                          uint64_t seed,
                                          size_t max_iter);

/**
 * Separates a mono mixture of `len` samples. `out` must hold
 * `num_sources * len` values and receives the estimates source-major.
 *
 * # Safety
 * `model` must be a live handle, `mixture` must point to `len` readable
 * values and `out` to `out_capacity` writable values.
 */
enum SepkitStatus sepkit_separate(const struct SepkitModel *model,
                                  const double *mixture,
                                  size_t len,
                                  uint32_t sample_rate,
                                  double *out,
                                  size_t out_capacity);

/**
 * Scores `num_sources` estimates against references of `len` samples each.
 * The three output arrays receive SDR, SIR and SAR in dB, indexed by
 * reference; `assignment` (may be null) receives, for each estimate, the
 * index of the reference it was paired with. Unbounded ratios come back as
 * +/-infinity. `mode` is a [`SepkitAssign`] value, taken as an integer so
 * that out-of-range input is rejected instead of undefined.
 *
 * # Safety
 * `estimates` and `references` must point to `num_sources * len` readable
 * values; each output array must hold `num_sources` values.
 */
enum SepkitStatus sepkit_score(const double *estimates,
                               const double *references,
                               size_t num_sources,
                               size_t len,
                               uint32_t sample_rate,
                               uint32_t mode,
                               double *sdr_db,
                               double *sir_db,
                               double *sar_db,
                               size_t *assignment);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEPKIT_H */
