#ifndef ARCDOG_H
#define ARCDOG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ArcdogStatus {
  ARCDOG_STATUS_OK = 0,
  /**
   * Bad argument or configuration.
   */
  ARCDOG_STATUS_USAGE = 1,
  /**
   * Malformed or missing input data.
   */
  ARCDOG_STATUS_DATA = 2,
  /**
   * Rank deficiency, non-finite values or a degenerate batch.
   */
  ARCDOG_STATUS_NUMERICAL = 3,
  ARCDOG_STATUS_NULL_POINTER = 4,
  ARCDOG_STATUS_PANIC = 5,
} ArcdogStatus;

/**
 * A loaded or generated dataset.
 */
typedef struct ArcdogDataset ArcdogDataset;

/**
 * Trained classifier parameters.
 */
typedef struct ArcdogModel ArcdogModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *arcdog_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *arcdog_version(void);

/**
 * Load a binary dataset cache.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum ArcdogStatus arcdog_dataset_load(const char *path, struct ArcdogDataset **out);

/**
 * Generate the synthetic benchmark with default settings, a `grid × grid`
 * lattice and the given seed.
 *
 * # Safety
 * `out` must be a writable pointer.
 */
enum ArcdogStatus arcdog_dataset_synthetic(size_t grid, uint64_t seed, struct ArcdogDataset **out);

/**
 * Number of samples, or 0 for NULL.
 *
 * # Safety
 * `dataset` must be NULL or a live handle.
 */
size_t arcdog_dataset_len(const struct ArcdogDataset *dataset);

/**
 * Quadrant id of every sample, written to `out_regions[0..len]`.
 *
 * # Safety
 * `dataset` must be a live handle and `out_regions` must hold `len` bytes.
 */
enum ArcdogStatus arcdog_dataset_regions(const struct ArcdogDataset *dataset,
                                         uint8_t *out_regions,
                                         size_t len);

/**
 * # Safety
 * `dataset` must be NULL or a handle not yet freed.
 */
void arcdog_dataset_free(struct ArcdogDataset *dataset);

/**
 * Least-squares regression of `targets` (`m × d`, row-major) on `features`
 * (`m × f`) with a fixed ridge. Writes the residual and target Frobenius
 * norms, and the `f × d` coefficients when `out_coefficients` is not NULL.
 *
 * # Safety
 * Input buffers must hold `m*f` and `m*d` doubles; `out_coefficients`, if
 * given, must hold `f*d` doubles.
 */
enum ArcdogStatus arcdog_pinv_least_squares(const double *features,
                                            size_t m,
                                            size_t f,
                                            const double *targets,
                                            size_t d,
                                            double ridge,
                                            double *out_residual_norm,
                                            double *out_target_norm,
                                            double *out_coefficients);

/**
 * Exact Euclidean 1-NN of each `test` row (`m × f`) among `train` rows
 * (`n × f`). Ties go to the lowest region id, then the lowest row.
 *
 * # Safety
 * Buffers must hold `n*f`, `n`, `m*f` and (outputs) `m` elements.
 */
enum ArcdogStatus arcdog_knn(const double *train,
                             const uint8_t *train_regions,
                             size_t n,
                             const double *test,
                             size_t m,
                             size_t f,
                             uint8_t *out_region,
                             size_t *out_index,
                             double *out_distance);

/**
 * Load a checkpoint written by `arcdog train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum ArcdogStatus arcdog_model_load(const char *path, struct ArcdogModel **out);

/**
 * Input shape `(timepoints, channels)`, class count and feature width.
 *
 * # Safety
 * `model` must be a live handle; each output pointer may be NULL.
 */
enum ArcdogStatus arcdog_model_dims(const struct ArcdogModel *model,
                                    size_t *out_timepoints,
                                    size_t *out_channels,
                                    size_t *out_classes,
                                    size_t *out_features);

/**
 * Eval-mode forward pass on `batch` standardized inputs laid out
 * `[batch, timepoints, channels]`. Writes `batch × classes` logits and,
 * when `out_features` is not NULL, `batch × feature_dim` features.
 *
 * # Safety
 * `input` must hold `batch*timepoints*channels` doubles and the outputs
 * their stated sizes.
 */
enum ArcdogStatus arcdog_model_forward(const struct ArcdogModel *model,
                                       const double *input,
                                       size_t batch,
                                       double *out_logits,
                                       double *out_features);

/**
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void arcdog_model_free(struct ArcdogModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ARCDOG_H */
