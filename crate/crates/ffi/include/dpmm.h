#ifndef DPMM_H
#define DPMM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every entry point.
 */
typedef enum DpmmStatus {
  DPMM_STATUS_OK = 0,
  DPMM_STATUS_INVALID_ARGUMENT = 1,
  DPMM_STATUS_DIMENSION_MISMATCH = 2,
  DPMM_STATUS_DEGENERATE_MODALITY = 3,
  DPMM_STATUS_DEGENERATE_INPUT = 4,
  DPMM_STATUS_INVALID_SAMPLE = 5,
  DPMM_STATUS_UNDEFINED_METRIC = 6,
  DPMM_STATUS_CI_FAILURE = 7,
  DPMM_STATUS_DIVERGENCE = 8,
  DPMM_STATUS_SCHEMA_MISMATCH = 9,
  DPMM_STATUS_CONFIG = 10,
  DPMM_STATUS_PARSE = 11,
  DPMM_STATUS_IO = 12,
  DPMM_STATUS_NULL_POINTER = 13,
  DPMM_STATUS_PANIC = 14,
} DpmmStatus;

/**
 * Opaque trained model.
 */
typedef struct DpmmModel DpmmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null after a success.
 * The pointer stays valid until the next call into the library on this thread.
 */
const char *dpmm_last_error_message(void);

/**
 * # Safety
 * `values` must point to `len` readable doubles; `out` must be writable.
 */
enum DpmmStatus dpmm_log_sum_exp(const double *values, size_t len, double *out);

/**
 * # Safety
 * `out` must be writable.
 */
enum DpmmStatus dpmm_digamma(double x, double *out);

/**
 * `KL(Beta(qa, qb) ‖ Beta(pa, pb))`.
 *
 * # Safety
 * `out` must be writable.
 */
enum DpmmStatus dpmm_kl_beta(double qa, double qb, double pa, double pb, double *out);

/**
 * KL divergence between diagonal Gaussians given as means and log-variances of length `dim`.
 *
 * # Safety
 * The four input arrays must hold `dim` doubles each; `out` must be writable.
 */
enum DpmmStatus dpmm_kl_gauss_diag(const double *q_mu,
                                   const double *q_log_var,
                                   const double *p_mu,
                                   const double *p_log_var,
                                   size_t dim,
                                   double *out);

/**
 * Stick-breaking weights from `len` fractions in (0, 1]; pass 1 last for a truncated simplex.
 *
 * # Safety
 * `sticks` and `out` must hold `len` doubles.
 */
enum DpmmStatus dpmm_weights_from_sticks(const double *sticks, size_t len, double *out);

/**
 * One seeded draw of the `M·K` weights from the stick-breaking prior.
 *
 * # Safety
 * `out` must hold `num_modalities * truncation` doubles.
 */
enum DpmmStatus dpmm_sample_prior_weights(double eta,
                                          size_t num_modalities,
                                          size_t truncation,
                                          uint64_t seed,
                                          double *out,
                                          size_t out_len);

/**
 * Area under the ROC curve; labels must be 0 or 1.
 *
 * # Safety
 * `scores` and `labels` must hold `len` entries; `out` must be writable.
 */
enum DpmmStatus dpmm_auroc(const double *scores, const uint8_t *labels, size_t len, double *out);

/**
 * Loads a checkpoint file written by the `dpmm` tool.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
 * The handle must be released with [`dpmm_model_free`].
 */
enum DpmmStatus dpmm_model_load(const char *path, struct DpmmModel **out);

/**
 * Releases a model handle; null is ignored.
 *
 * # Safety
 * `model` must come from [`dpmm_model_load`] and not be used afterwards.
 */
void dpmm_model_free(struct DpmmModel *model);

/**
 * Number of modalities, or 0 for a null handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
size_t dpmm_model_num_modalities(const struct DpmmModel *model);

/**
 * Input dimension of modality `m`, or 0 when out of range.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
size_t dpmm_model_input_dim(const struct DpmmModel *model, size_t m);

/**
 * Latent embedding size, or 0 for a null handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
size_t dpmm_model_latent_dim(const struct DpmmModel *model);

/**
 * Embeds the features of modality `m`.
 *
 * # Safety
 * `x` must hold `x_len` doubles and `out` `out_len` doubles (the latent size).
 */
enum DpmmStatus dpmm_model_encode(const struct DpmmModel *model,
                                  size_t m,
                                  const double *x,
                                  size_t x_len,
                                  double *out,
                                  size_t out_len);

/**
 * Probability of the positive class for one sample.
 *
 * `features[m]` points to the features of modality `m` (length given by
 * [`dpmm_model_input_dim`]) or is null when that modality is missing. Missing
 * modalities are imputed with draws seeded by `seed`.
 *
 * # Safety
 * `features` must hold one pointer per modality, each null or pointing to
 * the modality's input dimension worth of doubles; `out` must be writable.
 */
enum DpmmStatus dpmm_model_predict(const struct DpmmModel *model,
                                   const double *const *features,
                                   size_t num_modalities,
                                   uint64_t seed,
                                   double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DPMM_H */
