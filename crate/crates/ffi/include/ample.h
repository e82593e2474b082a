#ifndef AMPLE_H
#define AMPLE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every `ample_*` call.
 */
typedef enum AmpleStatus {
  AMPLE_STATUS_OK = 0,
  AMPLE_STATUS_NULL_POINTER = 1,
  AMPLE_STATUS_INVALID_ARGUMENT = 2,
  AMPLE_STATUS_CONFIG = 3,
  AMPLE_STATUS_IO = 4,
  AMPLE_STATUS_FORMAT = 5,
  AMPLE_STATUS_DIVERGENCE = 6,
  AMPLE_STATUS_NUMERIC = 7,
  AMPLE_STATUS_DEGENERATE_INPUT = 8,
  AMPLE_STATUS_PANIC = 9,
} AmpleStatus;

/**
 * Opaque feature bundle.
 */
typedef struct AmpleBundle AmpleBundle;

/**
 * Opaque trained or loaded model.
 */
typedef struct AmpleModel AmpleModel;

/**
 * Training hyperparameters. Fill with [`ample_train_config_default`].
 */
typedef struct AmpleTrainConfig {
  size_t batch_size;
  size_t epochs;
  double lr;
  size_t warmup_epochs;
  double warmup_lr;
  double alpha;
  double beta;
  uint64_t seed;
  /**
   * Weight-generator hidden width; 0 selects the default.
   */
  size_t hidden_dim;
  /**
   * Nonzero trains on every class instead of the base split only.
   */
  uint8_t all_classes;
} AmpleTrainConfig;

/**
 * Base-to-novel scores. Accuracies are fractions in `[0, 1]`.
 */
typedef struct AmpleB2nReport {
  double base_accuracy;
  double new_accuracy;
  double hm;
  size_t base_correct;
  size_t base_total;
  size_t new_correct;
  size_t new_total;
} AmpleB2nReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The
 * pointer stays valid until the next `ample_*` call on the same thread.
 */
const char *ample_last_error_message(void);

/**
 * Load a bundle from a directory or manifest path.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum AmpleStatus ample_bundle_load(const char *path,
                                   uint8_t verify_logits,
                                   struct AmpleBundle **out);

/**
 * Synthesize a bundle with clean prompts (`prompt_bias` 0) or decoy
 * prompts (`prompt_bias` > 0).
 *
 * # Safety
 * `dims` must point to `num_backbones` values; `out` must be writable.
 */
enum AmpleStatus ample_bundle_synth(size_t num_samples,
                                    size_t num_classes,
                                    size_t num_prompts,
                                    const size_t *dims,
                                    size_t num_backbones,
                                    double class_separation,
                                    double prompt_bias,
                                    uint64_t seed,
                                    struct AmpleBundle **out);

/**
 * Write a bundle to a directory.
 *
 * # Safety
 * `bundle` must come from this library; `dir` must be NUL-terminated.
 */
enum AmpleStatus ample_bundle_save(const struct AmpleBundle *bundle, const char *dir);

/**
 * Sample, class and prompt counts of a bundle. Any out pointer may be null.
 *
 * # Safety
 * `bundle` must come from this library; non-null outs must be writable.
 */
enum AmpleStatus ample_bundle_dims(const struct AmpleBundle *bundle,
                                   size_t *num_samples,
                                   size_t *num_classes,
                                   size_t *num_prompts,
                                   size_t *num_backbones);

/**
 * # Safety
 * `bundle` must be null or come from this library, and not be used afterwards.
 */
void ample_bundle_free(struct AmpleBundle *bundle);

/**
 * Default hyperparameters.
 *
 * # Safety
 * `out` must be writable.
 */
enum AmpleStatus ample_train_config_default(struct AmpleTrainConfig *out);

/**
 * Fit a model on `bundle`.
 *
 * # Safety
 * `bundle` and `config` must be valid; `out` must be writable.
 */
enum AmpleStatus ample_train(const struct AmpleBundle *bundle,
                             const struct AmpleTrainConfig *config,
                             struct AmpleModel **out);

/**
 * # Safety
 * `model` must come from this library; `dir` must be NUL-terminated.
 */
enum AmpleStatus ample_model_save(const struct AmpleModel *model, const char *dir);

/**
 * # Safety
 * `dir` must be NUL-terminated; `out` must be writable.
 */
enum AmpleStatus ample_model_load(const char *dir, struct AmpleModel **out);

/**
 * # Safety
 * `model` must be null or come from this library, and not be used afterwards.
 */
void ample_model_free(struct AmpleModel *model);

/**
 * Base-to-novel evaluation on the bundle's test split.
 *
 * # Safety
 * `model` and `bundle` must be valid; `out` must be writable.
 */
enum AmpleStatus ample_eval_b2n(const struct AmpleModel *model,
                                const struct AmpleBundle *bundle,
                                struct AmpleB2nReport *out);

/**
 * Plain accuracy on the target's test split over all of its classes.
 * `domain_gen` only changes the task label, not the arithmetic.
 *
 * # Safety
 * `model` and `target` must be valid; `accuracy` must be writable.
 */
enum AmpleStatus ample_eval_transfer(const struct AmpleModel *model,
                                     const struct AmpleBundle *target,
                                     uint8_t domain_gen,
                                     double *accuracy);

/**
 * `2·base·new / (base + new)`.
 *
 * # Safety
 * `out` must be writable.
 */
enum AmpleStatus ample_harmonic_mean(double base, double new_, double *out);

/**
 * Two-tailed paired Student t-test. Either out pointer may be null.
 *
 * # Safety
 * `a` and `b` must each point to `len` values.
 */
enum AmpleStatus ample_paired_t_test(const double *a,
                                     const double *b,
                                     size_t len,
                                     double *t_statistic,
                                     double *p_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AMPLE_H */
