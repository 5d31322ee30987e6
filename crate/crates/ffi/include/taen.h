#ifndef TAEN_H
#define TAEN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TaenStatus {
  TAEN_STATUS_OK = 0,
  TAEN_STATUS_NULL_POINTER = 1,
  /**
   * Invalid argument or configuration.
   */
  TAEN_STATUS_CONFIG = 2,
  /**
   * Unreadable, malformed, or inconsistent data.
   */
  TAEN_STATUS_DATA = 3,
  /**
   * Numerical failure.
   */
  TAEN_STATUS_NUMERIC = 4,
  /**
   * Internal panic; the handle involved should be considered unusable.
   */
  TAEN_STATUS_PANIC = 5,
} TaenStatus;

typedef enum TaenMotionSign {
  TAEN_MOTION_SIGN_ALIGNED_IS_CLOSER = 0,
  TAEN_MOTION_SIGN_LITERAL = 1,
} TaenMotionSign;

/**
 * Feature matrix handle (T x d_feat, row-major f64).
 */
typedef struct TaenFeatures TaenFeatures;

/**
 * Trained model handle.
 */
typedef struct TaenModel TaenModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *taen_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *taen_version(void);

/**
 * Load a checkpoint. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum TaenStatus taen_model_load(const char *path, struct TaenModel **out);

/**
 * # Safety
 * `model` must come from [`taen_model_load`] and not be freed twice.
 */
void taen_model_free(struct TaenModel *model);

/**
 * Sub-action count `a`; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t taen_model_subactions(const struct TaenModel *model);

/**
 * Embedding width `e`; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t taen_model_embed_dim(const struct TaenModel *model);

/**
 * Input feature width `d_feat`; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t taen_model_feature_dim(const struct TaenModel *model);

/**
 * Number of training classes; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t taen_model_num_classes(const struct TaenModel *model);

/**
 * Embed a T x d_feat row-major feature block into an a x e trajectory
 * written to `out` (at least a*e values).
 *
 * # Safety
 * `frames` must hold `t*d` values and `out` `out_len` values.
 */
enum TaenStatus taen_model_embed(const struct TaenModel *model,
                                 const double *frames,
                                 size_t t,
                                 size_t d,
                                 double *out,
                                 size_t out_len);

/**
 * Embed a loaded feature handle; see [`taen_model_embed`].
 *
 * # Safety
 * Handles must be live; `out` must hold `out_len` values.
 */
enum TaenStatus taen_model_embed_features(const struct TaenModel *model,
                                          const struct TaenFeatures *feats,
                                          double *out,
                                          size_t out_len);

/**
 * Classify an a x e query trajectory against `n_slots` support
 * trajectories laid out back to back, using the model's loss weights.
 * Writes the chosen slot and, if `dists` is non-null, `n_slots` distances.
 *
 * # Safety
 * `query` holds a*e values, `supports` n_slots*a*e, `dists` n_slots or null.
 */
enum TaenStatus taen_model_classify(const struct TaenModel *model,
                                    const double *query,
                                    const double *supports,
                                    size_t n_slots,
                                    enum TaenMotionSign sign,
                                    size_t *out_slot,
                                    double *dists);

/**
 * Load a feature file. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum TaenStatus taen_features_load(const char *path, struct TaenFeatures **out);

/**
 * # Safety
 * `feats` must come from [`taen_features_load`] and not be freed twice.
 */
void taen_features_free(struct TaenFeatures *feats);

/**
 * Frame count T; 0 for a null handle.
 *
 * # Safety
 * `feats` must be null or a live handle.
 */
size_t taen_features_len(const struct TaenFeatures *feats);

/**
 * Feature width d_feat; 0 for a null handle.
 *
 * # Safety
 * `feats` must be null or a live handle.
 */
size_t taen_features_dim(const struct TaenFeatures *feats);

/**
 * Row-major T x d_feat data, valid while the handle lives; null for a
 * null handle.
 *
 * # Safety
 * `feats` must be null or a live handle.
 */
const double *taen_features_data(const struct TaenFeatures *feats);

/**
 * Mean cosine distance between two a x e trajectories of unit rows.
 *
 * # Safety
 * `e` and `r` hold `a*dim` values; `out` is writable.
 */
enum TaenStatus taen_trajectory_distance(const double *e,
                                         const double *r,
                                         size_t a,
                                         size_t dim,
                                         double *out);

/**
 * Affiliation plus `w_mot`-weighted motion distance between two
 * trajectories (the classification distance).
 *
 * # Safety
 * `e` and `r` hold `a*dim` values; `out` is writable.
 */
enum TaenStatus taen_test_distance(const double *e,
                                   const double *r,
                                   size_t a,
                                   size_t dim,
                                   double w_mot,
                                   enum TaenMotionSign sign,
                                   double *out);

/**
 * Gaussian-kernel class probability of a proposal trajectory.
 *
 * # Safety
 * `e` and `r` hold `a*dim` values; `out` is writable.
 */
enum TaenStatus taen_proposal_probability(const double *e,
                                          const double *r,
                                          size_t a,
                                          size_t dim,
                                          double sigma,
                                          double *out);

/**
 * Temporal IoU of `[s1, e1]` and `[s2, e2]`.
 */
double taen_temporal_iou(double s1, double e1, double s2, double e2);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TAEN_H */
