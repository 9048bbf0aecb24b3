#ifndef MONO3D_H
#define MONO3D_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Tolerance on rotation blocks received over the boundary.
 */
#define M3D_ROTATION_TOL 1e-6

#define M3D_BOX_ROW_LEN 15

#define M3D_BOX2D_ROW_LEN 4

#define M3D_FEATURE_DIM 64

typedef enum {
  M3D_STATUS_OK = 0,
  M3D_STATUS_NULL_POINTER = 1,
  M3D_STATUS_INVALID_INPUT = 2,
  M3D_STATUS_SHAPE_MISMATCH = 3,
  M3D_STATUS_NON_FINITE = 4,
  M3D_STATUS_DEGENERATE = 5,
  M3D_STATUS_NOT_YAW_ONLY = 6,
  M3D_STATUS_PARSE = 7,
  M3D_STATUS_CONFIG = 8,
  M3D_STATUS_CONTAINER = 9,
  M3D_STATUS_IO = 10,
  /**
   * Output buffer too small; the required length is reported.
   */
  M3D_STATUS_BUFFER_TOO_SMALL = 11,
  M3D_STATUS_PANIC = 99,
} M3dStatus;

typedef enum {
  M3D_MATCH_MODE_ONE_TO_ONE = 0,
  M3D_MATCH_MODE_ONE_TO_MANY = 1,
} M3dMatchMode;

typedef enum {
  M3D_DIFFICULTY_EASY = 0,
  M3D_DIFFICULTY_MODERATE = 1,
  M3D_DIFFICULTY_HARD = 2,
} M3dDifficulty;

typedef enum {
  M3D_METRIC_THREE_D = 0,
  M3D_METRIC_BEV = 1,
} M3dMetric;

/**
 * Accumulates images, then evaluates them in one pass.
 */
typedef struct M3dEvaluator M3dEvaluator;

/**
 * Assignment settings.
 */
typedef struct M3dMatcher M3dMatcher;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *m3d_last_error(void);

/**
 * Library version, static storage.
 */
const char *m3d_version(void);

/**
 * MGIoU of row pairs: `out[i] = mgiou(a[i], b[i])` for `n` rows of 15.
 *
 * # Safety
 * `a` and `b` must hold `n * 15` doubles and `out` room for `n`.
 */
M3dStatus m3d_mgiou3d(const double *a, const double *b, size_t n, double *out);

/**
 * 3D IoU of row pairs; both boxes of a pair must be yaw-only.
 *
 * # Safety
 * As for [`m3d_mgiou3d`].
 */
M3dStatus m3d_iou3d(const double *a, const double *b, size_t n, double *out);

/**
 * `out[i] = z_gt[i] / max(|z_gt[i] − z_teacher[i]|, epsilon)`.
 *
 * # Safety
 * All arrays must hold `n` doubles.
 */
M3dStatus m3d_quality_eta(const double *z_gt,
                          const double *z_teacher,
                          size_t n,
                          double epsilon,
                          double *out);

/**
 * Channel importance `|w| / Σ|w|` over `n` final depth weights.
 *
 * # Safety
 * `w_final` and `out` must hold `n` doubles.
 */
M3dStatus m3d_importance_omega(const double *w_final, size_t n, double *out);

/**
 * Weighted feature distillation loss over `n` pairs of 64-channel features.
 * Channel importance is derived from `w_final` (64 doubles). `grad_student`
 * may be NULL; otherwise it receives `n * 64` doubles.
 *
 * # Safety
 * `feat_teacher` and `feat_student` must hold `n * 64` doubles, `eta` `n`
 * doubles and `loss` must point to one double.
 */
M3dStatus m3d_distill_loss(const double *feat_teacher,
                           const double *feat_student,
                           const double *eta,
                           const double *w_final,
                           size_t n,
                           double *loss,
                           double *grad_student);

/**
 * New matcher with the given exponents and per-object capacity `topk`.
 * Returns NULL on invalid settings.
 */
M3dMatcher *m3d_matcher_new(double alpha, double beta, double gamma, size_t topk);

/**
 * Matcher from a JSON run configuration; NULL selects the defaults.
 * Returns NULL on malformed JSON or unknown keys.
 *
 * # Safety
 * `config_json` must be NULL or a NUL-terminated string.
 */
M3dMatcher *m3d_matcher_from_config(const char *config_json);

/**
 * # Safety
 * `matcher` must be NULL or a handle from a `m3d_matcher_*` constructor,
 * released at most once.
 */
void m3d_matcher_free(M3dMatcher *matcher);

/**
 * Assigns `n_pred` anchor predictions to `n_gt` objects.
 *
 * Objects: `gt_class[n_gt]`, `gt_box2d[n_gt * 4]`, `gt_box3d[n_gt * 15]`.
 * Predictions: `anchors[n_pred * 2]`, `class_probs[n_pred * num_classes]`,
 * `pred_box2d[n_pred * 4]`, `pred_box3d[n_pred * 15]`.
 *
 * Pairs are written to `out_gt`, `out_anchor` and `out_score` (each of
 * length `capacity`) and their count to `out_len`. When `capacity` is too
 * small nothing is written except `out_len`, which then holds the required
 * length, and the status is `BufferTooSmall`.
 *
 * # Safety
 * Every pointer must reference the documented number of elements.
 */
M3dStatus m3d_matcher_assign(const M3dMatcher *matcher,
                             const size_t *gt_class,
                             const double *gt_box2d,
                             const double *gt_box3d,
                             size_t n_gt,
                             const double *anchors,
                             const double *class_probs,
                             size_t num_classes,
                             const double *pred_box2d,
                             const double *pred_box3d,
                             size_t n_pred,
                             M3dMatchMode mode,
                             size_t *out_gt,
                             size_t *out_anchor,
                             double *out_score,
                             size_t capacity,
                             size_t *out_len);

/**
 * New evaluator from a JSON run configuration (NULL for defaults); uses
 * its `classes` and `iou_thresholds`. Returns NULL on invalid input.
 *
 * # Safety
 * `config_json` must be NULL or a NUL-terminated string.
 */
M3dEvaluator *m3d_evaluator_new(const char *config_json);

/**
 * # Safety
 * `evaluator` must be NULL or a handle from [`m3d_evaluator_new`], released
 * at most once.
 */
void m3d_evaluator_free(M3dEvaluator *evaluator);

/**
 * Appends one image. Detections: `det_class[n_det]`, `det_box2d[n_det * 4]`,
 * `det_box3d[n_det * 15]`, `det_score[n_det]`. Objects: `gt_class[n_gt]`,
 * `gt_box2d[n_gt * 4]`, `gt_box3d[n_gt * 15]`, `gt_truncation[n_gt]`,
 * `gt_occlusion[n_gt]`. Discards any earlier report.
 *
 * # Safety
 * Every pointer must reference the documented number of elements.
 */
M3dStatus m3d_evaluator_add_image(M3dEvaluator *evaluator,
                                  const size_t *det_class,
                                  const double *det_box2d,
                                  const double *det_box3d,
                                  const double *det_score,
                                  size_t n_det,
                                  const size_t *gt_class,
                                  const double *gt_box2d,
                                  const double *gt_box3d,
                                  const double *gt_truncation,
                                  const uint8_t *gt_occlusion,
                                  size_t n_gt);

/**
 * Evaluates every image added so far.
 *
 * # Safety
 * `evaluator` must be a live handle.
 */
M3dStatus m3d_evaluator_run(M3dEvaluator *evaluator);

/**
 * AP (percent) and eligible-object count for one cell of the last report.
 *
 * # Safety
 * `evaluator` must be a live handle; `ap` and `n_gt` must be writable.
 */
M3dStatus m3d_evaluator_ap(const M3dEvaluator *evaluator,
                           size_t class_index,
                           M3dDifficulty difficulty,
                           M3dMetric metric,
                           double *ap,
                           size_t *n_gt);

/**
 * The last report as a JSON string, or NULL on failure. Release it with
 * [`m3d_string_free`].
 *
 * # Safety
 * `evaluator` must be a live handle.
 */
char *m3d_evaluator_report_json(const M3dEvaluator *evaluator);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, released once.
 */
void m3d_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MONO3D_H */
