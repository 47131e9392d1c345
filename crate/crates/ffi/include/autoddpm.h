#ifndef AUTODDPM_H
#define AUTODDPM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AutoddpmStatus {
  AUTODDPM_STATUS_OK = 0,
  // Null pointer, zero size or a buffer of the wrong length.
  AUTODDPM_STATUS_INVALID_ARGUMENT = 1,
  // Rejected schedule, architecture or pipeline settings.
  AUTODDPM_STATUS_INVALID_CONFIG = 2,
  // Corrupt or mismatched file, or an input image outside its domain.
  AUTODDPM_STATUS_DATA_ERROR = 3,
  // File system failure.
  AUTODDPM_STATUS_IO = 4,
  // Internal panic caught at the boundary.
  AUTODDPM_STATUS_PANIC = 5,
} AutoddpmStatus;

// Selects which grid of a detection result to copy out.
typedef enum AutoddpmDetectionField {
  AUTODDPM_DETECTION_FIELD_INITIAL_RECONSTRUCTION = 0,
  AUTODDPM_DETECTION_FIELD_INITIAL_HEATMAP = 1,
  AUTODDPM_DETECTION_FIELD_PSEUDO_HEALTHY = 2,
  AUTODDPM_DETECTION_FIELD_FINAL_MAP = 3,
} AutoddpmDetectionField;

// Noise predictor handle: a trained network or the Gaussian oracle.
typedef struct AutoddpmDenoiser AutoddpmDenoiser;

// Output of one detection run.
typedef struct AutoddpmDetection AutoddpmDetection;

// Noise schedule handle.
typedef struct AutoddpmSchedule AutoddpmSchedule;

// Detection settings, mirrored field for field.
typedef struct AutoddpmPipelineConfig {
  size_t t_mask;
  size_t t_stitch;
  size_t n_resample;
  size_t dilation_kernel;
  double binarize_quantile;
  bool use_uncertainty;
} AutoddpmPipelineConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *autoddpm_version(void);

// Message of the last failure on this thread, or null if none. The pointer
// stays valid until the next failing call on the same thread.
const char *autoddpm_last_error(void);

// Linear beta schedule with `t_max` steps from `beta_1` to `beta_t`.
//
// # Safety
// `out` must be a valid pointer to a handle slot.
enum AutoddpmStatus autoddpm_schedule_new(size_t t_max,
                                          double beta_1,
                                          double beta_t,
                                          struct AutoddpmSchedule **out);

// # Safety
// `schedule` must be null or a handle from [`autoddpm_schedule_new`] not yet freed.
void autoddpm_schedule_free(struct AutoddpmSchedule *schedule);

// # Safety
// `schedule` must be a live handle and `out` a valid pointer.
enum AutoddpmStatus autoddpm_schedule_t_max(const struct AutoddpmSchedule *schedule, size_t *out);

// Cumulative signal fraction at step `t`, with `t = 0` giving 1.
//
// # Safety
// `schedule` must be a live handle and `out` a valid pointer.
enum AutoddpmStatus autoddpm_schedule_alpha_bar(const struct AutoddpmSchedule *schedule,
                                                size_t t,
                                                double *out);

// Loads a trained network from a checkpoint file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum AutoddpmStatus autoddpm_denoiser_load(const char *path, struct AutoddpmDenoiser **out);

// Exact noise predictor for Gaussian data with per-pixel mean `mu0` and
// isotropic variance `sigma0_sq`.
//
// # Safety
// `mu0` must hold `height * width` values; `schedule` must be a live handle
// and `out` a valid pointer.
enum AutoddpmStatus autoddpm_denoiser_analytic_new(const double *mu0,
                                                   size_t height,
                                                   size_t width,
                                                   double sigma0_sq,
                                                   const struct AutoddpmSchedule *schedule,
                                                   struct AutoddpmDenoiser **out);

// # Safety
// `denoiser` must be null or a live handle not yet freed.
void autoddpm_denoiser_free(struct AutoddpmDenoiser *denoiser);

// Predicted noise for `x_t` at step `t`, written to `out`, which must hold
// exactly `out_len == height * width` values.
//
// # Safety
// `x_t` must hold `height * width` values, `out` must hold `out_len`
// values and `denoiser` must be a live handle.
enum AutoddpmStatus autoddpm_denoiser_predict_eps(const struct AutoddpmDenoiser *denoiser,
                                                  const double *x_t,
                                                  size_t height,
                                                  size_t width,
                                                  size_t t,
                                                  double *out,
                                                  size_t out_len);

// Default detection settings.
//
// # Safety
// `out` must be a valid pointer.
enum AutoddpmStatus autoddpm_pipeline_config_default(struct AutoddpmPipelineConfig *out);

// Runs the full pipeline on one image in `[0, 1]`; a pure function of its
// inputs and `seed`.
//
// # Safety
// `image` must hold `height * width` values; handles must be live; `config`
// and `out` must be valid pointers.
enum AutoddpmStatus autoddpm_detect(const struct AutoddpmDenoiser *denoiser,
                                    const struct AutoddpmSchedule *schedule,
                                    const struct AutoddpmPipelineConfig *config,
                                    const double *image,
                                    size_t height,
                                    size_t width,
                                    uint64_t seed,
                                    struct AutoddpmDetection **out);

// # Safety
// `detection` must be null or a live handle not yet freed.
void autoddpm_detection_free(struct AutoddpmDetection *detection);

// Copies one grid of the result into `out`, which must hold exactly `len`
// values (`height * width` of the input).
//
// # Safety
// `detection` must be a live handle and `out` must hold `len` values.
enum AutoddpmStatus autoddpm_detection_get(const struct AutoddpmDetection *detection,
                                           enum AutoddpmDetectionField field,
                                           double *out,
                                           size_t len);

// Copies the stitching mask (0/1 bytes) into `out`.
//
// # Safety
// `detection` must be a live handle and `out` must hold `len` bytes.
enum AutoddpmStatus autoddpm_detection_mask(const struct AutoddpmDetection *detection,
                                            uint8_t *out,
                                            size_t len);

// Structural similarity of two images.
//
// # Safety
// `a` and `b` must hold `height * width` values; `out` must be valid.
enum AutoddpmStatus autoddpm_ssim(const double *a,
                                  const double *b,
                                  size_t height,
                                  size_t width,
                                  double *out);

// Area under the pixel-level precision-recall curve and the maximum Dice
// over thresholds, for non-negative `scores` against a 0/1 mask.
//
// # Safety
// `scores` and `mask` must hold `height * width` values; outputs must be valid.
enum AutoddpmStatus autoddpm_localization(const double *scores,
                                          const uint8_t *mask,
                                          size_t height,
                                          size_t width,
                                          double *auprc,
                                          double *max_dice);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AUTODDPM_H */
