#ifndef MECHPRIOR_H
#define MECHPRIOR_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  MP_KIND_SLIDER = 0,
  MP_KIND_DOOR = 1,
} MpKind;

typedef enum {
  MP_STATUS_OK = 0,
  MP_STATUS_NULL_POINTER = 1,
  MP_STATUS_INVALID_ARGUMENT = 2,
  MP_STATUS_OUT_OF_BOUNDS = 3,
  MP_STATUS_DIMENSION_MISMATCH = 4,
  MP_STATUS_NON_FINITE = 5,
  MP_STATUS_FACTORIZATION = 6,
  MP_STATUS_IO = 7,
  MP_STATUS_PARSE = 8,
  MP_STATUS_VERSION = 9,
  MP_STATUS_BUFFER_TOO_SMALL = 10,
  MP_STATUS_PANIC = 11,
  MP_STATUS_INTERNAL = 12,
} MpStatus;

/**
 * Opaque GP state handle. Adding an observation yields a new handle.
 */
typedef struct MpGp MpGp;

/**
 * Opaque mechanism handle.
 */
typedef struct MpMechanism MpMechanism;

/**
 * Opaque network weights handle.
 */
typedef struct MpWeights MpWeights;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on this thread.
 */
const char *mp_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mp_version(void);

/**
 * Side length of rendered images in pixels.
 */
size_t mp_image_size(void);

size_t mp_action_dim(MpKind kind);

/**
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
MpStatus mp_mechanism_generate(MpKind kind, uint64_t seed, MpMechanism **out);

/**
 * # Safety
 * `m` must be null or a handle from `mp_mechanism_generate`, freed once.
 */
void mp_mechanism_free(MpMechanism *m);

/**
 * # Safety
 * `m` must be a live handle; `low` and `high` must hold `cap` values.
 */
MpStatus mp_mechanism_bounds(const MpMechanism *m, double *low, double *high, size_t cap);

/**
 * Executes `action` (length `len`) and writes the observed motion.
 *
 * # Safety
 * `m` must be a live handle, `action` must hold `len` values.
 */
MpStatus mp_mechanism_execute(const MpMechanism *m,
                              const double *action,
                              size_t len,
                              double *out_reward);

/**
 * Writes the optimal action (into `out_action`, capacity `cap`) and reward.
 *
 * # Safety
 * `m` must be a live handle; `out_action` must hold `cap` values.
 */
MpStatus mp_mechanism_optimal(const MpMechanism *m,
                              double *out_action,
                              size_t cap,
                              double *out_reward);

/**
 * Renders the mechanism into `out_pixels`, row-major, size² values in [0, 1].
 *
 * # Safety
 * `m` must be a live handle; `out_pixels` must hold `cap` values.
 */
MpStatus mp_mechanism_render(const MpMechanism *m, double *out_pixels, size_t cap);

size_t mp_weights_param_count(void);

/**
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
MpStatus mp_weights_init(uint64_t seed, MpWeights **out);

/**
 * # Safety
 * `file` must be a NUL-terminated UTF-8 path; `out` a valid handle slot.
 */
MpStatus mp_weights_load(const char *file, MpWeights **out);

/**
 * # Safety
 * `w` must be a live handle; `file` a NUL-terminated UTF-8 path.
 */
MpStatus mp_weights_save(const MpWeights *w, const char *file);

/**
 * # Safety
 * `w` must be null or a weights handle, freed once.
 */
void mp_weights_free(MpWeights *w);

/**
 * Predicted reward of `action` on the rendered image of `m`.
 *
 * # Safety
 * Handles must be live; `action` must hold `len` values.
 */
MpStatus mp_weights_predict(const MpWeights *w,
                            const MpMechanism *m,
                            const double *action,
                            size_t len,
                            double *out);

/**
 * Empty GP with a squared-exponential kernel.
 *
 * # Safety
 * `lengthscales` must hold `dim` values; `out` must be a valid handle slot.
 */
MpStatus mp_gp_new(const double *lengthscales,
                   size_t dim,
                   double signal_variance,
                   double noise_variance,
                   MpGp **out);

/**
 * # Safety
 * `gp` must be null or a GP handle, freed once.
 */
void mp_gp_free(MpGp *gp);

/**
 * Number of observations held by `gp`, or 0 for a null handle.
 *
 * # Safety
 * `gp` must be null or a live handle.
 */
size_t mp_gp_len(const MpGp *gp);

/**
 * Returns a new handle holding `gp` plus one observation; `gp` is unchanged.
 *
 * # Safety
 * `gp` must be live; `action` must hold `len` values; `out` a handle slot.
 */
MpStatus mp_gp_add_observation(const MpGp *gp,
                               const double *action,
                               size_t len,
                               double residual,
                               MpGp **out);

/**
 * # Safety
 * `gp` must be live; `action` must hold `len` values.
 */
MpStatus mp_gp_posterior(const MpGp *gp,
                         const double *action,
                         size_t len,
                         double *out_mean,
                         double *out_variance);

/**
 * `prior_mean + μ(a) + sqrt(beta)·σ(a)`.
 *
 * # Safety
 * `gp` must be live; `action` must hold `len` values.
 */
MpStatus mp_gp_ucb_score(const MpGp *gp,
                         double prior_mean,
                         const double *action,
                         size_t len,
                         double beta,
                         double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MECHPRIOR_H */
