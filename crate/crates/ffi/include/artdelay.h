#ifndef ARTDELAY_H
#define ARTDELAY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum AdStatus {
  AD_STATUS_OK = 0,
  AD_STATUS_NULL_POINTER = 1,
  AD_STATUS_INVALID_ARGUMENT = 2,
  AD_STATUS_DIMENSION = 3,
  AD_STATUS_NON_FINITE = 4,
  AD_STATUS_NO_RELATIVE_DEGREE = 5,
  AD_STATUS_NUMERICAL = 6,
  AD_STATUS_BUFFER_TOO_SMALL = 7,
  AD_STATUS_IO = 8,
  AD_STATUS_PANIC = 9,
} AdStatus;

typedef struct AdCertificate AdCertificate;

typedef struct AdController AdController;

typedef struct AdLtiPlant AdLtiPlant;

typedef struct AdPidController AdPidController;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string. Do not free.
 */
const char *ad_version(void);

/**
 * Copy of the last error message on this thread, or NULL when the last call
 * succeeded. Free with [`ad_string_free`].
 */
char *ad_last_error_message(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library and not yet freed.
 */
void ad_string_free(char *s);

/**
 * Plant `ẋ = Ax + Bu, y = Cx` with `A` n×n, `B` n×m, `C` l×n.
 *
 * # Safety
 * `a`, `b`, `c` must point to the stated number of doubles; `out` must be writable.
 */
enum AdStatus ad_lti_plant_new(const double *a,
                               const double *b,
                               const double *c,
                               size_t n,
                               size_t m,
                               size_t l,
                               struct AdLtiPlant **out);

/**
 * # Safety
 * `plant` must be NULL or a handle from [`ad_lti_plant_new`] not yet freed.
 */
void ad_lti_plant_free(struct AdLtiPlant *plant);

/**
 * # Safety
 * `plant` must be a live handle and `out` writable.
 */
enum AdStatus ad_relative_degree(const struct AdLtiPlant *plant, size_t r_max, size_t *out);

/**
 * Maps ideal gains `K̄_0..K̄_{r-1}` (each m×l, concatenated) to the delayed
 * sampled-data controller. With `delays` NULL the delays follow the default rule.
 *
 * # Safety
 * `ideal` must hold `r·m·l` doubles; `delays` must be NULL or hold `r − 1` values.
 */
enum AdStatus ad_map_gains(const double *ideal,
                           size_t r,
                           size_t m,
                           size_t l,
                           double h,
                           const uint32_t *delays,
                           struct AdController **out);

/**
 * # Safety
 * `ctrl` must be NULL or a live controller handle.
 */
void ad_controller_free(struct AdController *ctrl);

/**
 * Number of gains `r`; 0 for a NULL handle.
 *
 * # Safety
 * `ctrl` must be NULL or a live controller handle.
 */
size_t ad_controller_order(const struct AdController *ctrl);

/**
 * Copies gain `K_i` row-major into `out` (capacity `len`).
 *
 * # Safety
 * `ctrl` must be live and `out` writable for `len` doubles.
 */
enum AdStatus ad_controller_gain(const struct AdController *ctrl,
                                 size_t i,
                                 double *out,
                                 size_t len);

/**
 * Copies the `r − 1` delays into `out` (capacity `len`).
 *
 * # Safety
 * `ctrl` must be live and `out` writable for `len` values.
 */
enum AdStatus ad_controller_delays(const struct AdController *ctrl, uint32_t *out, size_t len);

/**
 * Solves the periodic sampled-data LMI. `*feasible` tells whether a verified
 * certificate exists; it is stored in `*cert` when `cert` is not NULL
 * (NULL is stored otherwise).
 *
 * # Safety
 * Handles must be live; `feasible` must be writable; `cert` may be NULL.
 */
enum AdStatus ad_analyze_phi(const struct AdLtiPlant *plant,
                             const struct AdController *ctrl,
                             double alpha,
                             bool *feasible,
                             struct AdCertificate **cert);

/**
 * Event-triggered variant of [`ad_analyze_phi`] with threshold `sigma`.
 *
 * # Safety
 * As for [`ad_analyze_phi`].
 */
enum AdStatus ad_analyze_phi_e(const struct AdLtiPlant *plant,
                               const struct AdController *ctrl,
                               double alpha,
                               double sigma,
                               bool *feasible,
                               struct AdCertificate **cert);

/**
 * # Safety
 * `cert` must be NULL or a live certificate handle.
 */
void ad_certificate_free(struct AdCertificate *cert);

/**
 * Certificate as JSON; NULL on error. Free with [`ad_string_free`].
 *
 * # Safety
 * `cert` must be a live certificate handle.
 */
char *ad_certificate_to_json(const struct AdCertificate *cert);

/**
 * Copies the named unknown (row-major) into `out`, writing its dimension to `dim`.
 *
 * # Safety
 * `cert` must be live, `name` a NUL-terminated string, `out` writable for `len` doubles.
 */
enum AdStatus ad_certificate_variable(const struct AdCertificate *cert,
                                      const char *name,
                                      double *out,
                                      size_t len,
                                      size_t *dim);

/**
 * Sampled PID controller for ideal gains `(kp, ki, kd)`. With `q == 0` the
 * delay follows the default rule.
 *
 * # Safety
 * `out` must be writable.
 */
enum AdStatus ad_map_pid_gains(double kp,
                               double ki,
                               double kd,
                               double h,
                               uint32_t q,
                               double sigma,
                               struct AdPidController **out);

/**
 * # Safety
 * `ctrl` must be NULL or a live PID controller handle.
 */
void ad_pid_controller_free(struct AdPidController *ctrl);

/**
 * Writes the mapped gains and delay.
 *
 * # Safety
 * `ctrl` must be live; all outputs writable.
 */
enum AdStatus ad_pid_controller_gains(const struct AdPidController *ctrl,
                                      double *kp,
                                      double *ki,
                                      double *kd,
                                      uint32_t *q);

/**
 * Solves the PID LMI for the plant `ÿ + a1 ẏ + a2 y = b u`.
 *
 * # Safety
 * As for [`ad_analyze_phi`].
 */
enum AdStatus ad_analyze_psi(double a1,
                             double a2,
                             double b,
                             const struct AdPidController *ctrl,
                             double alpha,
                             bool *feasible,
                             struct AdCertificate **cert);

/**
 * Event-triggered LTI simulation over `[0, horizon]`. `omega` is m×m; the
 * final sampled state is copied to `final_state` (n doubles) when not NULL.
 *
 * # Safety
 * Handles must be live; `x0` must hold n doubles; outputs writable.
 */
enum AdStatus ad_simulate_event_triggered(const struct AdLtiPlant *plant,
                                          const struct AdController *ctrl,
                                          double sigma,
                                          const double *omega,
                                          const double *x0,
                                          double horizon,
                                          size_t *samples,
                                          size_t *transmissions,
                                          double *final_state);

/**
 * Event-triggered sampled PID simulation from `x0 = (y, ẏ)`.
 *
 * # Safety
 * `ctrl` must be live; `x0` must hold 2 doubles; outputs writable.
 */
enum AdStatus ad_simulate_pid(double a1,
                              double a2,
                              double b,
                              const struct AdPidController *ctrl,
                              const double *x0,
                              double horizon,
                              size_t *samples,
                              size_t *transmissions);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ARTDELAY_H */
