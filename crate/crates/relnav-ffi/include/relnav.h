/* C ABI for the relnav relative-state estimator. */

#ifndef RELNAV_H
#define RELNAV_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call. `Ok` is zero.
 */
typedef enum RelnavStatus {
  RelnavStatus_Ok = 0,
  RelnavStatus_NullPointer = 1,
  RelnavStatus_InvalidArgument = 2,
  RelnavStatus_NotFinite = 3,
  RelnavStatus_CovarianceNotPsd = 4,
  RelnavStatus_BadRotation = 5,
  RelnavStatus_SingularInnovation = 6,
  RelnavStatus_AmbiguousAttitude = 7,
  /**
   * Measurement older than the filter time; dropped without effect.
   */
  RelnavStatus_MeasurementStale = 8,
  /**
   * Measurement rejected by the configured innovation gate.
   */
  RelnavStatus_MeasurementGated = 9,
} RelnavStatus;

/**
 * Opaque estimator handle: the filter plus its rig and noise configuration.
 */
typedef struct RelnavEstimator RelnavEstimator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates an estimator at time `t0` from position (m), velocity (m/s), a
 * row-major attitude matrix and the diagonal of the initial covariance
 * (block order position, velocity, attitude error). Extrinsics default to
 * the identity rig; noise models default to the stock sensor values.
 *
 * # Safety
 * `p0`, `v0` must point to 3 doubles, `r0` to 9, `cov_diag` to 9, and `out`
 * must be a valid location for the handle pointer. The returned handle must
 * be released with [`relnav_estimator_destroy`].
 */
enum RelnavStatus relnav_estimator_create(double t0,
                                          const double *p0,
                                          const double *v0,
                                          const double *r0,
                                          const double *cov_diag,
                                          struct RelnavEstimator **out);

/**
 * Releases a handle created by [`relnav_estimator_create`]. A null pointer
 * is a no-op.
 *
 * # Safety
 * `handle` must be a pointer returned by [`relnav_estimator_create`] that
 * has not already been destroyed.
 */
void relnav_estimator_destroy(struct RelnavEstimator *handle);

/**
 * Sets the rig extrinsics: rotations are row-major, `cam_from_body` maps
 * body to camera coordinates, `marker_from_passive` maps passive-body to
 * marker coordinates; `body_from_cam` is the body origin in camera
 * coordinates (m) and `passive_from_marker` the passive origin in
 * passive-body coordinates (m).
 *
 * # Safety
 * `handle` must be a live handle; array arguments must point to 9 or 3
 * doubles as described.
 */
enum RelnavStatus relnav_estimator_set_extrinsics(struct RelnavEstimator *handle,
                                                  const double *cam_from_body,
                                                  const double *body_from_cam,
                                                  const double *marker_from_passive,
                                                  const double *passive_from_marker);

/**
 * Sets the isotropic IMU noise standard deviations (m/s^2, rad/s).
 *
 * # Safety
 * `handle` must be a live handle.
 */
enum RelnavStatus relnav_estimator_set_process_noise(struct RelnavEstimator *handle,
                                                     double accel_std,
                                                     double gyro_std);

/**
 * Sets the marker measurement noise: position variances at 1 m optical
 * distance (m^2, scaled by distance squared) and orientation variances
 * (rad^2).
 *
 * # Safety
 * `handle` must be a live handle; arrays must point to 3 doubles.
 */
enum RelnavStatus relnav_estimator_set_measurement_noise(struct RelnavEstimator *handle,
                                                         const double *position_var_at_1m,
                                                         const double *orientation_var);

/**
 * Sets the gravity vector in the inertial frame (m/s^2).
 *
 * # Safety
 * `handle` must be a live handle; `gravity` must point to 3 doubles.
 */
enum RelnavStatus relnav_estimator_set_gravity(struct RelnavEstimator *handle,
                                               const double *gravity);

/**
 * Supplies the most recent absolute attitude of the passive vehicle
 * (row-major, passive body to inertial); held until the next call.
 *
 * # Safety
 * `handle` must be a live handle; `r_ef` must point to 9 doubles.
 */
enum RelnavStatus relnav_estimator_set_passive_attitude(struct RelnavEstimator *handle,
                                                        const double *r_ef);

/**
 * Advances the filter to time `t` with one IMU sample (proper acceleration
 * m/s^2 and angular velocity rad/s, both body frame). `t` must be after the
 * filter's current time.
 *
 * # Safety
 * `handle` must be a live handle; arrays must point to 3 doubles.
 */
enum RelnavStatus relnav_estimator_predict(struct RelnavEstimator *handle,
                                           double t,
                                           const double *accel,
                                           const double *gyro);

/**
 * Applies one camera-marker measurement taken at time `t`: the marker
 * position in camera coordinates (m) and the row-major rotation taking
 * camera to marker coordinates. Returns `MeasurementStale` or
 * `MeasurementGated` when the filter drops the measurement.
 *
 * # Safety
 * `handle` must be a live handle; `marker_pos` must point to 3 doubles and
 * `marker_rot` to 9.
 */
enum RelnavStatus relnav_estimator_update(struct RelnavEstimator *handle,
                                          double t,
                                          const double *marker_pos,
                                          const double *marker_rot);

/**
 * Reads the current estimate: time of validity, relative position (m),
 * relative velocity (m/s) and the row-major attitude matrix.
 *
 * # Safety
 * `handle` must be a live handle; `t_out` must point to a double, `pos` and
 * `vel` to 3 doubles each, `rot` to 9.
 */
enum RelnavStatus relnav_estimator_state(const struct RelnavEstimator *handle,
                                         double *t_out,
                                         double *pos,
                                         double *vel,
                                         double *rot);

/**
 * Copies the 9x9 state covariance, row-major, block order (position,
 * velocity, attitude error).
 *
 * # Safety
 * `handle` must be a live handle; `cov` must point to 81 doubles.
 */
enum RelnavStatus relnav_estimator_covariance(const struct RelnavEstimator *handle, double *cov);

/**
 * Static name of a status code, for logging from C.
 */
const char *relnav_status_name(enum RelnavStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RELNAV_H */
