//! C ABI for the relative-state estimator: an opaque handle, plain-array
//! arguments (row-major 3x3 rotations), and integer status codes. The header
//! is generated into `include/relnav.h` by the build script.
//!
//! Typical call sequence from C:
//! ```c
//! RelnavEstimator *est = NULL;
//! relnav_estimator_create(t0, p0, v0, r0, cov_diag, &est);
//! relnav_estimator_set_passive_attitude(est, r_ef);
//! relnav_estimator_predict(est, t, accel, gyro);
//! relnav_estimator_update(est, t, marker_pos, marker_rot);
//! relnav_estimator_state(est, &t_out, pos, vel, rot);
//! relnav_estimator_destroy(est);
//! ```

use relnav::estimator::{
    Covariance, Estimator, EstimatorError, Extrinsics, ImuSample, MeasurementNoiseModel,
    ProcessNoise, RelativePoseMeasurement, UpdateOutcome, Vec9, WorldParams,
};
use relnav::geometry::{Mat3, Rotation, Vec3};
use std::os::raw::c_char;

/// Status codes returned by every fallible call. `Ok` is zero.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RelnavStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotFinite = 3,
    CovarianceNotPsd = 4,
    BadRotation = 5,
    SingularInnovation = 6,
    AmbiguousAttitude = 7,
    /// Measurement older than the filter time; dropped without effect.
    MeasurementStale = 8,
    /// Measurement rejected by the configured innovation gate.
    MeasurementGated = 9,
}

/// Opaque estimator handle: the filter plus its rig and noise configuration.
pub struct RelnavEstimator {
    filter: Estimator,
    extrinsics: Extrinsics,
    process_noise: ProcessNoise,
    measurement_noise: MeasurementNoiseModel,
    world: WorldParams,
    passive_attitude: Rotation,
}

fn status_of(err: &EstimatorError) -> RelnavStatus {
    match err {
        EstimatorError::CovarianceNotSymmetric { .. } | EstimatorError::CovarianceNotPsd { .. } => {
            RelnavStatus::CovarianceNotPsd
        }
        EstimatorError::NonFiniteInput => RelnavStatus::NotFinite,
        EstimatorError::NonPositiveTimeStep { .. } => RelnavStatus::InvalidArgument,
        EstimatorError::SingularInnovation { .. } => RelnavStatus::SingularInnovation,
        EstimatorError::AmbiguousAttitudeInnovation => RelnavStatus::AmbiguousAttitude,
    }
}

unsafe fn read_vec3(ptr: *const f64) -> Option<Vec3> {
    if ptr.is_null() {
        return None;
    }
    let s = unsafe { std::slice::from_raw_parts(ptr, 3) };
    Some(Vec3::new(s[0], s[1], s[2]))
}

unsafe fn read_rotation(ptr: *const f64) -> Result<Rotation, RelnavStatus> {
    if ptr.is_null() {
        return Err(RelnavStatus::NullPointer);
    }
    let s = unsafe { std::slice::from_raw_parts(ptr, 9) };
    let m = Mat3::new(s[0], s[1], s[2], s[3], s[4], s[5], s[6], s[7], s[8]);
    Rotation::from_matrix(m).map_err(|_| RelnavStatus::BadRotation)
}

fn write_vec3(ptr: *mut f64, v: Vec3) {
    let s = unsafe { std::slice::from_raw_parts_mut(ptr, 3) };
    s.copy_from_slice(&[v.x, v.y, v.z]);
}

fn write_rotation(ptr: *mut f64, r: &Rotation) {
    let s = unsafe { std::slice::from_raw_parts_mut(ptr, 9) };
    let m = r.matrix();
    for i in 0..3 {
        for j in 0..3 {
            s[i * 3 + j] = m[(i, j)];
        }
    }
}

/// Creates an estimator at time `t0` from position (m), velocity (m/s), a
/// row-major attitude matrix and the diagonal of the initial covariance
/// (block order position, velocity, attitude error). Extrinsics default to
/// the identity rig; noise models default to the stock sensor values.
///
/// # Safety
/// `p0`, `v0` must point to 3 doubles, `r0` to 9, `cov_diag` to 9, and `out`
/// must be a valid location for the handle pointer. The returned handle must
/// be released with [`relnav_estimator_destroy`].
#[no_mangle]
pub unsafe extern "C" fn relnav_estimator_create(
    t0: f64,
    p0: *const f64,
    v0: *const f64,
    r0: *const f64,
    cov_diag: *const f64,
    out: *mut *mut RelnavEstimator,
) -> RelnavStatus {
    if out.is_null() {
        return RelnavStatus::NullPointer;
    }
    let (Some(position), Some(velocity)) = (unsafe { read_vec3(p0) }, unsafe { read_vec3(v0) })
    else {
        return RelnavStatus::NullPointer;
    };
    let attitude = match unsafe { read_rotation(r0) } {
        Ok(r) => r,
        Err(status) => return status,
    };
    if cov_diag.is_null() {
        return RelnavStatus::NullPointer;
    }
    let diag = unsafe { std::slice::from_raw_parts(cov_diag, 9) };
    let covariance = match Covariance::from_diagonal(&Vec9::from_row_slice(diag)) {
        Ok(c) => c,
        Err(e) => return status_of(&e),
    };
    match Estimator::new(position, velocity, attitude, covariance, t0) {
        Ok(filter) => {
            let handle = Box::new(RelnavEstimator {
                filter,
                extrinsics: Extrinsics::identity(),
                process_noise: ProcessNoise::default(),
                measurement_noise: MeasurementNoiseModel::default(),
                world: WorldParams::default(),
                passive_attitude: Rotation::identity(),
            });
            unsafe { *out = Box::into_raw(handle) };
            RelnavStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Releases a handle created by [`relnav_estimator_create`]. A null pointer
/// is a no-op.
///
/// # Safety
/// `handle` must be a pointer returned by [`relnav_estimator_create`] that
/// has not already been destroyed.
#[no_mangle]
pub unsafe extern "C" fn relnav_estimator_destroy(handle: *mut RelnavEstimator) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// Sets the rig extrinsics: rotations are row-major, `cam_from_body` maps
/// body to camera coordinates, `marker_from_passive` maps passive-body to
/// marker coordinates; `body_from_cam` is the body origin in camera
/// coordinates (m) and `passive_from_marker` the passive origin in
/// passive-body coordinates (m).
///
/// # Safety
/// `handle` must be a live handle; array arguments must point to 9 or 3
/// doubles as described.
#[no_mangle]
pub unsafe extern "C" fn relnav_estimator_set_extrinsics(
    handle: *mut RelnavEstimator,
    cam_from_body: *const f64,
    body_from_cam: *const f64,
    marker_from_passive: *const f64,
    passive_from_marker: *const f64,
) -> RelnavStatus {
    let Some(est) = (unsafe { handle.as_mut() }) else {
        return RelnavStatus::NullPointer;
    };
    let cam = match unsafe { read_rotation(cam_from_body) } {
        Ok(r) => r,
        Err(s) => return s,
    };
    let marker = match unsafe { read_rotation(marker_from_passive) } {
        Ok(r) => r,
        Err(s) => return s,
    };
    let (Some(body), Some(passive)) = (unsafe { read_vec3(body_from_cam) }, unsafe {
        read_vec3(passive_from_marker)
    }) else {
        return RelnavStatus::NullPointer;
    };
    est.extrinsics = Extrinsics {
        cam_from_body: cam,
        marker_from_passive: marker,
        body_from_cam: body,
        passive_from_marker: passive,
    };
    RelnavStatus::Ok
}

/// Sets the isotropic IMU noise standard deviations (m/s^2, rad/s).
///
/// # Safety
/// `handle` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn relnav_estimator_set_process_noise(
    handle: *mut RelnavEstimator,
    accel_std: f64,
    gyro_std: f64,
) -> RelnavStatus {
    let Some(est) = (unsafe { handle.as_mut() }) else {
        return RelnavStatus::NullPointer;
    };
    match ProcessNoise::new(accel_std, gyro_std) {
        Ok(noise) => {
            est.process_noise = noise;
            RelnavStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Sets the marker measurement noise: position variances at 1 m optical
/// distance (m^2, scaled by distance squared) and orientation variances
/// (rad^2).
///
/// # Safety
/// `handle` must be a live handle; arrays must point to 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn relnav_estimator_set_measurement_noise(
    handle: *mut RelnavEstimator,
    position_var_at_1m: *const f64,
    orientation_var: *const f64,
) -> RelnavStatus {
    let Some(est) = (unsafe { handle.as_mut() }) else {
        return RelnavStatus::NullPointer;
    };
    let (Some(pos), Some(rot)) = (unsafe { read_vec3(position_var_at_1m) }, unsafe {
        read_vec3(orientation_var)
    }) else {
        return RelnavStatus::NullPointer;
    };
    if pos
        .iter()
        .chain(rot.iter())
        .any(|x| !x.is_finite() || *x < 0.0)
    {
        return RelnavStatus::InvalidArgument;
    }
    est.measurement_noise = MeasurementNoiseModel {
        position_var_at_ref: pos,
        orientation_var: rot,
    };
    RelnavStatus::Ok
}

/// Sets the gravity vector in the inertial frame (m/s^2).
///
/// # Safety
/// `handle` must be a live handle; `gravity` must point to 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn relnav_estimator_set_gravity(
    handle: *mut RelnavEstimator,
    gravity: *const f64,
) -> RelnavStatus {
    let Some(est) = (unsafe { handle.as_mut() }) else {
        return RelnavStatus::NullPointer;
    };
    let Some(g) = (unsafe { read_vec3(gravity) }) else {
        return RelnavStatus::NullPointer;
    };
    if g.iter().any(|x| !x.is_finite()) {
        return RelnavStatus::NotFinite;
    }
    est.world = WorldParams { gravity: g };
    RelnavStatus::Ok
}

/// Supplies the most recent absolute attitude of the passive vehicle
/// (row-major, passive body to inertial); held until the next call.
///
/// # Safety
/// `handle` must be a live handle; `r_ef` must point to 9 doubles.
#[no_mangle]
pub unsafe extern "C" fn relnav_estimator_set_passive_attitude(
    handle: *mut RelnavEstimator,
    r_ef: *const f64,
) -> RelnavStatus {
    let Some(est) = (unsafe { handle.as_mut() }) else {
        return RelnavStatus::NullPointer;
    };
    match unsafe { read_rotation(r_ef) } {
        Ok(r) => {
            est.passive_attitude = r;
            RelnavStatus::Ok
        }
        Err(s) => s,
    }
}

/// Advances the filter to time `t` with one IMU sample (proper acceleration
/// m/s^2 and angular velocity rad/s, both body frame). `t` must be after the
/// filter's current time.
///
/// # Safety
/// `handle` must be a live handle; arrays must point to 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn relnav_estimator_predict(
    handle: *mut RelnavEstimator,
    t: f64,
    accel: *const f64,
    gyro: *const f64,
) -> RelnavStatus {
    let Some(est) = (unsafe { handle.as_mut() }) else {
        return RelnavStatus::NullPointer;
    };
    let (Some(a), Some(w)) = (unsafe { read_vec3(accel) }, unsafe { read_vec3(gyro) }) else {
        return RelnavStatus::NullPointer;
    };
    let dt = t - est.filter.state().t;
    let sample = ImuSample {
        accel: a,
        gyro: w,
        t,
    };
    match est
        .filter
        .predict(&sample, dt, &est.process_noise, &est.world)
    {
        Ok(()) => RelnavStatus::Ok,
        Err(e) => status_of(&e),
    }
}

/// Applies one camera-marker measurement taken at time `t`: the marker
/// position in camera coordinates (m) and the row-major rotation taking
/// camera to marker coordinates. Returns `MeasurementStale` or
/// `MeasurementGated` when the filter drops the measurement.
///
/// # Safety
/// `handle` must be a live handle; `marker_pos` must point to 3 doubles and
/// `marker_rot` to 9.
#[no_mangle]
pub unsafe extern "C" fn relnav_estimator_update(
    handle: *mut RelnavEstimator,
    t: f64,
    marker_pos: *const f64,
    marker_rot: *const f64,
) -> RelnavStatus {
    let Some(est) = (unsafe { handle.as_mut() }) else {
        return RelnavStatus::NullPointer;
    };
    let Some(position) = (unsafe { read_vec3(marker_pos) }) else {
        return RelnavStatus::NullPointer;
    };
    let orientation = match unsafe { read_rotation(marker_rot) } {
        Ok(r) => r,
        Err(s) => return s,
    };
    let meas = RelativePoseMeasurement {
        marker_position: position,
        marker_orientation: orientation,
        t,
    };
    let passive = est.passive_attitude;
    match est
        .filter
        .update(&meas, &est.extrinsics, &passive, &est.measurement_noise)
    {
        Ok(UpdateOutcome::Applied) => RelnavStatus::Ok,
        Ok(UpdateOutcome::DroppedStale) => RelnavStatus::MeasurementStale,
        Ok(UpdateOutcome::DroppedGated) => RelnavStatus::MeasurementGated,
        Err(e) => status_of(&e),
    }
}

/// Reads the current estimate: time of validity, relative position (m),
/// relative velocity (m/s) and the row-major attitude matrix.
///
/// # Safety
/// `handle` must be a live handle; `t_out` must point to a double, `pos` and
/// `vel` to 3 doubles each, `rot` to 9.
#[no_mangle]
pub unsafe extern "C" fn relnav_estimator_state(
    handle: *const RelnavEstimator,
    t_out: *mut f64,
    pos: *mut f64,
    vel: *mut f64,
    rot: *mut f64,
) -> RelnavStatus {
    let Some(est) = (unsafe { handle.as_ref() }) else {
        return RelnavStatus::NullPointer;
    };
    if t_out.is_null() || pos.is_null() || vel.is_null() || rot.is_null() {
        return RelnavStatus::NullPointer;
    }
    let (p, v, r) = est.filter.estimate();
    unsafe { *t_out = est.filter.state().t };
    write_vec3(pos, p);
    write_vec3(vel, v);
    write_rotation(rot, &r);
    RelnavStatus::Ok
}

/// Copies the 9x9 state covariance, row-major, block order (position,
/// velocity, attitude error).
///
/// # Safety
/// `handle` must be a live handle; `cov` must point to 81 doubles.
#[no_mangle]
pub unsafe extern "C" fn relnav_estimator_covariance(
    handle: *const RelnavEstimator,
    cov: *mut f64,
) -> RelnavStatus {
    let Some(est) = (unsafe { handle.as_ref() }) else {
        return RelnavStatus::NullPointer;
    };
    if cov.is_null() {
        return RelnavStatus::NullPointer;
    }
    let out = unsafe { std::slice::from_raw_parts_mut(cov, 81) };
    let p = est.filter.covariance().matrix();
    for i in 0..9 {
        for j in 0..9 {
            out[i * 9 + j] = p[(i, j)];
        }
    }
    RelnavStatus::Ok
}

/// Static name of a status code, for logging from C.
#[no_mangle]
pub extern "C" fn relnav_status_name(status: RelnavStatus) -> *const c_char {
    let name: &'static [u8] = match status {
        RelnavStatus::Ok => b"ok\0",
        RelnavStatus::NullPointer => b"null pointer\0",
        RelnavStatus::InvalidArgument => b"invalid argument\0",
        RelnavStatus::NotFinite => b"not finite\0",
        RelnavStatus::CovarianceNotPsd => b"covariance not PSD\0",
        RelnavStatus::BadRotation => b"bad rotation\0",
        RelnavStatus::SingularInnovation => b"singular innovation\0",
        RelnavStatus::AmbiguousAttitude => b"ambiguous attitude\0",
        RelnavStatus::MeasurementStale => b"measurement stale\0",
        RelnavStatus::MeasurementGated => b"measurement gated\0",
    };
    name.as_ptr() as *const c_char
}
