//! Drives the C ABI end to end and checks it against the direct Rust API.

use relnav::estimator::{
    Covariance, Estimator, ImuSample, MeasurementNoiseModel, ProcessNoise, RelativePoseMeasurement,
    Vec9, WorldParams,
};
use relnav::geometry::{Rotation, Vec3};
use relnav_ffi::*;

fn rot_array(r: &Rotation) -> [f64; 9] {
    let m = r.matrix();
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[i * 3 + j] = m[(i, j)];
        }
    }
    out
}

#[test]
fn ffi_matches_direct_api() {
    let p0 = [0.0, 0.0, -0.6];
    let v0 = [0.0, 0.0, 0.0];
    let r0 = rot_array(&Rotation::identity());
    let cov_diag = [
        0.0025, 0.0025, 0.0025, 0.0001, 0.0001, 0.0001, 0.0001, 0.0001, 0.0001,
    ];

    let mut handle: *mut RelnavEstimator = std::ptr::null_mut();
    unsafe {
        assert_eq!(
            relnav_estimator_create(
                0.0,
                p0.as_ptr(),
                v0.as_ptr(),
                r0.as_ptr(),
                cov_diag.as_ptr(),
                &mut handle,
            ),
            RelnavStatus::Ok
        );
    }
    assert!(!handle.is_null());

    let mut direct = Estimator::new(
        Vec3::from_row_slice(&p0),
        Vec3::from_row_slice(&v0),
        Rotation::identity(),
        Covariance::from_diagonal(&Vec9::from_row_slice(&cov_diag)).unwrap(),
        0.0,
    )
    .unwrap();
    let noise = ProcessNoise::default();
    let world = WorldParams::default();
    let meas_noise = MeasurementNoiseModel::default();
    let extr = relnav::estimator::Extrinsics::identity();
    let passive = Rotation::identity();

    // a few predict cycles with an update in the middle
    for k in 1..=20u32 {
        let t = k as f64 * 0.002;
        let accel = [0.05 * (t * 3.0).sin(), -0.02, 9.80665];
        let gyro = [0.01, -0.02 * (t * 2.0).cos(), 0.005];
        unsafe {
            assert_eq!(
                relnav_estimator_predict(handle, t, accel.as_ptr(), gyro.as_ptr()),
                RelnavStatus::Ok
            );
        }
        let imu = ImuSample {
            accel: Vec3::from_row_slice(&accel),
            gyro: Vec3::from_row_slice(&gyro),
            t,
        };
        direct
            .predict(&imu, t - direct.state().t, &noise, &world)
            .unwrap();

        if k == 10 {
            let marker_pos = [0.003, -0.002, 0.601];
            let marker_rot = rot_array(&Rotation::exp(Vec3::new(0.01, -0.02, 0.03)));
            unsafe {
                assert_eq!(
                    relnav_estimator_update(handle, t, marker_pos.as_ptr(), marker_rot.as_ptr()),
                    RelnavStatus::Ok
                );
            }
            let meas = RelativePoseMeasurement {
                marker_position: Vec3::from_row_slice(&marker_pos),
                marker_orientation: Rotation::exp(Vec3::new(0.01, -0.02, 0.03)),
                t,
            };
            direct.update(&meas, &extr, &passive, &meas_noise).unwrap();
        }
    }

    let mut t_out = 0.0;
    let mut pos = [0.0; 3];
    let mut vel = [0.0; 3];
    let mut rot = [0.0; 9];
    let mut cov = [0.0; 81];
    unsafe {
        assert_eq!(
            relnav_estimator_state(
                handle,
                &mut t_out,
                pos.as_mut_ptr(),
                vel.as_mut_ptr(),
                rot.as_mut_ptr()
            ),
            RelnavStatus::Ok
        );
        assert_eq!(
            relnav_estimator_covariance(handle, cov.as_mut_ptr()),
            RelnavStatus::Ok
        );
        relnav_estimator_destroy(handle);
    }

    let (dp, dv, dr) = direct.estimate();
    assert_eq!(t_out, direct.state().t);
    for i in 0..3 {
        assert_eq!(pos[i], dp[i]);
        assert_eq!(vel[i], dv[i]);
        for j in 0..3 {
            assert_eq!(rot[i * 3 + j], dr.matrix()[(i, j)]);
        }
    }
    let p = direct.covariance().matrix();
    for i in 0..9 {
        for j in 0..9 {
            assert_eq!(cov[i * 9 + j], p[(i, j)]);
        }
    }
}

#[test]
fn ffi_rejects_bad_inputs() {
    let p0 = [0.0, 0.0, -0.6];
    let v0 = [0.0; 3];
    let cov_diag = [0.01; 9];
    let mut handle: *mut RelnavEstimator = std::ptr::null_mut();

    // non-orthonormal attitude
    let bad_rot = [2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    unsafe {
        assert_eq!(
            relnav_estimator_create(
                0.0,
                p0.as_ptr(),
                v0.as_ptr(),
                bad_rot.as_ptr(),
                cov_diag.as_ptr(),
                &mut handle,
            ),
            RelnavStatus::BadRotation
        );
    }

    // negative covariance entry
    let r0 = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let bad_cov = [-1.0, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01];
    unsafe {
        assert_eq!(
            relnav_estimator_create(
                0.0,
                p0.as_ptr(),
                v0.as_ptr(),
                r0.as_ptr(),
                bad_cov.as_ptr(),
                &mut handle,
            ),
            RelnavStatus::CovarianceNotPsd
        );
    }

    // null pointers
    unsafe {
        assert_eq!(
            relnav_estimator_create(
                0.0,
                std::ptr::null(),
                v0.as_ptr(),
                r0.as_ptr(),
                cov_diag.as_ptr(),
                &mut handle,
            ),
            RelnavStatus::NullPointer
        );
        assert_eq!(
            relnav_estimator_predict(std::ptr::null_mut(), 0.1, p0.as_ptr(), v0.as_ptr()),
            RelnavStatus::NullPointer
        );
    }

    // stale measurement and non-positive time step on a live handle
    unsafe {
        assert_eq!(
            relnav_estimator_create(
                1.0,
                p0.as_ptr(),
                v0.as_ptr(),
                r0.as_ptr(),
                cov_diag.as_ptr(),
                &mut handle,
            ),
            RelnavStatus::Ok
        );
        let accel = [0.0, 0.0, 9.80665];
        let gyro = [0.0; 3];
        assert_eq!(
            relnav_estimator_predict(handle, 0.5, accel.as_ptr(), gyro.as_ptr()),
            RelnavStatus::InvalidArgument
        );
        let marker = [0.0, 0.0, 0.6];
        assert_eq!(
            relnav_estimator_update(handle, 0.5, marker.as_ptr(), r0.as_ptr()),
            RelnavStatus::MeasurementStale
        );
        relnav_estimator_destroy(handle);
        relnav_estimator_destroy(std::ptr::null_mut());
    }
}

#[test]
fn status_names_are_c_strings() {
    for status in [
        RelnavStatus::Ok,
        RelnavStatus::SingularInnovation,
        RelnavStatus::BadRotation,
    ] {
        let ptr = relnav_status_name(status);
        let name = unsafe { std::ffi::CStr::from_ptr(ptr) };
        assert!(!name.to_str().unwrap().is_empty());
    }
}
