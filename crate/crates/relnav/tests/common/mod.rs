//! Test-only oracle: a dense, straight-line transcription of the filter
//! equations using dynamic matrices and the Joseph-form covariance update.
//! Written independently of the library implementation so the two paths can
//! be checked against each other.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Skew-symmetric matrix, dense.
pub fn hat(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(
        3,
        3,
        &[0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0],
    )
}

/// Exponential map by truncated matrix power series (independent of the
/// Rodrigues implementation).
pub fn exp_series(v: &DVector<f64>) -> DMatrix<f64> {
    let k = hat(v);
    let mut term = DMatrix::identity(3, 3);
    let mut sum = DMatrix::identity(3, 3);
    for n in 1..30 {
        term = &term * &k / n as f64;
        sum += &term;
    }
    sum
}

/// Logarithm map through the unit-quaternion representation (a different
/// numerical route than the matrix-based implementation).
pub fn log_quaternion(r: &DMatrix<f64>) -> DVector<f64> {
    let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    // Shepperd's method for the quaternion
    let (w, x, y, z);
    if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        w = 0.25 * s;
        x = (r[(2, 1)] - r[(1, 2)]) / s;
        y = (r[(0, 2)] - r[(2, 0)]) / s;
        z = (r[(1, 0)] - r[(0, 1)]) / s;
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        w = (r[(2, 1)] - r[(1, 2)]) / s;
        x = 0.25 * s;
        y = (r[(0, 1)] + r[(1, 0)]) / s;
        z = (r[(0, 2)] + r[(2, 0)]) / s;
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        w = (r[(0, 2)] - r[(2, 0)]) / s;
        x = (r[(0, 1)] + r[(1, 0)]) / s;
        y = 0.25 * s;
        z = (r[(1, 2)] + r[(2, 1)]) / s;
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        w = (r[(1, 0)] - r[(0, 1)]) / s;
        x = (r[(0, 2)] + r[(2, 0)]) / s;
        y = (r[(1, 2)] + r[(2, 1)]) / s;
        z = 0.25 * s;
    }
    // canonical half-angle in [0, pi/2] so the angle lands in [0, pi]
    let (w, x, y, z) = if w < 0.0 {
        (-w, -x, -y, -z)
    } else {
        (w, x, y, z)
    };
    let imag_norm = (x * x + y * y + z * z).sqrt();
    if imag_norm < 1e-300 {
        return DVector::zeros(3);
    }
    let angle = 2.0 * imag_norm.atan2(w);
    DVector::from_row_slice(&[x, y, z]) * (angle / imag_norm)
}

/// Oracle filter state: everything dense.
#[derive(Clone, Debug)]
pub struct OracleState {
    pub position: DVector<f64>,
    pub velocity: DVector<f64>,
    pub reference_attitude: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
}

pub struct OracleParams {
    pub accel_std: f64,
    pub gyro_std: f64,
    pub gravity: DVector<f64>,
    /// R_CQ
    pub cam_from_body: DMatrix<f64>,
    /// R_MF
    pub marker_from_passive: DMatrix<f64>,
    /// t_QC^C
    pub body_from_cam: DVector<f64>,
    /// t_FM^F
    pub passive_from_marker: DVector<f64>,
    /// Position measurement variance diagonal at 1 m.
    pub position_var_at_ref: DVector<f64>,
    /// Orientation measurement variance diagonal.
    pub orientation_var: DVector<f64>,
}

fn reset_transform(delta: &DVector<f64>) -> DMatrix<f64> {
    let mut t = DMatrix::identity(9, 9);
    t.view_mut((6, 6), (3, 3))
        .copy_from(&exp_series(&(-delta * 0.5)));
    t
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// One prediction step: mean propagation, covariance A P A^T + W with
/// W = diag(0, (sigma_a dt)^2 I, (sigma_w dt)^2 I), then the attitude-error
/// reset with T(delta).
pub fn oracle_predict(
    state: &OracleState,
    accel: &DVector<f64>,
    gyro: &DVector<f64>,
    dt: f64,
    params: &OracleParams,
) -> OracleState {
    let r_ref = &state.reference_attitude;
    let delta = DVector::<f64>::zeros(3);

    let position = &state.position + &state.velocity * dt;
    let velocity = &state.velocity + (r_ref * exp_series(&delta) * accel + &params.gravity) * dt;
    let delta_pred = &delta + (gyro - 0.5 * hat(gyro) * &delta) * dt;

    let mut a = DMatrix::<f64>::identity(9, 9);
    a.view_mut((0, 3), (3, 3))
        .copy_from(&(DMatrix::identity(3, 3) * dt));
    a.view_mut((3, 6), (3, 3))
        .copy_from(&(-(r_ref * hat(accel)) * dt));
    a.view_mut((6, 6), (3, 3))
        .copy_from(&(DMatrix::identity(3, 3) - 0.5 * hat(gyro) * dt));
    let mut w = DMatrix::<f64>::zeros(9, 9);
    for i in 0..3 {
        w[(3 + i, 3 + i)] = (params.accel_std * dt).powi(2);
        w[(6 + i, 6 + i)] = (params.gyro_std * dt).powi(2);
    }
    let covariance = &a * &state.covariance * a.transpose() + w;

    let reference_attitude = r_ref * exp_series(&delta_pred);
    let t = reset_transform(&delta_pred);
    let covariance = symmetrize(&(&t * covariance * t.transpose()));

    OracleState {
        position,
        velocity,
        reference_attitude,
        covariance,
    }
}

/// One measurement update with the Joseph-form covariance
/// `(I - K H) P (I - K H)^T + K R K^T`, followed by the attitude-error reset.
pub fn oracle_update(
    state: &OracleState,
    marker_position: &DVector<f64>,
    marker_orientation: &DMatrix<f64>,
    passive_attitude: &DMatrix<f64>,
    params: &OracleParams,
) -> OracleState {
    let r_cq = &params.cam_from_body;
    let r_ref = &state.reference_attitude;

    let reference_mc =
        &params.marker_from_passive * passive_attitude.transpose() * r_ref * r_cq.transpose();
    let sigma = log_quaternion(&(reference_mc.transpose() * marker_orientation));

    let lever = &state.position + passive_attitude * &params.passive_from_marker;
    let predicted = -(r_cq * r_ref.transpose() * &lever) + &params.body_from_cam;
    let z = predicted[2].max(0.05);

    let mut r6 = DMatrix::<f64>::zeros(6, 6);
    for i in 0..3 {
        r6[(i, i)] = (params.position_var_at_ref[i] * z * z).max(1e-12);
        r6[(3 + i, 3 + i)] = params.orientation_var[i].max(1e-12);
    }

    let mut h = DMatrix::<f64>::zeros(6, 9);
    h.view_mut((0, 0), (3, 3))
        .copy_from(&(-(r_cq * r_ref.transpose())));
    h.view_mut((0, 6), (3, 3))
        .copy_from(&(-(r_cq * hat(&(r_ref.transpose() * &lever)))));
    h.view_mut((3, 6), (3, 3)).copy_from(r_cq);

    let s = symmetrize(&(&h * &state.covariance * h.transpose() + &r6));
    let s_inv = s
        .try_inverse()
        .expect("oracle innovation covariance invertible");
    let gain = &state.covariance * h.transpose() * s_inv;

    let mut innovation = DVector::<f64>::zeros(6);
    innovation
        .rows_mut(0, 3)
        .copy_from(&(marker_position - predicted));
    innovation.rows_mut(3, 3).copy_from(&sigma);

    let dx = &gain * innovation;
    let position = &state.position + dx.rows(0, 3);
    let velocity = &state.velocity + dx.rows(3, 3);
    let delta_meas = dx.rows(6, 3).clone_owned();

    let i_kh = DMatrix::<f64>::identity(9, 9) - &gain * &h;
    let covariance = &i_kh * &state.covariance * i_kh.transpose() + &gain * &r6 * gain.transpose();

    let reference_attitude = r_ref * exp_series(&delta_meas);
    let t = reset_transform(&delta_meas);
    let covariance = symmetrize(&(&t * covariance * t.transpose()));

    OracleState {
        position,
        velocity,
        reference_attitude,
        covariance,
    }
}
