//! Error-state extended Kalman filter for relative localization of an
//! "active" vehicle (camera + IMU) with respect to a "passive" vehicle
//! carrying a fiducial marker.
//!
//! The nine-dimensional error state is (relative position, relative
//! velocity, attitude error), with the attitude error a body-frame rotation
//! vector about a reference attitude: `R_EQ = R_ref * exp(delta)`. The
//! attitude error is folded into the reference and reset to zero after every
//! prediction and every update, with the covariance realigned by the
//! first-order reset transform `T(delta) = diag(I, I, exp(-delta/2))`.
//!
//! Frame conventions: E is the inertial frame (third axis up), Q the active
//! body frame, F the passive body frame, C the camera frame (rigid on Q),
//! M the marker frame (rigid on F). The estimated position/velocity are of
//! Q relative to F, expressed in E. The passive vehicle's absolute attitude
//! `R_EF` is externally provided.

use crate::geometry::{reorthonormalize, skew, Mat3, Rotation, Vec3};
use nalgebra::{SMatrix, SVector};
use thiserror::Error;

pub type Mat9 = SMatrix<f64, 9, 9>;
pub type Mat6 = SMatrix<f64, 6, 6>;
pub type Mat6x9 = SMatrix<f64, 6, 9>;
pub type Vec9 = SVector<f64, 9>;
pub type Vec6 = SVector<f64, 6>;

/// Symmetry tolerance for accepting a covariance matrix.
pub const COV_SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalue floor for accepting a covariance matrix as PSD.
pub const COV_EIGENVALUE_FLOOR: f64 = -1e-10;
/// Innovation covariances are rejected above this condition number.
pub const INNOVATION_CONDITION_LIMIT: f64 = 1e12;
/// Floor applied to the measurement covariance diagonal so that noise-free
/// configurations stay numerically updatable.
pub const MEASUREMENT_VARIANCE_FLOOR: f64 = 1e-12;
/// The optical-axis distance used for measurement-noise scaling is clamped
/// below at this value (meters).
pub const MIN_OPTICAL_DISTANCE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("covariance is not symmetric: max asymmetry {asymmetry:.3e}")]
    CovarianceNotSymmetric { asymmetry: f64 },
    #[error("covariance is not positive semidefinite: min eigenvalue {min_eigenvalue:.3e}")]
    CovarianceNotPsd { min_eigenvalue: f64 },
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("time step must be positive, got {dt}")]
    NonPositiveTimeStep { dt: f64 },
    #[error("innovation covariance is singular: condition number {condition:.3e}")]
    SingularInnovation { condition: f64 },
    #[error("attitude innovation is ambiguous (angle at pi)")]
    AmbiguousAttitudeInnovation,
}

/// Timestamped IMU sample: proper acceleration and angular velocity in the
/// active body frame.
#[derive(Clone, Copy, Debug)]
pub struct ImuSample {
    pub accel: Vec3,
    pub gyro: Vec3,
    pub t: f64,
}

impl ImuSample {
    pub fn is_finite(&self) -> bool {
        self.accel
            .iter()
            .chain(self.gyro.iter())
            .all(|x| x.is_finite())
            && self.t.is_finite()
    }
}

/// Relative pose of the marker with respect to the camera: translation in
/// camera coordinates and the rotation taking camera coordinates to marker
/// coordinates.
#[derive(Clone, Copy, Debug)]
pub struct RelativePoseMeasurement {
    pub marker_position: Vec3,
    pub marker_orientation: Rotation,
    pub t: f64,
}

/// Rig quantities fixed and known from the design.
#[derive(Clone, Copy, Debug)]
pub struct Extrinsics {
    /// Rotation taking active-body coordinates to camera coordinates (R_CQ).
    pub cam_from_body: Rotation,
    /// Rotation taking passive-body coordinates to marker coordinates (R_MF).
    pub marker_from_passive: Rotation,
    /// Displacement from the camera origin to the active-body origin,
    /// expressed in camera coordinates (t_QC^C).
    pub body_from_cam: Vec3,
    /// Displacement from the marker origin to the passive-body origin,
    /// expressed in passive-body coordinates (t_FM^F).
    pub passive_from_marker: Vec3,
}

impl Extrinsics {
    pub fn identity() -> Self {
        Extrinsics {
            cam_from_body: Rotation::identity(),
            marker_from_passive: Rotation::identity(),
            body_from_cam: Vec3::zeros(),
            passive_from_marker: Vec3::zeros(),
        }
    }
}

/// Isotropic IMU noise standard deviations.
#[derive(Clone, Copy, Debug)]
pub struct ProcessNoise {
    pub accel_std: f64,
    pub gyro_std: f64,
}

impl ProcessNoise {
    pub fn new(accel_std: f64, gyro_std: f64) -> Result<Self, EstimatorError> {
        if !(accel_std.is_finite() && gyro_std.is_finite() && accel_std >= 0.0 && gyro_std >= 0.0) {
            return Err(EstimatorError::NonFiniteInput);
        }
        Ok(ProcessNoise {
            accel_std,
            gyro_std,
        })
    }
}

impl Default for ProcessNoise {
    fn default() -> Self {
        ProcessNoise {
            accel_std: 0.5,
            gyro_std: 0.1,
        }
    }
}

/// Camera-marker measurement noise: position variances at the 1 m reference
/// distance (scaled by the squared optical-axis distance) and constant
/// orientation variances.
#[derive(Clone, Copy, Debug)]
pub struct MeasurementNoiseModel {
    /// Position variance diagonal at z = 1 m, in m^2.
    pub position_var_at_ref: Vec3,
    /// Orientation variance diagonal, in rad^2.
    pub orientation_var: Vec3,
}

impl Default for MeasurementNoiseModel {
    fn default() -> Self {
        MeasurementNoiseModel {
            position_var_at_ref: Vec3::new(0.04, 0.04, 0.09),
            orientation_var: Vec3::new(0.1225, 0.1225, 0.0025),
        }
    }
}

impl MeasurementNoiseModel {
    /// Position and orientation covariance at optical-axis distance `z`.
    /// The position block scales with (z / 1 m)^2; the orientation block is
    /// constant. Rejects z <= 0.
    pub fn covariance_at(&self, z: f64) -> Result<(Mat3, Mat3), EstimatorError> {
        if !(z.is_finite() && z > 0.0) {
            return Err(EstimatorError::NonFiniteInput);
        }
        let scale = z * z;
        Ok((
            Mat3::from_diagonal(&(self.position_var_at_ref * scale)),
            Mat3::from_diagonal(&self.orientation_var),
        ))
    }
}

/// Environment constants for prediction.
#[derive(Clone, Copy, Debug)]
pub struct WorldParams {
    /// Gravity in the inertial frame; defaults to (0, 0, -9.80665).
    pub gravity: Vec3,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            gravity: Vec3::new(0.0, 0.0, -crate::dynamics::STANDARD_GRAVITY),
        }
    }
}

/// Filter mean state. The attitude error is zero at every API boundary.
#[derive(Clone, Copy, Debug)]
pub struct EstimatorState {
    /// Relative position of the active vehicle w.r.t. the passive vehicle,
    /// expressed in E (m).
    pub position: Vec3,
    /// Relative velocity in E (m/s).
    pub velocity: Vec3,
    /// Body-frame attitude error (rad); zero outside predict/update.
    pub attitude_error: Vec3,
    /// Reference attitude R_EQ of the active vehicle.
    pub reference_attitude: Rotation,
    /// Time of validity (s).
    pub t: f64,
}

/// 9x9 state covariance, block order (position, velocity, attitude error).
#[derive(Clone, Copy, Debug)]
pub struct Covariance(Mat9);

impl Covariance {
    /// Validates symmetry (within [`COV_SYMMETRY_TOL`]) and positive
    /// semidefiniteness (min eigenvalue >= [`COV_EIGENVALUE_FLOOR`]).
    pub fn from_matrix(m: Mat9) -> Result<Self, EstimatorError> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(EstimatorError::NonFiniteInput);
        }
        let asymmetry = (m - m.transpose()).abs().max();
        if asymmetry > COV_SYMMETRY_TOL {
            return Err(EstimatorError::CovarianceNotSymmetric { asymmetry });
        }
        let min_eigenvalue = m.symmetric_eigen().eigenvalues.min();
        if min_eigenvalue < COV_EIGENVALUE_FLOOR {
            return Err(EstimatorError::CovarianceNotPsd { min_eigenvalue });
        }
        Ok(Covariance(m))
    }

    pub fn from_diagonal(diag: &Vec9) -> Result<Self, EstimatorError> {
        Self::from_matrix(Mat9::from_diagonal(diag))
    }

    pub fn matrix(&self) -> &Mat9 {
        &self.0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.0.symmetric_eigen().eigenvalues.min()
    }

    pub fn max_asymmetry(&self) -> f64 {
        (self.0 - self.0.transpose()).abs().max()
    }

    fn symmetrize(m: &mut Mat9) {
        *m = (*m + m.transpose()) * 0.5;
    }
}

/// Outcome of a measurement update that did not error.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateOutcome {
    Applied,
    /// Measurement older than the filter time; dropped without effect.
    DroppedStale,
    /// Mahalanobis gate exceeded (only when a gate is configured).
    DroppedGated,
}

/// The relative-state filter: mean state plus covariance, advanced by
/// [`Estimator::predict`] on IMU samples and corrected by
/// [`Estimator::update`] on marker detections.
///
/// Instances are single-owner and expect calls in timestamp order.
#[derive(Clone, Debug)]
pub struct Estimator {
    state: EstimatorState,
    covariance: Covariance,
    /// Optional Mahalanobis gate on the 6-dof innovation (chi-square value);
    /// disabled by default so the update follows the written equations
    /// exactly.
    pub innovation_gate: Option<f64>,
}

impl Estimator {
    /// Creates a filter at `t0` with zero attitude error. Rejects non-PSD or
    /// asymmetric initial covariance and non-finite inputs.
    pub fn new(
        position: Vec3,
        velocity: Vec3,
        attitude: Rotation,
        initial_covariance: Covariance,
        t0: f64,
    ) -> Result<Self, EstimatorError> {
        if !(position.iter().all(|x| x.is_finite())
            && velocity.iter().all(|x| x.is_finite())
            && t0.is_finite())
        {
            return Err(EstimatorError::NonFiniteInput);
        }
        Ok(Estimator {
            state: EstimatorState {
                position,
                velocity,
                attitude_error: Vec3::zeros(),
                reference_attitude: attitude,
                t: t0,
            },
            covariance: initial_covariance,
            innovation_gate: None,
        })
    }

    pub fn state(&self) -> &EstimatorState {
        &self.state
    }

    pub fn covariance(&self) -> &Covariance {
        &self.covariance
    }

    /// Current estimate: position, velocity, and the composed attitude
    /// `R_ref * exp(delta)` (equal to the reference attitude at API
    /// boundaries where delta = 0).
    pub fn estimate(&self) -> (Vec3, Vec3, Rotation) {
        let attitude = self.state.reference_attitude * Rotation::exp(self.state.attitude_error);
        (self.state.position, self.state.velocity, attitude)
    }

    /// IMU prediction step over `dt`, followed by the attitude-error reset.
    ///
    /// Mean propagation (the IMU values are held constant over the step):
    /// ```text
    /// p' = p + v dt
    /// v' = v + (R_ref exp(delta) a + g) dt
    /// delta' = delta + (w - 1/2 skew(w) delta) dt
    /// ```
    /// Covariance: `P <- T(delta') (A P A^T + W) T(delta')^T` with `A` from
    /// [`process_jacobian`] and `W = diag(0, sigma_a^2 dt^2 I,
    /// sigma_w^2 dt^2 I)` matching per-sample sensor noise held over the
    /// step. The attitude error is folded into the reference and zeroed.
    pub fn predict(
        &mut self,
        imu: &ImuSample,
        dt: f64,
        noise: &ProcessNoise,
        world: &WorldParams,
    ) -> Result<(), EstimatorError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(EstimatorError::NonPositiveTimeStep { dt });
        }
        if !imu.is_finite() {
            return Err(EstimatorError::NonFiniteInput);
        }
        debug_assert_eq!(self.state.attitude_error, Vec3::zeros());

        let r_ref = self.state.reference_attitude;
        let delta = self.state.attitude_error;

        // Mean propagation. The attitude-error terms are kept in full even
        // though delta is zero here, matching the covariance model.
        let attitude = r_ref * Rotation::exp(delta);
        let position = self.state.position + self.state.velocity * dt;
        let velocity = self.state.velocity + (attitude * imu.accel + world.gravity) * dt;
        let delta_pred = delta + (imu.gyro - 0.5 * skew(imu.gyro) * delta) * dt;

        // Covariance propagation.
        let a = process_jacobian(&self.state, imu, dt);
        let mut w = Mat9::zeros();
        let accel_var = (noise.accel_std * dt).powi(2);
        let gyro_var = (noise.gyro_std * dt).powi(2);
        for i in 0..3 {
            w[(3 + i, 3 + i)] = accel_var;
            w[(6 + i, 6 + i)] = gyro_var;
        }
        let mut p = a * self.covariance.0 * a.transpose() + w;

        // Post-prediction reset: fold the propagated attitude error into the
        // reference and realign the covariance.
        let reference_attitude =
            reorthonormalize(&(r_ref * Rotation::exp(delta_pred)).into_matrix())
                .expect("product of rotations is near-orthonormal");
        let t = reset_transform(delta_pred);
        p = t * p * t.transpose();
        Covariance::symmetrize(&mut p);

        self.state = EstimatorState {
            position,
            velocity,
            attitude_error: Vec3::zeros(),
            reference_attitude,
            t: self.state.t + dt,
        };
        self.covariance = Covariance(p);
        Ok(())
    }

    /// Camera-marker measurement update, followed by the attitude-error
    /// reset. Measurements older than the filter time are dropped.
    ///
    /// The innovation stacks the position residual against the predicted
    /// marker-in-camera translation and the attitude innovation
    /// `log(R_mc_ref^T R_mc)`. The measurement covariance is
    /// `diag(Sigma_s(z), Sigma_R)` with `z` the optical-axis component of
    /// the predicted marker translation, clamped below at
    /// [`MIN_OPTICAL_DISTANCE`]; its diagonal is floored at
    /// [`MEASUREMENT_VARIANCE_FLOOR`].
    pub fn update(
        &mut self,
        meas: &RelativePoseMeasurement,
        extrinsics: &Extrinsics,
        passive_attitude: &Rotation,
        noise: &MeasurementNoiseModel,
    ) -> Result<UpdateOutcome, EstimatorError> {
        if !(meas.t.is_finite() && meas.marker_position.iter().all(|x| x.is_finite())) {
            return Err(EstimatorError::NonFiniteInput);
        }
        if meas.t < self.state.t {
            return Ok(UpdateOutcome::DroppedStale);
        }
        debug_assert_eq!(self.state.attitude_error, Vec3::zeros());

        let r_cq = extrinsics.cam_from_body;
        let r_ref = self.state.reference_attitude;

        // Attitude innovation from the reference relative orientation.
        let reference = predicted_relative_orientation(&self.state, extrinsics, passive_attitude);
        let innovation_att = attitude_innovation(&meas.marker_orientation, &reference);
        if innovation_att.pi_ambiguous {
            return Err(EstimatorError::AmbiguousAttitudeInnovation);
        }

        // Predicted marker translation and the position innovation.
        let lever = self.state.position + *passive_attitude * extrinsics.passive_from_marker;
        let predicted_pos = -(r_cq * (r_ref.transpose() * lever)) + extrinsics.body_from_cam;
        let innovation_pos = meas.marker_position - predicted_pos;

        // Distance-dependent measurement covariance.
        let z = predicted_pos.z.max(MIN_OPTICAL_DISTANCE);
        let (sigma_s, sigma_r) = noise.covariance_at(z)?;
        let mut r6 = Mat6::zeros();
        r6.fixed_view_mut::<3, 3>(0, 0).copy_from(&sigma_s);
        r6.fixed_view_mut::<3, 3>(3, 3).copy_from(&sigma_r);
        for i in 0..6 {
            r6[(i, i)] = r6[(i, i)].max(MEASUREMENT_VARIANCE_FLOOR);
        }

        let h = measurement_jacobian(&self.state, extrinsics, passive_attitude);
        let mut s = h * self.covariance.0 * h.transpose() + r6;
        s = (s + s.transpose()) * 0.5;

        let eigenvalues = s.symmetric_eigen().eigenvalues;
        let (min_eig, max_eig) = (eigenvalues.min(), eigenvalues.max());
        let condition = if min_eig > 0.0 {
            max_eig / min_eig
        } else {
            f64::INFINITY
        };
        if condition > INNOVATION_CONDITION_LIMIT {
            return Err(EstimatorError::SingularInnovation { condition });
        }
        let chol =
            nalgebra::Cholesky::new(s).ok_or(EstimatorError::SingularInnovation { condition })?;

        let mut innovation = Vec6::zeros();
        innovation.fixed_rows_mut::<3>(0).copy_from(&innovation_pos);
        innovation
            .fixed_rows_mut::<3>(3)
            .copy_from(&innovation_att.vector);

        if let Some(gate) = self.innovation_gate {
            let mahalanobis = innovation.dot(&chol.solve(&innovation));
            if mahalanobis > gate {
                return Ok(UpdateOutcome::DroppedGated);
            }
        }

        let gain = self.covariance.0 * h.transpose() * chol.inverse();
        let correction: Vec9 = gain * innovation;
        let mut p = (Mat9::identity() - gain * h) * self.covariance.0;

        let position = self.state.position + correction.fixed_rows::<3>(0).into_owned();
        let velocity = self.state.velocity + correction.fixed_rows::<3>(3).into_owned();
        let delta_meas: Vec3 = correction.fixed_rows::<3>(6).into_owned();

        // Final correction: fold the estimated attitude error into the
        // reference and realign the covariance.
        let reference_attitude =
            reorthonormalize(&(r_ref * Rotation::exp(delta_meas)).into_matrix())
                .expect("product of rotations is near-orthonormal");
        let t = reset_transform(delta_meas);
        p = t * p * t.transpose();
        Covariance::symmetrize(&mut p);

        self.state.position = position;
        self.state.velocity = velocity;
        self.state.attitude_error = Vec3::zeros();
        self.state.reference_attitude = reference_attitude;
        self.covariance = Covariance(p);
        Ok(UpdateOutcome::Applied)
    }
}

/// Jacobian of the (un-reset) prediction map with respect to the error
/// state, evaluated at the current estimate:
/// ```text
/// A = [ I  I dt        0          ]
///     [ 0  I   -R_ref skew(a) dt  ]
///     [ 0  0   I - 1/2 skew(w) dt ]
/// ```
pub fn process_jacobian(state: &EstimatorState, imu: &ImuSample, dt: f64) -> Mat9 {
    let mut a = Mat9::identity();
    let eye_dt = Mat3::identity() * dt;
    a.fixed_view_mut::<3, 3>(0, 3).copy_from(&eye_dt);
    let va = -state.reference_attitude.matrix() * skew(imu.accel) * dt;
    a.fixed_view_mut::<3, 3>(3, 6).copy_from(&va);
    let dd = Mat3::identity() - 0.5 * skew(imu.gyro) * dt;
    a.fixed_view_mut::<3, 3>(6, 6).copy_from(&dd);
    a
}

/// Best prediction of the marker-in-camera orientation,
/// `R_MF R_EF^T R_ref R_CQ^T`.
pub fn predicted_relative_orientation(
    state: &EstimatorState,
    extrinsics: &Extrinsics,
    passive_attitude: &Rotation,
) -> Rotation {
    extrinsics.marker_from_passive
        * passive_attitude.transpose()
        * state.reference_attitude
        * extrinsics.cam_from_body.transpose()
}

/// Attitude innovation `log(reference^T measured)`, propagating the
/// pi-ambiguity flag of the logarithm.
pub fn attitude_innovation(
    measured: &Rotation,
    reference: &Rotation,
) -> crate::geometry::RotationVector {
    (reference.transpose() * *measured).log()
}

/// Jacobian of the stacked measurement (marker translation, attitude
/// innovation) with respect to the error state:
/// ```text
/// H = [ -R_CQ R_ref^T  0  -R_CQ skew(R_ref^T (p + R_EF t_FM)) ]
///     [       0        0                R_CQ                  ]
/// ```
pub fn measurement_jacobian(
    state: &EstimatorState,
    extrinsics: &Extrinsics,
    passive_attitude: &Rotation,
) -> Mat6x9 {
    let r_cq = extrinsics.cam_from_body.matrix();
    let r_ref_t = state.reference_attitude.transpose();
    let lever = state.position + *passive_attitude * extrinsics.passive_from_marker;
    let mut h = Mat6x9::zeros();
    let hp = -(r_cq * r_ref_t.matrix());
    h.fixed_view_mut::<3, 3>(0, 0).copy_from(&hp);
    let hd = -(r_cq * skew(r_ref_t * lever));
    h.fixed_view_mut::<3, 3>(0, 6).copy_from(&hd);
    h.fixed_view_mut::<3, 3>(3, 6).copy_from(r_cq);
    h
}

/// Covariance realignment applied when the attitude error `delta` is folded
/// into the reference attitude: `T = diag(I, I, exp(-delta/2))`.
pub fn reset_transform(delta: Vec3) -> Mat9 {
    let mut t = Mat9::identity();
    t.fixed_view_mut::<3, 3>(6, 6)
        .copy_from(Rotation::exp(-delta * 0.5).matrix());
    t
}
