//! Ground-truth rigid-body simulation of the two quadcopters, a cascaded
//! position/attitude setpoint controller, and a configurable downwash
//! disturbance model.

use crate::geometry::{reorthonormalize, Mat3, Rotation, Vec3};
use crate::sensors::RngStream;
use thiserror::Error;

/// Standard gravity magnitude, m/s^2.
pub const STANDARD_GRAVITY: f64 = 9.80665;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("time step must be positive, got {dt}")]
    NonPositiveTimeStep { dt: f64 },
    #[error("vehicle parameters are invalid: {reason}")]
    InvalidParams { reason: String },
}

/// Rigid-body state of one vehicle in the inertial frame E (z up).
#[derive(Clone, Copy, Debug)]
pub struct VehicleTruth {
    pub position: Vec3,
    pub velocity: Vec3,
    /// Acceleration realized over the last step (for IMU synthesis).
    pub acceleration: Vec3,
    /// Attitude R_EQ (body to inertial).
    pub attitude: Rotation,
    /// Angular velocity in the body frame, rad/s.
    pub angular_velocity: Vec3,
    pub t: f64,
}

impl VehicleTruth {
    pub fn at_rest(position: Vec3, t: f64) -> Self {
        VehicleTruth {
            position,
            velocity: Vec3::zeros(),
            acceleration: Vec3::zeros(),
            attitude: Rotation::identity(),
            angular_velocity: Vec3::zeros(),
            t,
        }
    }
}

/// Mass, inertia and actuation limits of one vehicle.
#[derive(Clone, Copy, Debug)]
pub struct VehicleParams {
    pub mass: f64,
    pub inertia: Mat3,
    pub inertia_inv: Mat3,
    /// Maximum total thrust magnitude, N.
    pub thrust_max: f64,
    /// Per-axis torque limit, N m.
    pub torque_max: Vec3,
}

impl VehicleParams {
    pub fn new(
        mass: f64,
        inertia_diag: Vec3,
        thrust_max: f64,
        torque_max: Vec3,
    ) -> Result<Self, DynamicsError> {
        if !(mass.is_finite() && mass > 0.0) {
            return Err(DynamicsError::InvalidParams {
                reason: format!("mass {mass}"),
            });
        }
        if inertia_diag.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(DynamicsError::InvalidParams {
                reason: format!("inertia diagonal {inertia_diag:?}"),
            });
        }
        let inertia = Mat3::from_diagonal(&inertia_diag);
        let inertia_inv = Mat3::from_diagonal(&inertia_diag.map(|x| 1.0 / x));
        Ok(VehicleParams {
            mass,
            inertia,
            inertia_inv,
            thrust_max,
            torque_max,
        })
    }
}

/// Forces and torques applied over a step. The propeller force is expressed
/// in E (already mapped through the attitude); torques are body-frame.
#[derive(Clone, Copy, Debug, Default)]
pub struct WrenchInput {
    pub propeller_force: Vec3,
    pub propeller_torque: Vec3,
    pub disturbance_force: Vec3,
    pub disturbance_torque: Vec3,
}

impl WrenchInput {
    pub fn zero() -> Self {
        WrenchInput::default()
    }
}

/// Desired position (relative or absolute, depending on what the controller
/// is fed) and yaw.
#[derive(Clone, Copy, Debug)]
pub struct Setpoint {
    pub position: Vec3,
    pub yaw: f64,
}

/// One semi-implicit Euler step of the Newton-Euler equations:
/// `a = (f_p + f_d)/m + g`, `dw = J^-1 (tau - w x J w)`, with the attitude
/// advanced by `R <- R exp(w dt)` and reorthonormalized.
pub fn step_dynamics(
    truth: &VehicleTruth,
    params: &VehicleParams,
    wrench: &WrenchInput,
    gravity: Vec3,
    dt: f64,
) -> Result<VehicleTruth, DynamicsError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(DynamicsError::NonPositiveTimeStep { dt });
    }
    let acceleration = (wrench.propeller_force + wrench.disturbance_force) / params.mass + gravity;
    let torque = wrench.propeller_torque + wrench.disturbance_torque;
    let omega = truth.angular_velocity;
    let omega_dot = params.inertia_inv * (torque - omega.cross(&(params.inertia * omega)));

    let velocity = truth.velocity + acceleration * dt;
    let position = truth.position + velocity * dt;
    let angular_velocity = omega + omega_dot * dt;
    let attitude =
        reorthonormalize(&(truth.attitude * Rotation::exp(angular_velocity * dt)).into_matrix())
            .expect("attitude stays near-orthonormal");

    Ok(VehicleTruth {
        position,
        velocity,
        acceleration,
        attitude,
        angular_velocity,
        t: truth.t + dt,
    })
}

/// Cascaded PD controller gains.
#[derive(Clone, Copy, Debug)]
pub struct ControlGains {
    /// Position loop proportional gain, 1/s^2.
    pub position_p: f64,
    /// Position loop derivative gain, 1/s.
    pub position_d: f64,
    /// Attitude loop proportional gain, 1/s^2.
    pub attitude_p: f64,
    /// Attitude loop derivative gain, 1/s.
    pub attitude_d: f64,
}

impl Default for ControlGains {
    fn default() -> Self {
        ControlGains {
            position_p: 6.0,
            position_d: 4.0,
            attitude_p: 150.0,
            attitude_d: 20.0,
        }
    }
}

/// Cascaded position -> attitude PD controller.
///
/// The position loop produces a desired acceleration, mapped to a thrust
/// along the current body z axis and a desired attitude (body z aligned with
/// the desired force, yaw from the setpoint). The attitude loop is a PD on
/// the body-frame rotation error with gyroscopic feedforward. Outputs are
/// saturated, never rejected.
#[allow(clippy::too_many_arguments)]
pub fn compute_control(
    position: Vec3,
    velocity: Vec3,
    attitude: &Rotation,
    setpoint: &Setpoint,
    params: &VehicleParams,
    gains: &ControlGains,
    gravity: Vec3,
    angular_velocity: Vec3,
) -> WrenchInput {
    let accel_des = (setpoint.position - position) * gains.position_p - velocity * gains.position_d;
    let mut force_des = (accel_des - gravity) * params.mass;
    if force_des.norm() < 1e-9 {
        force_des = Vec3::new(0.0, 0.0, 1e-9);
    }

    // desired attitude: body z along the desired force, yaw as commanded
    let z_des = force_des.normalize();
    let x_c = Vec3::new(setpoint.yaw.cos(), setpoint.yaw.sin(), 0.0);
    let mut y_des = z_des.cross(&x_c);
    if y_des.norm() < 1e-6 {
        y_des = z_des.cross(&Vec3::new(-setpoint.yaw.sin(), setpoint.yaw.cos(), 0.0));
    }
    y_des.normalize_mut();
    let x_des = y_des.cross(&z_des);
    let r_des = Rotation::from_matrix_unchecked(Mat3::from_columns(&[x_des, y_des, z_des]));

    // thrust along the current body z
    let body_z = *attitude * Vec3::new(0.0, 0.0, 1.0);
    let thrust = force_des.dot(&body_z).clamp(0.0, params.thrust_max);
    let propeller_force = body_z * thrust;

    // attitude PD with gyroscopic feedforward
    let att_err = (attitude.transpose() * r_des).log().vector;
    let torque_unsat = params.inertia
        * (att_err * gains.attitude_p - angular_velocity * gains.attitude_d)
        + angular_velocity.cross(&(params.inertia * angular_velocity));
    let propeller_torque = Vec3::new(
        torque_unsat
            .x
            .clamp(-params.torque_max.x, params.torque_max.x),
        torque_unsat
            .y
            .clamp(-params.torque_max.y, params.torque_max.y),
        torque_unsat
            .z
            .clamp(-params.torque_max.z, params.torque_max.z),
    );

    WrenchInput {
        propeller_force,
        propeller_torque,
        disturbance_force: Vec3::zeros(),
        disturbance_torque: Vec3::zeros(),
    }
}

/// Synthetic downwash acting on the active vehicle below the passive one.
#[derive(Clone, Copy, Debug)]
pub struct DisturbanceConfig {
    pub enabled: bool,
    /// Peak downward force, N, reached directly below at the reference gap.
    pub peak_force: f64,
    /// Lateral 1/e decay radius, m.
    pub lateral_radius: f64,
    /// Vertical gap at (and below) which the force saturates at the peak, m.
    pub reference_gap: f64,
    /// Vertical decay length beyond the reference gap, m.
    pub vertical_decay: f64,
    /// Std of optional white force noise per axis, N.
    pub noise_std: f64,
}

impl Default for DisturbanceConfig {
    fn default() -> Self {
        DisturbanceConfig {
            enabled: true,
            peak_force: 0.15,
            lateral_radius: 0.15,
            reference_gap: 0.3,
            vertical_decay: 0.2,
            noise_std: 0.0,
        }
    }
}

/// Downwash force/torque for the active vehicle at `relative_position`
/// (active w.r.t. passive, in E; below means negative z). Axisymmetric
/// Gaussian lateral profile, saturated near the passive vehicle and decaying
/// exponentially with the vertical gap beyond the reference gap.
pub fn inject_disturbance(
    relative_position: Vec3,
    model: &DisturbanceConfig,
    rng: &mut RngStream,
) -> (Vec3, Vec3) {
    if !model.enabled {
        return (Vec3::zeros(), Vec3::zeros());
    }
    let gap = -relative_position.z;
    if gap <= 0.0 {
        // above the passive vehicle: no downwash
        return (Vec3::zeros(), Vec3::zeros());
    }
    let lateral = (relative_position.x.powi(2) + relative_position.y.powi(2)).sqrt();
    let lateral_factor = (-(lateral / model.lateral_radius).powi(2)).exp();
    let vertical_factor = if gap <= model.reference_gap {
        1.0
    } else {
        (-(gap - model.reference_gap) / model.vertical_decay).exp()
    };
    let mut force = Vec3::new(
        0.0,
        0.0,
        -model.peak_force * lateral_factor * vertical_factor,
    );
    if model.noise_std > 0.0 {
        force += rng.isotropic_normal(model.noise_std);
    }
    (force, Vec3::zeros())
}
