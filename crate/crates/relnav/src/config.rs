//! Scenario configuration: TOML-backed, with defaults matching the measured
//! sensor characteristics and the docking thresholds used throughout the
//! test suite.

use crate::dynamics::{ControlGains, DisturbanceConfig, VehicleParams};
use crate::estimator::{Extrinsics, MeasurementNoiseModel, ProcessNoise};
use crate::geometry::{Mat3, Rotation, Vec3};
use crate::sensors::CameraModel;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    /// Simulated duration budget, s.
    pub duration_s: f64,
    /// Initial vertical separation between the vehicles, m.
    pub initial_separation_m: f64,
    /// Base RNG seed.
    pub seed: u64,
    /// Std of the active vehicle's spawn offset per axis, m.
    pub spawn_jitter_std_m: f64,
    /// Hold time after switchover before the docking command, s.
    pub docking_hold_s: f64,
    /// Constant-velocity setpoint ramp rate during ascent, m/s.
    pub ascent_speed_mps: f64,
    /// Setpoint gap at the end of the ascent ramp, m.
    pub ascent_target_gap_m: f64,
    /// The docking criterion must hold continuously this long before the
    /// motor-stop command is issued, s.
    pub trigger_confirmation_s: f64,
    /// The ascent ramp pauses once the estimated vertical gap is this far
    /// inside the trigger threshold, m; the pair then waits there for the
    /// horizontal criterion and the confirmation window.
    pub ascent_hold_margin_m: f64,
    /// The drop is only commanded when the last marker detection is at most
    /// this old, s.
    pub trigger_freshness_s: f64,
    /// With no detection for this long during the ascent, the setpoint backs
    /// off downward until the marker is re-acquired, s.
    pub blind_backoff_s: f64,
    /// Scripted undocking phase after a successful dock.
    pub undock: bool,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            duration_s: 30.0,
            initial_separation_m: 0.6,
            seed: 1,
            spawn_jitter_std_m: 0.02,
            docking_hold_s: 1.0,
            ascent_speed_mps: 0.1,
            ascent_target_gap_m: 0.08,
            trigger_confirmation_s: 0.5,
            ascent_hold_margin_m: 0.02,
            trigger_freshness_s: 0.2,
            blind_backoff_s: 0.7,
            undock: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesSection {
    /// Truth integrator rate, Hz.
    pub sim_hz: f64,
    /// IMU sampling and filter prediction rate, Hz.
    pub imu_hz: f64,
    /// Camera frame rate, Hz.
    pub camera_hz: f64,
    /// Passive-attitude link rate, Hz.
    pub passive_attitude_hz: f64,
}

impl Default for RatesSection {
    fn default() -> Self {
        RatesSection {
            sim_hz: 1000.0,
            imu_hz: 500.0,
            camera_hz: 30.0,
            passive_attitude_hz: 100.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuNoiseSection {
    /// Accelerometer noise std per sample, m/s^2.
    pub accel_std: f64,
    /// Rate-gyroscope noise std per sample, rad/s.
    pub gyro_std: f64,
}

impl Default for ImuNoiseSection {
    fn default() -> Self {
        ImuNoiseSection {
            accel_std: 0.5,
            gyro_std: 0.1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSection {
    /// Field-of-view cone half-angle, degrees.
    pub fov_half_angle_deg: f64,
    /// Per-frame probability of a missed detection.
    pub dropout_probability: f64,
}

impl Default for CameraSection {
    fn default() -> Self {
        CameraSection {
            fov_half_angle_deg: 30.0,
            dropout_probability: 0.05,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkerNoiseSection {
    /// Position measurement variance diagonal at 1 m optical distance, m^2;
    /// scales with the squared optical-axis distance.
    pub position_var_at_1m: [f64; 3],
    /// Orientation measurement variance diagonal, rad^2.
    pub orientation_var: [f64; 3],
}

impl Default for MarkerNoiseSection {
    fn default() -> Self {
        MarkerNoiseSection {
            position_var_at_1m: [0.04, 0.04, 0.09],
            orientation_var: [0.1225, 0.1225, 0.0025],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtrinsicsSection {
    /// Rotation body -> camera, row-major 3x3.
    pub cam_from_body: [f64; 9],
    /// Rotation passive body -> marker, row-major 3x3.
    pub marker_from_passive: [f64; 9],
    /// Body origin relative to the camera origin, camera coordinates, m.
    pub body_from_cam: [f64; 3],
    /// Passive origin relative to the marker origin, passive coordinates, m.
    pub passive_from_marker: [f64; 3],
}

impl Default for ExtrinsicsSection {
    fn default() -> Self {
        ExtrinsicsSection {
            // camera looks along body +z through the platform opening,
            // mounted 3 cm above the center of mass
            cam_from_body: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            // marker faces down: half turn about the passive body x axis
            marker_from_passive: [1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0],
            body_from_cam: [0.0, 0.0, -0.03],
            passive_from_marker: [0.0, 0.0, 0.02],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleSection {
    pub mass_kg: f64,
    /// Inertia diagonal, kg m^2. The defaults are thin-disk approximations
    /// from the arm lengths; the real values were never measured.
    pub inertia_diag: [f64; 3],
    pub thrust_max_n: f64,
    pub torque_max_nm: [f64; 3],
}

impl Default for VehicleSection {
    fn default() -> Self {
        VehiclesSection::default().active
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehiclesSection {
    pub active: VehicleSection,
    pub passive: VehicleSection,
}

impl Default for VehiclesSection {
    fn default() -> Self {
        VehiclesSection {
            active: VehicleSection {
                mass_kg: 0.825,
                // disk radius 0.165 m: Ixx = Iyy = m r^2 / 4, Izz = m r^2 / 2
                inertia_diag: [0.005616, 0.005616, 0.011232],
                thrust_max_n: 16.0,
                torque_max_nm: [0.5, 0.5, 0.2],
            },
            passive: VehicleSection {
                mass_kg: 0.160,
                // disk radius 0.058 m
                inertia_diag: [0.0001346, 0.0001346, 0.0002691],
                thrust_max_n: 3.2,
                torque_max_nm: [0.02, 0.02, 0.01],
            },
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSection {
    pub position_p: f64,
    pub position_d: f64,
    pub attitude_p: f64,
    pub attitude_d: f64,
}

impl Default for ControlSection {
    fn default() -> Self {
        let g = ControlGains::default();
        ControlSection {
            position_p: g.position_p,
            position_d: g.position_d,
            attitude_p: g.attitude_p,
            attitude_d: g.attitude_d,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DockingSection {
    /// Maximum vertical gap (onboard estimate) to command the drop, m.
    pub vertical_gap_max_m: f64,
    /// Maximum horizontal offset (onboard estimate) to command the drop, m.
    pub horizontal_offset_max_m: f64,
    /// True-state horizontal tolerance of the mechanical guide at contact, m.
    pub capture_tolerance_m: f64,
    /// True-state vertical separation at which the guide engages, m.
    pub contact_gap_m: f64,
}

impl Default for DockingSection {
    fn default() -> Self {
        DockingSection {
            vertical_gap_max_m: 0.15,
            horizontal_offset_max_m: 0.025,
            capture_tolerance_m: 0.03,
            contact_gap_m: 0.04,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisturbanceSection {
    #[serde(default = "default_true")]
    pub enabled: bool,
    pub peak_force_n: f64,
    pub lateral_radius_m: f64,
    pub reference_gap_m: f64,
    pub vertical_decay_m: f64,
    pub noise_std_n: f64,
}

impl Default for DisturbanceSection {
    fn default() -> Self {
        let d = DisturbanceConfig::default();
        DisturbanceSection {
            enabled: d.enabled,
            peak_force_n: d.peak_force,
            lateral_radius_m: d.lateral_radius,
            reference_gap_m: d.reference_gap,
            vertical_decay_m: d.vertical_decay,
            noise_std_n: d.noise_std,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    /// Accuracy of the offboard state handed to the filter at switchover:
    /// position (m), velocity (m/s) and attitude (rad) noise stds. The
    /// initial covariance is built from the same values so the filter starts
    /// consistent.
    pub handover_position_std: f64,
    pub handover_velocity_std: f64,
    pub handover_attitude_std: f64,
    /// Optional chi-square gate on the 6-dof innovation; off by default so
    /// the update follows the written equations exactly.
    pub innovation_gate: Option<f64>,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        EstimatorSection {
            handover_position_std: 0.005,
            handover_velocity_std: 0.01,
            handover_attitude_std: 0.005,
            innovation_gate: None,
        }
    }
}

/// Fault-injection knobs used by the test suite; all zero by default.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DebugSection {
    /// Constant bias added to the position estimate where the docking
    /// criterion consumes it (models a faulty estimator feeding the
    /// trigger).
    pub estimate_position_bias: [f64; 3],
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    pub rates: RatesSection,
    pub imu_noise: ImuNoiseSection,
    pub camera: CameraSection,
    pub marker_noise: MarkerNoiseSection,
    pub extrinsics: ExtrinsicsSection,
    pub vehicles: VehiclesSection,
    pub control: ControlSection,
    pub docking: DockingSection,
    pub disturbance: DisturbanceSection,
    pub estimator: EstimatorSection,
    pub debug: DebugSection,
}

fn mat3_from_row_major(values: &[f64; 9]) -> Mat3 {
    Mat3::new(
        values[0], values[1], values[2], values[3], values[4], values[5], values[6], values[7],
        values[8],
    )
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: ScenarioConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let r = &self.rates;
        for (name, v) in [
            ("rates.sim_hz", r.sim_hz),
            ("rates.imu_hz", r.imu_hz),
            ("rates.camera_hz", r.camera_hz),
            ("rates.passive_attitude_hz", r.passive_attitude_hz),
            ("scenario.duration_s", self.scenario.duration_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::Invalid(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if r.sim_hz < r.imu_hz {
            return Err(ConfigError::Invalid(
                "rates.sim_hz must be at least rates.imu_hz".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.camera.dropout_probability) {
            return Err(ConfigError::Invalid(
                "camera.dropout_probability must be in [0, 1]".into(),
            ));
        }
        let fov = self.camera.fov_half_angle_deg;
        if !(0.0 < fov && fov < 90.0) {
            return Err(ConfigError::Invalid(
                "camera.fov_half_angle_deg must be in (0, 90)".into(),
            ));
        }
        self.extrinsics()
            .map_err(|e| ConfigError::Invalid(format!("extrinsics: {e}")))?;
        self.active_params()
            .map_err(|e| ConfigError::Invalid(format!("vehicles.active: {e}")))?;
        self.passive_params()
            .map_err(|e| ConfigError::Invalid(format!("vehicles.passive: {e}")))?;
        Ok(())
    }

    pub fn process_noise(&self) -> ProcessNoise {
        ProcessNoise {
            accel_std: self.imu_noise.accel_std,
            gyro_std: self.imu_noise.gyro_std,
        }
    }

    pub fn measurement_noise(&self) -> MeasurementNoiseModel {
        MeasurementNoiseModel {
            position_var_at_ref: Vec3::from_row_slice(&self.marker_noise.position_var_at_1m),
            orientation_var: Vec3::from_row_slice(&self.marker_noise.orientation_var),
        }
    }

    pub fn camera_model(&self) -> CameraModel {
        CameraModel {
            fov_half_angle: self.camera.fov_half_angle_deg.to_radians(),
            frame_rate: self.rates.camera_hz,
            dropout_probability: self.camera.dropout_probability,
        }
    }

    pub fn extrinsics(&self) -> Result<Extrinsics, crate::geometry::GeometryError> {
        Ok(Extrinsics {
            cam_from_body: Rotation::from_matrix(mat3_from_row_major(
                &self.extrinsics.cam_from_body,
            ))?,
            marker_from_passive: Rotation::from_matrix(mat3_from_row_major(
                &self.extrinsics.marker_from_passive,
            ))?,
            body_from_cam: Vec3::from_row_slice(&self.extrinsics.body_from_cam),
            passive_from_marker: Vec3::from_row_slice(&self.extrinsics.passive_from_marker),
        })
    }

    pub fn active_params(&self) -> Result<VehicleParams, crate::dynamics::DynamicsError> {
        let v = &self.vehicles.active;
        VehicleParams::new(
            v.mass_kg,
            Vec3::from_row_slice(&v.inertia_diag),
            v.thrust_max_n,
            Vec3::from_row_slice(&v.torque_max_nm),
        )
    }

    pub fn passive_params(&self) -> Result<VehicleParams, crate::dynamics::DynamicsError> {
        let v = &self.vehicles.passive;
        VehicleParams::new(
            v.mass_kg,
            Vec3::from_row_slice(&v.inertia_diag),
            v.thrust_max_n,
            Vec3::from_row_slice(&v.torque_max_nm),
        )
    }

    pub fn control_gains(&self) -> ControlGains {
        ControlGains {
            position_p: self.control.position_p,
            position_d: self.control.position_d,
            attitude_p: self.control.attitude_p,
            attitude_d: self.control.attitude_d,
        }
    }

    pub fn disturbance(&self) -> DisturbanceConfig {
        DisturbanceConfig {
            enabled: self.disturbance.enabled,
            peak_force: self.disturbance.peak_force_n,
            lateral_radius: self.disturbance.lateral_radius_m,
            reference_gap: self.disturbance.reference_gap_m,
            vertical_decay: self.disturbance.vertical_decay_m,
            noise_std: self.disturbance.noise_std_n,
        }
    }

    /// Initial covariance diagonal for the filter at switchover, block order
    /// (position, velocity, attitude error); matches the handover accuracy.
    pub fn initial_covariance_diag(&self) -> [f64; 9] {
        let e = &self.estimator;
        let mut d = [0.0; 9];
        for i in 0..3 {
            d[i] = e.handover_position_std.powi(2);
            d[3 + i] = e.handover_velocity_std.powi(2);
            d[6 + i] = e.handover_attitude_std.powi(2);
        }
        d
    }
}
