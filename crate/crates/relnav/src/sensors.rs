//! Forward measurement synthesis: noisy IMU samples and camera-marker
//! relative pose measurements generated from simulator ground truth.

use crate::dynamics::VehicleTruth;
use crate::estimator::{
    Extrinsics, ImuSample, MeasurementNoiseModel, ProcessNoise, RelativePoseMeasurement,
    WorldParams,
};
use crate::geometry::{Rotation, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Deterministic noise stream; the same seed always yields the same sample
/// sequence.
#[derive(Clone, Debug)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Mixes a base seed with a stream index into an independent seed
    /// (splitmix64 finalizer).
    pub fn derive_seed(base: u64, index: u64) -> u64 {
        let mut z = base ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Independent zero-mean normal per axis with the given standard
    /// deviations. Draws nothing when all deviations are zero.
    pub fn normal_vec3(&mut self, std: Vec3) -> Vec3 {
        if std == Vec3::zeros() {
            return Vec3::zeros();
        }
        Vec3::new(
            self.standard_normal() * std.x,
            self.standard_normal() * std.y,
            self.standard_normal() * std.z,
        )
    }

    pub fn isotropic_normal(&mut self, std: f64) -> Vec3 {
        self.normal_vec3(Vec3::new(std, std, std))
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random()
    }
}

/// Camera geometry and availability model. The field of view is a circular
/// cone about the optical axis.
#[derive(Clone, Copy, Debug)]
pub struct CameraModel {
    /// Half-angle of the field-of-view cone, radians.
    pub fov_half_angle: f64,
    /// Frame rate, Hz.
    pub frame_rate: f64,
    /// Independent per-frame probability of a missed detection.
    pub dropout_probability: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            fov_half_angle: 30.0_f64.to_radians(),
            frame_rate: 30.0,
            dropout_probability: 0.05,
        }
    }
}

/// Why a frame produced no measurement.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NotVisible {
    BehindCamera,
    OutsideFov,
    Dropout,
}

/// IMU synthesis: `a_meas = R_EQ^T (a - g) + noise`,
/// `w_meas = w + noise`.
pub fn synthesize_imu(
    truth: &VehicleTruth,
    noise: &ProcessNoise,
    world: &WorldParams,
    rng: &mut RngStream,
) -> ImuSample {
    let specific_force = truth.attitude.transpose() * (truth.acceleration - world.gravity);
    ImuSample {
        accel: specific_force + rng.isotropic_normal(noise.accel_std),
        gyro: truth.angular_velocity + rng.isotropic_normal(noise.gyro_std),
        t: truth.t,
    }
}

/// Noiseless marker-in-camera pose from ground truth:
/// `t_MC = -R_CQ R_EQ^T (p + R_EF t_FM) + t_QC` and
/// `R_MC = R_MF R_EF^T R_EQ R_CQ^T`, with `p` the relative position of the
/// active vehicle w.r.t. the passive vehicle in E.
pub fn exact_marker_pose(
    active: &VehicleTruth,
    passive: &VehicleTruth,
    extrinsics: &Extrinsics,
) -> (Vec3, Rotation) {
    let relative_position = active.position - passive.position;
    let lever = relative_position + passive.attitude * extrinsics.passive_from_marker;
    let t_mc = -(extrinsics.cam_from_body * (active.attitude.transpose() * lever))
        + extrinsics.body_from_cam;
    let r_mc = extrinsics.marker_from_passive
        * passive.attitude.transpose()
        * active.attitude
        * extrinsics.cam_from_body.transpose();
    (t_mc, r_mc)
}

/// Synthesizes one camera frame. Returns `Err(NotVisible)` when the marker
/// center is behind the camera or outside the field-of-view cone, or on
/// random dropout; otherwise the exact pose perturbed per the noise model.
///
/// Draw order is fixed: dropout uniform first, then three position normals,
/// then three orientation normals.
pub fn synthesize_marker_measurement(
    active: &VehicleTruth,
    passive: &VehicleTruth,
    extrinsics: &Extrinsics,
    camera: &CameraModel,
    noise: &MeasurementNoiseModel,
    rng: &mut RngStream,
) -> Result<RelativePoseMeasurement, NotVisible> {
    let (t_mc, r_mc) = exact_marker_pose(active, passive, extrinsics);
    let z = t_mc.z;
    if z <= 0.0 {
        return Err(NotVisible::BehindCamera);
    }
    let bearing = (z / t_mc.norm()).clamp(-1.0, 1.0).acos();
    if bearing > camera.fov_half_angle {
        return Err(NotVisible::OutsideFov);
    }
    if camera.dropout_probability > 0.0 && rng.uniform() < camera.dropout_probability {
        return Err(NotVisible::Dropout);
    }

    let (sigma_s, sigma_r) = noise.covariance_at(z).expect("z > 0 checked above");
    let pos_noise = rng.normal_vec3(Vec3::new(
        sigma_s[(0, 0)].sqrt(),
        sigma_s[(1, 1)].sqrt(),
        sigma_s[(2, 2)].sqrt(),
    ));
    let rot_noise = rng.normal_vec3(Vec3::new(
        sigma_r[(0, 0)].sqrt(),
        sigma_r[(1, 1)].sqrt(),
        sigma_r[(2, 2)].sqrt(),
    ));
    Ok(RelativePoseMeasurement {
        marker_position: t_mc + pos_noise,
        marker_orientation: r_mc * Rotation::exp(rot_noise),
        t: active.t,
    })
}
