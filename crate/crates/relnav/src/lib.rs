//! Relative state estimation for a camera/IMU multirotor docking with a
//! marker-carrying partner vehicle.
//!
//! The crate is organized around an error-state extended Kalman filter that
//! fuses body-frame IMU data with relative pose measurements of a fiducial
//! marker, and the machinery needed to exercise it end to end:
//!
//! * [`geometry`] — SO(3) rotation algebra (skew, exp/log maps, polar
//!   reorthonormalization).
//! * [`estimator`] — the nine-state filter: IMU prediction, covariance
//!   propagation with post-prediction attitude reset, and the camera-marker
//!   measurement update.
//! * [`sensors`] — forward synthesis of noisy IMU samples and marker
//!   detections from simulated ground truth.
//! * [`dynamics`] — rigid-body truth simulation of both vehicles, a cascaded
//!   position/attitude controller, and a configurable downwash disturbance.
//! * [`scenario`] — the closed-loop docking experiment and Monte-Carlo
//!   batch driver.
//! * [`io`] — the line-oriented sensor log format, deterministic replay, and
//!   CSV metrics export.
//! * [`config`] — TOML scenario configuration.
//! * [`verify`] — self-checks (Jacobian finite differences, covariance
//!   health soak, NEES consistency) behind the `verify` CLI subcommand.

pub mod config;
pub mod dynamics;
pub mod estimator;
pub mod geometry;
pub mod io;
pub mod scenario;
pub mod sensors;
pub mod stats;
pub mod verify;

pub use estimator::{
    Estimator, EstimatorError, Extrinsics, ImuSample, MeasurementNoiseModel, ProcessNoise,
    RelativePoseMeasurement, WorldParams,
};
pub use geometry::{skew, Rotation, RotationVector, Vec3};
