//! Sensor log format, deterministic replay, and CSV metrics export.
//!
//! Logs are newline-delimited text records: a record-type tag followed by
//! `name=value` fields in a fixed order, numbers printed with 17 significant
//! digits so every finite double round-trips losslessly. The first line is a
//! mandatory format-version header.

use crate::estimator::{
    Covariance, Estimator, EstimatorError, ImuSample, MeasurementNoiseModel, ProcessNoise,
    RelativePoseMeasurement, Vec9, WorldParams,
};
use crate::geometry::{Mat3, Rotation, Vec3};
use crate::stats;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

/// Mandatory first line of every log file.
pub const LOG_HEADER: &str = "relnav-log 1";
/// Schema tag written as a comment line at the top of metrics CSV files.
pub const METRICS_CSV_SCHEMA: &str = "relnav-metrics 1";
/// Schema tag for per-step trace CSV files.
pub const TRACE_CSV_SCHEMA: &str = "relnav-trace 1";

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("missing or wrong log header, expected '{LOG_HEADER}'")]
    BadHeader,
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: timestamp regression ({t} after {prev})")]
    TimestampRegression { line: usize, t: f64, prev: f64 },
    #[error("records are not timestamp-ordered at index {index}")]
    UnorderedRecords { index: usize },
    #[error("record contains a non-finite value")]
    NonFinite,
    #[error("log contains no IMU records")]
    NoImuRecords,
    #[error("estimator rejected replay input: {0}")]
    Estimator(#[from] EstimatorError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuRecord {
    pub t: f64,
    pub accel: Vec3,
    pub gyro: Vec3,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarkerRecord {
    pub t: f64,
    pub position: Vec3,
    pub rotation: Rotation,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PassiveAttitudeRecord {
    pub t: f64,
    pub rotation: Rotation,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthRecord {
    pub t: f64,
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
    pub rotation: Rotation,
    pub angular_velocity: Vec3,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimateRecord {
    pub t: f64,
    pub position: Vec3,
    pub velocity: Vec3,
    pub rotation: Rotation,
    /// Covariance diagonal, block order (position, velocity, attitude error).
    pub cov_diag: [f64; 9],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Vehicle {
    Active,
    Passive,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LogRecord {
    Imu(ImuRecord),
    Marker(MarkerRecord),
    PassiveAttitude(PassiveAttitudeRecord),
    Truth(Vehicle, TruthRecord),
    Estimate(EstimateRecord),
}

impl LogRecord {
    pub fn t(&self) -> f64 {
        match self {
            LogRecord::Imu(r) => r.t,
            LogRecord::Marker(r) => r.t,
            LogRecord::PassiveAttitude(r) => r.t,
            LogRecord::Truth(_, r) => r.t,
            LogRecord::Estimate(r) => r.t,
        }
    }
}

/// 17 significant digits: lossless decimal round trip for f64.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn push_fields(line: &mut String, fields: &[(&str, f64)]) -> Result<(), IoError> {
    for (name, value) in fields {
        if !value.is_finite() {
            return Err(IoError::NonFinite);
        }
        write!(line, " {name}={}", fmt_f64(*value)).expect("string write");
    }
    Ok(())
}

fn rotation_fields(r: &Rotation) -> [(&'static str, f64); 9] {
    const NAMES: [&str; 9] = [
        "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22",
    ];
    let m = r.matrix();
    let mut out = [("", 0.0); 9];
    for i in 0..3 {
        for j in 0..3 {
            out[i * 3 + j] = (NAMES[i * 3 + j], m[(i, j)]);
        }
    }
    out
}

fn format_record(record: &LogRecord) -> Result<String, IoError> {
    let mut line = String::new();
    match record {
        LogRecord::Imu(r) => {
            line.push_str("IMU");
            push_fields(
                &mut line,
                &[
                    ("t", r.t),
                    ("ax", r.accel.x),
                    ("ay", r.accel.y),
                    ("az", r.accel.z),
                    ("gx", r.gyro.x),
                    ("gy", r.gyro.y),
                    ("gz", r.gyro.z),
                ],
            )?;
        }
        LogRecord::Marker(r) => {
            line.push_str("MARKER");
            push_fields(
                &mut line,
                &[
                    ("t", r.t),
                    ("x", r.position.x),
                    ("y", r.position.y),
                    ("z", r.position.z),
                ],
            )?;
            push_fields(&mut line, &rotation_fields(&r.rotation))?;
        }
        LogRecord::PassiveAttitude(r) => {
            line.push_str("PASSATT");
            push_fields(&mut line, &[("t", r.t)])?;
            push_fields(&mut line, &rotation_fields(&r.rotation))?;
        }
        LogRecord::Truth(vehicle, r) => {
            line.push_str(match vehicle {
                Vehicle::Active => "TRUTH_ACTIVE",
                Vehicle::Passive => "TRUTH_PASSIVE",
            });
            push_fields(
                &mut line,
                &[
                    ("t", r.t),
                    ("px", r.position.x),
                    ("py", r.position.y),
                    ("pz", r.position.z),
                    ("vx", r.velocity.x),
                    ("vy", r.velocity.y),
                    ("vz", r.velocity.z),
                    ("ax", r.acceleration.x),
                    ("ay", r.acceleration.y),
                    ("az", r.acceleration.z),
                ],
            )?;
            push_fields(&mut line, &rotation_fields(&r.rotation))?;
            push_fields(
                &mut line,
                &[
                    ("wx", r.angular_velocity.x),
                    ("wy", r.angular_velocity.y),
                    ("wz", r.angular_velocity.z),
                ],
            )?;
        }
        LogRecord::Estimate(r) => {
            line.push_str("ESTIMATE");
            push_fields(
                &mut line,
                &[
                    ("t", r.t),
                    ("px", r.position.x),
                    ("py", r.position.y),
                    ("pz", r.position.z),
                    ("vx", r.velocity.x),
                    ("vy", r.velocity.y),
                    ("vz", r.velocity.z),
                ],
            )?;
            push_fields(&mut line, &rotation_fields(&r.rotation))?;
            const PNAMES: [&str; 9] = ["c0", "c1", "c2", "c3", "c4", "c5", "c6", "c7", "c8"];
            let cov: Vec<(&str, f64)> = PNAMES
                .iter()
                .zip(r.cov_diag.iter())
                .map(|(n, v)| (*n, *v))
                .collect();
            push_fields(&mut line, &cov)?;
        }
    }
    Ok(line)
}

/// Writes a timestamp-ordered record stream. Rejects unordered records and
/// non-finite values.
pub fn write_log<W: Write>(mut writer: W, records: &[LogRecord]) -> Result<(), IoError> {
    writeln!(writer, "{LOG_HEADER}")?;
    let mut prev = f64::NEG_INFINITY;
    for (index, record) in records.iter().enumerate() {
        let t = record.t();
        if t < prev {
            return Err(IoError::UnorderedRecords { index });
        }
        prev = t;
        writeln!(writer, "{}", format_record(record)?)?;
    }
    Ok(())
}

pub fn write_log_file(path: &Path, records: &[LogRecord]) -> Result<(), IoError> {
    let file = std::fs::File::create(path)?;
    let mut buf = std::io::BufWriter::new(file);
    write_log(&mut buf, records)?;
    buf.flush()?;
    Ok(())
}

struct FieldParser<'a> {
    parts: std::str::SplitWhitespace<'a>,
    line: usize,
}

impl<'a> FieldParser<'a> {
    fn take(&mut self, name: &str) -> Result<f64, IoError> {
        let part = self.parts.next().ok_or_else(|| IoError::Malformed {
            line: self.line,
            reason: format!("missing field '{name}'"),
        })?;
        let (key, value) = part.split_once('=').ok_or_else(|| IoError::Malformed {
            line: self.line,
            reason: format!("expected '{name}=<number>', got '{part}'"),
        })?;
        if key != name {
            return Err(IoError::Malformed {
                line: self.line,
                reason: format!("expected field '{name}', got '{key}'"),
            });
        }
        let parsed: f64 = value.parse().map_err(|_| IoError::Malformed {
            line: self.line,
            reason: format!("cannot parse '{value}' as a number"),
        })?;
        if !parsed.is_finite() {
            return Err(IoError::Malformed {
                line: self.line,
                reason: format!("field '{name}' is not finite"),
            });
        }
        Ok(parsed)
    }

    fn take_vec3(&mut self, names: [&str; 3]) -> Result<Vec3, IoError> {
        Ok(Vec3::new(
            self.take(names[0])?,
            self.take(names[1])?,
            self.take(names[2])?,
        ))
    }

    fn take_rotation(&mut self) -> Result<Rotation, IoError> {
        let mut m = Mat3::zeros();
        const NAMES: [&str; 9] = [
            "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22",
        ];
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] = self.take(NAMES[i * 3 + j])?;
            }
        }
        Rotation::from_matrix(m).map_err(|e| IoError::Malformed {
            line: self.line,
            reason: format!("invalid rotation: {e}"),
        })
    }

    fn finish(mut self) -> Result<(), IoError> {
        if let Some(extra) = self.parts.next() {
            return Err(IoError::Malformed {
                line: self.line,
                reason: format!("unexpected trailing field '{extra}'"),
            });
        }
        Ok(())
    }
}

pub fn read_log<R: BufRead>(reader: R) -> Result<Vec<LogRecord>, IoError> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or(IoError::BadHeader)?;
    if header? != LOG_HEADER {
        return Err(IoError::BadHeader);
    }
    let mut records = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    for (index, line) in lines {
        let line_no = index + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let mut parser = FieldParser {
            parts: text.split_whitespace(),
            line: line_no,
        };
        let tag = parser
            .parts
            .next()
            .expect("non-empty line has a first token");
        let record = match tag {
            "IMU" => {
                let t = parser.take("t")?;
                let accel = parser.take_vec3(["ax", "ay", "az"])?;
                let gyro = parser.take_vec3(["gx", "gy", "gz"])?;
                LogRecord::Imu(ImuRecord { t, accel, gyro })
            }
            "MARKER" => {
                let t = parser.take("t")?;
                let position = parser.take_vec3(["x", "y", "z"])?;
                let rotation = parser.take_rotation()?;
                LogRecord::Marker(MarkerRecord {
                    t,
                    position,
                    rotation,
                })
            }
            "PASSATT" => {
                let t = parser.take("t")?;
                let rotation = parser.take_rotation()?;
                LogRecord::PassiveAttitude(PassiveAttitudeRecord { t, rotation })
            }
            "TRUTH_ACTIVE" | "TRUTH_PASSIVE" => {
                let t = parser.take("t")?;
                let position = parser.take_vec3(["px", "py", "pz"])?;
                let velocity = parser.take_vec3(["vx", "vy", "vz"])?;
                let acceleration = parser.take_vec3(["ax", "ay", "az"])?;
                let rotation = parser.take_rotation()?;
                let angular_velocity = parser.take_vec3(["wx", "wy", "wz"])?;
                let vehicle = if tag == "TRUTH_ACTIVE" {
                    Vehicle::Active
                } else {
                    Vehicle::Passive
                };
                LogRecord::Truth(
                    vehicle,
                    TruthRecord {
                        t,
                        position,
                        velocity,
                        acceleration,
                        rotation,
                        angular_velocity,
                    },
                )
            }
            "ESTIMATE" => {
                let t = parser.take("t")?;
                let position = parser.take_vec3(["px", "py", "pz"])?;
                let velocity = parser.take_vec3(["vx", "vy", "vz"])?;
                let rotation = parser.take_rotation()?;
                let mut cov_diag = [0.0; 9];
                const PNAMES: [&str; 9] = ["c0", "c1", "c2", "c3", "c4", "c5", "c6", "c7", "c8"];
                for (slot, name) in cov_diag.iter_mut().zip(PNAMES.iter()) {
                    *slot = parser.take(name)?;
                }
                LogRecord::Estimate(EstimateRecord {
                    t,
                    position,
                    velocity,
                    rotation,
                    cov_diag,
                })
            }
            other => {
                return Err(IoError::Malformed {
                    line: line_no,
                    reason: format!("unknown record tag '{other}'"),
                })
            }
        };
        parser.finish()?;
        let t = record.t();
        if t < prev {
            return Err(IoError::TimestampRegression {
                line: line_no,
                t,
                prev,
            });
        }
        prev = t;
        records.push(record);
    }
    Ok(records)
}

pub fn read_log_file(path: &Path) -> Result<Vec<LogRecord>, IoError> {
    let file = std::fs::File::open(path)?;
    read_log(std::io::BufReader::new(file))
}

/// Estimator initialization for a replay; normally the first ESTIMATE record
/// of the log plus the configured initial covariance diagonal.
#[derive(Clone, Copy, Debug)]
pub struct InitialEstimate {
    pub position: Vec3,
    pub velocity: Vec3,
    pub attitude: Rotation,
    pub cov_diag: [f64; 9],
    pub t: f64,
}

/// Error statistics of a replay against the truth records in the log.
#[derive(Clone, Debug, Default)]
pub struct ReplayMetrics {
    pub samples: usize,
    pub pos_err_median: f64,
    pub pos_err_p95: f64,
    pub pos_err_max: f64,
    pub att_err_median_deg: f64,
    pub att_err_max_deg: f64,
}

#[derive(Clone, Debug)]
pub struct ReplayResult {
    /// Estimates emitted after every prediction and every applied update.
    pub estimates: Vec<EstimateRecord>,
    pub predicts: usize,
    pub updates_applied: usize,
    pub updates_skipped: usize,
    /// Present when the log carries truth records for both vehicles.
    pub metrics: Option<ReplayMetrics>,
}

fn estimate_record(est: &Estimator) -> EstimateRecord {
    let (position, velocity, attitude) = est.estimate();
    let mut cov_diag = [0.0; 9];
    for (i, slot) in cov_diag.iter_mut().enumerate() {
        *slot = est.covariance().matrix()[(i, i)];
    }
    EstimateRecord {
        t: est.state().t,
        position,
        velocity,
        rotation: attitude,
        cov_diag,
    }
}

/// Feeds a recorded sensor stream to a fresh estimator in file order.
///
/// IMU records at or before the initial timestamp are skipped; marker
/// updates that the estimator rejects (stale, gated, ambiguous, singular)
/// are counted and skipped, exactly as a live run does. Output is therefore
/// bit-identical across replays of the same file.
#[allow(clippy::too_many_arguments)]
pub fn replay(
    records: &[LogRecord],
    extrinsics: &crate::estimator::Extrinsics,
    process_noise: &ProcessNoise,
    measurement_noise: &MeasurementNoiseModel,
    world: &WorldParams,
    initial: &InitialEstimate,
    innovation_gate: Option<f64>,
) -> Result<ReplayResult, IoError> {
    if records.is_empty() {
        return Err(IoError::NoImuRecords);
    }
    if !records.iter().any(|r| matches!(r, LogRecord::Imu(_))) {
        return Err(IoError::NoImuRecords);
    }

    let mut estimator = Estimator::new(
        initial.position,
        initial.velocity,
        initial.attitude,
        Covariance::from_diagonal(&Vec9::from_row_slice(&initial.cov_diag))?,
        initial.t,
    )?;
    estimator.innovation_gate = innovation_gate;

    let mut result = ReplayResult {
        estimates: vec![estimate_record(&estimator)],
        predicts: 0,
        updates_applied: 0,
        updates_skipped: 0,
        metrics: None,
    };
    let mut passive_attitude = Rotation::identity();
    let mut truth_active: Option<TruthRecord> = None;
    let mut truth_passive: Option<TruthRecord> = None;
    let mut pos_errors = Vec::new();
    let mut att_errors = Vec::new();

    for record in records {
        match record {
            LogRecord::PassiveAttitude(r) => passive_attitude = r.rotation,
            LogRecord::Imu(r) => {
                let dt = r.t - estimator.state().t;
                if dt <= 0.0 {
                    continue; // pre-initialization sample
                }
                let imu = ImuSample {
                    accel: r.accel,
                    gyro: r.gyro,
                    t: r.t,
                };
                estimator.predict(&imu, dt, process_noise, world)?;
                result.predicts += 1;
                result.estimates.push(estimate_record(&estimator));
                if let (Some(a), Some(p)) = (&truth_active, &truth_passive) {
                    let (est_p, _, est_r) = estimator.estimate();
                    pos_errors.push((est_p - (a.position - p.position)).norm());
                    att_errors.push(est_r.angle_to(&a.rotation));
                }
            }
            LogRecord::Marker(r) => {
                let meas = RelativePoseMeasurement {
                    marker_position: r.position,
                    marker_orientation: r.rotation,
                    t: r.t,
                };
                match estimator.update(&meas, extrinsics, &passive_attitude, measurement_noise) {
                    Ok(crate::estimator::UpdateOutcome::Applied) => {
                        result.updates_applied += 1;
                        result.estimates.push(estimate_record(&estimator));
                    }
                    Ok(_) => result.updates_skipped += 1,
                    Err(
                        EstimatorError::AmbiguousAttitudeInnovation
                        | EstimatorError::SingularInnovation { .. },
                    ) => result.updates_skipped += 1,
                    Err(e) => return Err(e.into()),
                }
            }
            LogRecord::Truth(Vehicle::Active, r) => truth_active = Some(*r),
            LogRecord::Truth(Vehicle::Passive, r) => truth_passive = Some(*r),
            LogRecord::Estimate(_) => {} // reference output, not an input
        }
    }

    if !pos_errors.is_empty() {
        let att_deg: Vec<f64> = att_errors.iter().map(|a| a.to_degrees()).collect();
        result.metrics = Some(ReplayMetrics {
            samples: pos_errors.len(),
            pos_err_median: stats::median(&pos_errors),
            pos_err_p95: stats::quantile(&pos_errors, 0.95),
            pos_err_max: pos_errors.iter().cloned().fold(0.0, f64::max),
            att_err_median_deg: stats::median(&att_deg),
            att_err_max_deg: att_deg.iter().cloned().fold(0.0, f64::max),
        });
    }
    Ok(result)
}

/// One row of the per-run metrics CSV (schema `relnav-metrics 1`).
#[derive(Clone, Debug)]
pub struct MetricsCsvRow {
    pub run: u64,
    pub seed: u64,
    pub success: bool,
    pub switchover_s: f64,
    pub trigger_s: f64,
    pub dock_s: f64,
    pub onboard_samples: u64,
    pub inrange_samples: u64,
    pub pos_err_med_m: f64,
    pub pos_err_p95_m: f64,
    pub pos_err_max_m: f64,
    pub inrange_pos_err_med_m: f64,
    pub inrange_pos_err_p95_m: f64,
    pub inrange_pos_err_max_m: f64,
    pub frac_pos_err_lt_10cm: f64,
    pub yaw_err_med_deg: f64,
    pub yaw_err_p95_deg: f64,
    pub frac_yaw_err_lt_5deg: f64,
    pub roll_err_med_deg: f64,
    pub pitch_err_med_deg: f64,
    pub mean_nees: f64,
}

pub const METRICS_CSV_COLUMNS: &str = "run,seed,success,switchover_s,trigger_s,dock_s,\
onboard_samples,inrange_samples,pos_err_med_m,pos_err_p95_m,pos_err_max_m,\
inrange_pos_err_med_m,inrange_pos_err_p95_m,inrange_pos_err_max_m,frac_pos_err_lt_10cm,\
yaw_err_med_deg,yaw_err_p95_deg,frac_yaw_err_lt_5deg,roll_err_med_deg,pitch_err_med_deg,\
mean_nees";

pub fn write_metrics_csv<W: Write>(mut w: W, rows: &[MetricsCsvRow]) -> Result<(), IoError> {
    writeln!(w, "# schema: {METRICS_CSV_SCHEMA}")?;
    writeln!(w, "{METRICS_CSV_COLUMNS}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.run,
            r.seed,
            r.success as u8,
            r.switchover_s,
            r.trigger_s,
            r.dock_s,
            r.onboard_samples,
            r.inrange_samples,
            r.pos_err_med_m,
            r.pos_err_p95_m,
            r.pos_err_max_m,
            r.inrange_pos_err_med_m,
            r.inrange_pos_err_p95_m,
            r.inrange_pos_err_max_m,
            r.frac_pos_err_lt_10cm,
            r.yaw_err_med_deg,
            r.yaw_err_p95_deg,
            r.frac_yaw_err_lt_5deg,
            r.roll_err_med_deg,
            r.pitch_err_med_deg,
            r.mean_nees,
        )?;
    }
    Ok(())
}

pub fn write_metrics_csv_file(path: &Path, rows: &[MetricsCsvRow]) -> Result<(), IoError> {
    let mut buf = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_metrics_csv(&mut buf, rows)?;
    buf.flush()?;
    Ok(())
}

/// One row of the per-step trace CSV (schema `relnav-trace 1`), enough to
/// reproduce estimate-versus-truth plots with any plotting tool.
#[derive(Clone, Copy, Debug)]
pub struct TraceCsvRow {
    pub t: f64,
    pub phase: u8,
    pub est_px: f64,
    pub est_py: f64,
    pub est_pz: f64,
    pub true_px: f64,
    pub true_py: f64,
    pub true_pz: f64,
    pub setp_px: f64,
    pub setp_py: f64,
    pub setp_pz: f64,
    pub est_yaw_deg: f64,
    pub true_yaw_deg: f64,
    pub est_pitch_deg: f64,
    pub true_pitch_deg: f64,
    pub est_roll_deg: f64,
    pub true_roll_deg: f64,
}

pub const TRACE_CSV_COLUMNS: &str = "t,phase,est_px,est_py,est_pz,true_px,true_py,true_pz,\
setp_px,setp_py,setp_pz,est_yaw_deg,true_yaw_deg,est_pitch_deg,true_pitch_deg,est_roll_deg,\
true_roll_deg";

pub fn write_trace_csv_file(path: &Path, rows: &[TraceCsvRow]) -> Result<(), IoError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# schema: {TRACE_CSV_SCHEMA}")?;
    writeln!(w, "{TRACE_CSV_COLUMNS}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.phase,
            r.est_px,
            r.est_py,
            r.est_pz,
            r.true_px,
            r.true_py,
            r.true_pz,
            r.setp_px,
            r.setp_py,
            r.setp_pz,
            r.est_yaw_deg,
            r.true_yaw_deg,
            r.est_pitch_deg,
            r.true_pitch_deg,
            r.est_roll_deg,
            r.true_roll_deg,
        )?;
    }
    w.flush()?;
    Ok(())
}
