//! Run-log persistence (JSONL schema v1) and GPS replay mixing.
//!
//! A run log is one self-describing JSON-Lines file: a mandatory header
//! record carrying `schema_version` and run metadata, then one record per
//! sample tagged with its channel (`ground_truth`, `imu`, `gps`). Floats
//! survive the round trip bit-exactly for all finite values. Channels must
//! be time-sorted; violations are reported with the offending line number.
//!
//! `replay_mix` implements the mixed-population protocol: the recorded GPS
//! channel is relayed verbatim while a fresh IMU stream is synthesized by
//! running the IMU noise model over kinematics recovered from the recorded
//! ground truth (velocity and yaw smoothed with a 5-sample window, then
//! differentiated with central differences).

use crate::geodesy::GeoPoint;
use crate::sensors::{GpsSample, ImuConfig, ImuModel, ImuSample, SensorError};
use crate::timeseries::{resample_linear, TimeSeries, TimeSeriesError, Unit};
use crate::vehicle::{GroundTruthState, GroundTruthTrajectory, ScenarioError};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing header record on line 1")]
    MissingHeader,
    #[error("schema version mismatch: expected {expected}, found {found}")]
    SchemaVersionMismatch { expected: u32, found: u32 },
    #[error("malformed row at line {line}: {source}")]
    MalformedRow {
        line: usize,
        source: serde_json::Error,
    },
    #[error("timestamp regression at line {line} ({channel} channel)")]
    TimestampRegression { channel: &'static str, line: usize },
    #[error("run log has no usable ground-truth channel (need >= 2 states)")]
    MissingGroundTruth,
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    TimeSeries(#[from] TimeSeriesError),
}

/// Run metadata stored in the header record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogMeta {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub variant: String,
    pub gps_rate_hz: f64,
    pub imu_rate_hz: f64,
    pub origin: GeoPoint,
    pub surface: String,
}

/// One recorded (or simulated) run: metadata plus the sensor and
/// ground-truth channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub meta: RunLogMeta,
    pub gps: Vec<GpsSample>,
    pub imu: Vec<ImuSample>,
    pub ground_truth: Vec<GroundTruthState>,
}

impl RunLog {
    /// The ground-truth channel as a validated trajectory.
    pub fn trajectory(&self) -> Result<GroundTruthTrajectory, DatasetError> {
        if self.ground_truth.len() < 2 {
            return Err(DatasetError::MissingGroundTruth);
        }
        Ok(GroundTruthTrajectory::from_states(self.ground_truth.clone())?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Header(RunLogMeta),
    GroundTruth(GroundTruthState),
    Imu(ImuSample),
    Gps(GpsSample),
}

fn check_channel_sorted(
    channel: &'static str,
    prev: &mut f64,
    t: f64,
    line: usize,
) -> Result<(), DatasetError> {
    if t < *prev {
        return Err(DatasetError::TimestampRegression { channel, line });
    }
    *prev = t;
    Ok(())
}

/// Write a run log as JSONL: header first, then the ground-truth, IMU and
/// GPS channels in time order within each channel.
pub fn save_run(log: &RunLog, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let file = std::fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    let header = Record::Header(RunLogMeta {
        schema_version: SCHEMA_VERSION,
        ..log.meta.clone()
    });
    serde_json::to_writer(&mut out, &header).map_err(|source| DatasetError::MalformedRow {
        line: 1,
        source,
    })?;
    out.write_all(b"\n")?;
    let mut line = 1usize;
    let mut write = |record: &Record| -> Result<(), DatasetError> {
        line += 1;
        serde_json::to_writer(&mut out, record)
            .map_err(|source| DatasetError::MalformedRow { line, source })?;
        out.write_all(b"\n")?;
        Ok(())
    };
    for s in &log.ground_truth {
        write(&Record::GroundTruth(*s))?;
    }
    for s in &log.imu {
        write(&Record::Imu(*s))?;
    }
    for s in &log.gps {
        write(&Record::Gps(*s))?;
    }
    out.flush()?;
    Ok(())
}

/// Load and validate a JSONL run log.
pub fn load_run(path: impl AsRef<Path>) -> Result<RunLog, DatasetError> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);

    let mut meta: Option<RunLogMeta> = None;
    let mut gps = Vec::new();
    let mut imu = Vec::new();
    let mut ground_truth = Vec::new();
    let (mut last_gps, mut last_imu, mut last_gt) =
        (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&text)
            .map_err(|source| DatasetError::MalformedRow {
                line: line_no,
                source,
            })?;
        match record {
            Record::Header(h) => {
                if line_no != 1 {
                    return Err(DatasetError::MissingHeader);
                }
                if h.schema_version != SCHEMA_VERSION {
                    return Err(DatasetError::SchemaVersionMismatch {
                        expected: SCHEMA_VERSION,
                        found: h.schema_version,
                    });
                }
                meta = Some(h);
            }
            Record::GroundTruth(s) => {
                check_channel_sorted("ground_truth", &mut last_gt, s.t, line_no)?;
                ground_truth.push(s);
            }
            Record::Imu(s) => {
                check_channel_sorted("imu", &mut last_imu, s.t, line_no)?;
                imu.push(s);
            }
            Record::Gps(s) => {
                check_channel_sorted("gps", &mut last_gps, s.t, line_no)?;
                gps.push(s);
            }
        }
    }

    let meta = meta.ok_or(DatasetError::MissingHeader)?;
    Ok(RunLog {
        meta,
        gps,
        imu,
        ground_truth,
    })
}

/// Centered moving average with a shrinking window at the edges.
fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Central differences (one-sided at the ends).
fn differentiate(ts: &[f64], values: &[f64]) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| {
            let (lo, hi) = if i == 0 {
                (0, 1)
            } else if i == n - 1 {
                (n - 2, n - 1)
            } else {
                (i - 1, i + 1)
            };
            (values[hi] - values[lo]) / (ts[hi] - ts[lo])
        })
        .collect()
}

fn unwrap_angles(values: &[f64]) -> Vec<f64> {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut out = Vec::with_capacity(values.len());
    let mut offset = 0.0;
    for (i, &v) in values.iter().enumerate() {
        if i > 0 {
            let prev = out[i - 1] - offset;
            let delta = v - prev;
            if delta > std::f64::consts::PI {
                offset -= two_pi;
            } else if delta < -std::f64::consts::PI {
                offset += two_pi;
            }
        }
        out.push(v + offset);
    }
    out
}

/// Kinematics sufficient to drive the IMU model, recovered from recorded
/// velocity and yaw: a 1-D yaw-rate series and a 2-D body-acceleration
/// series on the ground-truth clock. Velocity and yaw are smoothed with a
/// 5-sample moving average before differentiation.
pub fn derive_imu_kinematics(
    states: &[GroundTruthState],
) -> Result<(TimeSeries, TimeSeries), DatasetError> {
    if states.len() < 2 {
        return Err(DatasetError::MissingGroundTruth);
    }
    const SMOOTH_WINDOW: usize = 5;
    let ts: Vec<f64> = states.iter().map(|s| s.t).collect();
    let vx = moving_average(&states.iter().map(|s| s.vel[0]).collect::<Vec<_>>(), SMOOTH_WINDOW);
    let vy = moving_average(&states.iter().map(|s| s.vel[1]).collect::<Vec<_>>(), SMOOTH_WINDOW);
    let yaw_raw = unwrap_angles(&states.iter().map(|s| s.yaw).collect::<Vec<_>>());
    let yaw = moving_average(&yaw_raw, SMOOTH_WINDOW);

    let ax_world = differentiate(&ts, &vx);
    let ay_world = differentiate(&ts, &vy);
    let yaw_rate = differentiate(&ts, &yaw);

    let mut accel_body = Vec::with_capacity(states.len() * 2);
    for i in 0..states.len() {
        let (s, c) = yaw[i].sin_cos();
        accel_body.push(c * ax_world[i] + s * ay_world[i]);
        accel_body.push(-s * ax_world[i] + c * ay_world[i]);
    }

    let yaw_rate_series = TimeSeries::scalar(ts.clone(), yaw_rate, Unit::RadiansPerSecond)?;
    let accel_series = TimeSeries::new(ts, accel_body, 2, Unit::MetersPerSecondSquared)?;
    Ok((yaw_rate_series, accel_series))
}

/// Mix a recorded run with a freshly simulated IMU: the GPS channel passes
/// through verbatim and the IMU channel is re-synthesized at the configured
/// rate from the recorded ground-truth kinematics.
pub fn replay_mix(
    real: &RunLog,
    imu_cfg: &ImuConfig,
    seed: u64,
) -> Result<(Vec<GpsSample>, Vec<ImuSample>), DatasetError> {
    let (yaw_rate, accel_body) = derive_imu_kinematics(&real.ground_truth)?;
    let t0 = real.ground_truth[0].t;
    let t_end = real.ground_truth[real.ground_truth.len() - 1].t;
    let dt = 1.0 / imu_cfg.rate_hz;
    let n = ((t_end - t0) / dt + 1e-9).floor() as usize;
    let targets: Vec<f64> = (0..=n).map(|k| t0 + k as f64 * dt).collect();

    let yaw_rate = resample_linear(&yaw_rate, &targets)?;
    let accel_body = resample_linear(&accel_body, &targets)?;

    let mut imu_model = ImuModel::new(*imu_cfg, seed)?;
    let mut imu = Vec::with_capacity(yaw_rate.len());
    for i in 0..yaw_rate.len() {
        let t = yaw_rate.timestamps()[i];
        let omega = [0.0, 0.0, yaw_rate.values()[i]];
        let accel = accel_body.sample(i);
        imu.push(imu_model.step(omega, [accel[0], accel[1], 0.0], t)?);
    }

    Ok((real.gps.clone(), imu))
}
