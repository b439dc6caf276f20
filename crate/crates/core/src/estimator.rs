//! The planar EKF "judge" that fuses GPS and IMU into velocity estimates.
//!
//! State layout (8 states):
//!
//! ```text
//!  [0] x      world east, m        [4] vy_b   body lateral velocity, m/s
//!  [1] y      world north, m       [5] omega  yaw rate, rad/s
//!  [2] yaw    rad, (-pi, pi]       [6] ax_b   body forward accel, m/s^2
//!  [3] vx_b   body forward, m/s    [7] ay_b   body lateral accel, m/s^2
//! ```
//!
//! The motion model is constant-acceleration in the body frame with the
//! rotating-frame coupling term (`v_dot = a - omega x v`), which keeps a
//! steady circle an exact fixed point of the kinematics. World position
//! integrates the body velocity rotated by yaw; yaw integrates the yaw
//! rate. GPS fixes update (x, y) with the reported covariance floored per
//! entry; IMU samples update (omega, ax_b, ay_b) directly. Updates use the
//! Joseph form and the covariance is re-symmetrized after every step.
//!
//! Estimates are sampled on a fixed output grid (35 Hz by default) by
//! predicting the state to each grid time after all earlier measurements
//! have been fused.

use crate::geodesy::{lla_to_enu, GeoPoint, GeodesyError};
use crate::sensors::{GpsSample, ImuSample};
use crate::timeseries::{TimeSeries, TimeSeriesError, Unit};
use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STATE_DIM: usize = 8;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;

// State indices.
const X: usize = 0;
const Y: usize = 1;
const YAW: usize = 2;
const VX: usize = 3;
const VY: usize = 4;
const OMEGA: usize = 5;
const AX: usize = 6;
const AY: usize = 7;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("{field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("non-finite estimator state at t={0}")]
    NonFiniteState(f64),
    #[error("prediction horizon must be positive, got dt={0}")]
    NonPositiveDt(f64),
    #[error("measurement at t={measurement} precedes state time t={state}")]
    TimestampRegression { measurement: f64, state: f64 },
    #[error("{stream} stream timestamps regress at index {index}")]
    UnsortedStream { stream: &'static str, index: usize },
    #[error("GPS stream must contain at least two fixes before output begins")]
    InsufficientGps,
    #[error("GPS measurement covariance is not PSD after flooring")]
    NonPsdMeasurement,
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error(transparent)]
    Geodesy(#[from] GeodesyError),
    #[error(transparent)]
    TimeSeries(#[from] TimeSeriesError),
}

/// Judge configuration. Process noise entries are variance rates
/// (units^2 per second) for the state layout above.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EkfConfig {
    pub output_rate_hz: f64,
    pub process_noise: [f64; STATE_DIM],
    pub initial_covariance: [f64; STATE_DIM],
    /// Per-entry floor applied to the GPS position covariance diagonal so
    /// zero-covariance sensor models stay usable, m^2.
    pub gps_covariance_floor: f64,
    /// Measurement variance used when fusing gyro yaw rate, (rad/s)^2.
    pub imu_gyro_covariance: f64,
    /// Measurement variance used when fusing body accelerations, (m/s^2)^2.
    pub imu_accel_covariance: f64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        // Process noise is deliberately loose on the velocity states so the
        // filter stays responsive when GPS is the only aiding source.
        Self {
            output_rate_hz: 35.0,
            process_noise: [1e-3, 1e-3, 1e-3, 1.0, 1.0, 0.1, 0.1, 0.1],
            initial_covariance: [1.0, 1.0, 0.5, 9.0, 9.0, 0.5, 1.0, 1.0],
            gps_covariance_floor: 1e-6,
            imu_gyro_covariance: 2.5e-5,
            imu_accel_covariance: 4.0e-4,
        }
    }
}

impl EkfConfig {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        let positive = |field: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(EstimatorError::InvalidConfig {
                    field,
                    reason: format!("must be > 0, got {v}"),
                })
            }
        };
        positive("ekf.output_rate_hz", self.output_rate_hz)?;
        positive("ekf.gps_covariance_floor", self.gps_covariance_floor)?;
        for (field, values) in [
            ("ekf.process_noise", &self.process_noise),
            ("ekf.initial_covariance", &self.initial_covariance),
        ] {
            if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(EstimatorError::InvalidConfig {
                    field,
                    reason: "entries must be >= 0 and finite".into(),
                });
            }
        }
        let imu_ok = self.imu_gyro_covariance >= 0.0 && self.imu_accel_covariance >= 0.0;
        if !imu_ok {
            return Err(EstimatorError::InvalidConfig {
                field: "ekf.imu_covariance",
                reason: "must be >= 0".into(),
            });
        }
        Ok(())
    }
}

/// EKF mean and covariance at time t.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub mean: StateVector,
    pub covariance: StateMatrix,
    pub t: f64,
}

impl EstimatorState {
    pub fn new(mean: StateVector, covariance: StateMatrix, t: f64) -> Self {
        Self {
            mean,
            covariance,
            t,
        }
    }

    /// World-frame velocity (body velocity rotated by yaw).
    pub fn velocity_world(&self) -> [f64; 2] {
        let (s, c) = self.mean[YAW].sin_cos();
        [
            self.mean[VX] * c - self.mean[VY] * s,
            self.mean[VX] * s + self.mean[VY] * c,
        ]
    }

    pub fn speed(&self) -> f64 {
        self.mean[VX].hypot(self.mean[VY])
    }

    fn check_finite(&self) -> Result<(), EstimatorError> {
        if self.mean.iter().chain(self.covariance.iter()).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(EstimatorError::NonFiniteState(self.t))
        }
    }
}

/// Wrap an angle to (-pi, pi].
fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let w = a.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w - two_pi
    } else {
        w
    }
}

fn symmetrize(m: &mut StateMatrix) {
    *m = (*m + m.transpose()) * 0.5;
}

/// Propagate the state over `dt` with the constant-acceleration planar
/// motion model and grow the covariance by the model Jacobian plus
/// `process_noise * dt`.
pub fn ekf_predict(
    state: &EstimatorState,
    cfg: &EkfConfig,
    dt: f64,
) -> Result<EstimatorState, EstimatorError> {
    let dt_ok = dt.is_finite() && dt > 0.0;
    if !dt_ok {
        return Err(EstimatorError::NonPositiveDt(dt));
    }
    state.check_finite()?;

    let m = &state.mean;
    let (yaw, vx, vy, omega, ax, ay) = (m[YAW], m[VX], m[VY], m[OMEGA], m[AX], m[AY]);
    let (s, c) = yaw.sin_cos();

    let mut mean = *m;
    mean[X] = m[X] + (vx * c - vy * s) * dt + 0.5 * (ax * c - ay * s) * dt * dt;
    mean[Y] = m[Y] + (vx * s + vy * c) * dt + 0.5 * (ax * s + ay * c) * dt * dt;
    mean[YAW] = wrap_angle(yaw + omega * dt);
    mean[VX] = vx + (ax + omega * vy) * dt;
    mean[VY] = vy + (ay - omega * vx) * dt;

    let mut f = StateMatrix::identity();
    let half_dt2 = 0.5 * dt * dt;
    f[(X, YAW)] = (-vx * s - vy * c) * dt + (-ax * s - ay * c) * half_dt2;
    f[(X, VX)] = c * dt;
    f[(X, VY)] = -s * dt;
    f[(X, AX)] = c * half_dt2;
    f[(X, AY)] = -s * half_dt2;
    f[(Y, YAW)] = (vx * c - vy * s) * dt + (ax * c - ay * s) * half_dt2;
    f[(Y, VX)] = s * dt;
    f[(Y, VY)] = c * dt;
    f[(Y, AX)] = s * half_dt2;
    f[(Y, AY)] = c * half_dt2;
    f[(YAW, OMEGA)] = dt;
    f[(VX, VY)] = omega * dt;
    f[(VX, OMEGA)] = vy * dt;
    f[(VX, AX)] = dt;
    f[(VY, VX)] = -omega * dt;
    f[(VY, OMEGA)] = -vx * dt;
    f[(VY, AY)] = dt;

    let mut covariance = f * state.covariance * f.transpose();
    for i in 0..STATE_DIM {
        covariance[(i, i)] += cfg.process_noise[i] * dt;
    }
    symmetrize(&mut covariance);

    let next = EstimatorState::new(mean, covariance, state.t + dt);
    next.check_finite()?;
    Ok(next)
}

/// Joseph-form measurement update shared by the GPS and IMU paths.
fn kalman_update<const K: usize>(
    state: &EstimatorState,
    h: &SMatrix<f64, K, STATE_DIM>,
    z: &SVector<f64, K>,
    r: &SMatrix<f64, K, K>,
    t: f64,
) -> Result<EstimatorState, EstimatorError> {
    let p = state.covariance;
    let innovation_cov = h * p * h.transpose() + r;
    let inv = innovation_cov
        .try_inverse()
        .ok_or(EstimatorError::SingularInnovation)?;
    let gain = p * h.transpose() * inv;
    let innovation = z - h * state.mean;

    let mut mean = state.mean + gain * innovation;
    mean[YAW] = wrap_angle(mean[YAW]);
    let i_kh = StateMatrix::identity() - gain * h;
    let mut covariance = i_kh * p * i_kh.transpose() + gain * r * gain.transpose();
    symmetrize(&mut covariance);

    let next = EstimatorState::new(mean, covariance, t);
    next.check_finite()?;
    Ok(next)
}

/// Fuse one GPS fix as an (x, y) position measurement. The reported ENU
/// covariance diagonal is floored per entry at `gps_covariance_floor`.
pub fn ekf_update_gps(
    state: &EstimatorState,
    cfg: &EkfConfig,
    z: &GpsSample,
    origin: &GeoPoint,
) -> Result<EstimatorState, EstimatorError> {
    // 1 ns of slack absorbs float accumulation in the caller's clock.
    if z.t < state.t - 1e-9 {
        return Err(EstimatorError::TimestampRegression {
            measurement: z.t,
            state: state.t,
        });
    }
    let enu = lla_to_enu(&z.position, origin)?;
    let cov = &z.covariance;
    let r = SMatrix::<f64, 2, 2>::new(
        cov[0][0].max(cfg.gps_covariance_floor),
        0.5 * (cov[0][1] + cov[1][0]),
        0.5 * (cov[0][1] + cov[1][0]),
        cov[1][1].max(cfg.gps_covariance_floor),
    );
    // PSD check on the floored 2x2 block.
    if r[(0, 0)] <= 0.0 || r.determinant() < 0.0 {
        return Err(EstimatorError::NonPsdMeasurement);
    }
    let mut h = SMatrix::<f64, 2, STATE_DIM>::zeros();
    h[(0, X)] = 1.0;
    h[(1, Y)] = 1.0;
    let z_vec = SVector::<f64, 2>::new(enu.east, enu.north);
    kalman_update(state, &h, &z_vec, &r, z.t.max(state.t))
}

/// Fuse one IMU sample: gyro z-rate as a yaw-rate measurement and the
/// horizontal body accelerations as (ax_b, ay_b) measurements.
pub fn ekf_update_imu(
    state: &EstimatorState,
    cfg: &EkfConfig,
    z: &ImuSample,
) -> Result<EstimatorState, EstimatorError> {
    if z.t < state.t - 1e-9 {
        return Err(EstimatorError::TimestampRegression {
            measurement: z.t,
            state: state.t,
        });
    }
    let mut h = SMatrix::<f64, 3, STATE_DIM>::zeros();
    h[(0, OMEGA)] = 1.0;
    h[(1, AX)] = 1.0;
    h[(2, AY)] = 1.0;
    let z_vec = SVector::<f64, 3>::new(
        z.angular_velocity[2],
        z.linear_acceleration[0],
        z.linear_acceleration[1],
    );
    let mut r = SMatrix::<f64, 3, 3>::zeros();
    r[(0, 0)] = cfg.imu_gyro_covariance;
    r[(1, 1)] = cfg.imu_accel_covariance;
    r[(2, 2)] = cfg.imu_accel_covariance;
    kalman_update(state, &h, &z_vec, &r, z.t.max(state.t))
}

enum Event<'a> {
    Gps(&'a GpsSample),
    Imu(&'a ImuSample),
}

impl Event<'_> {
    fn t(&self) -> f64 {
        match self {
            Event::Gps(s) => s.t,
            Event::Imu(s) => s.t,
        }
    }

    /// GPS sorts before IMU at equal timestamps.
    fn order(&self) -> u8 {
        match self {
            Event::Gps(_) => 0,
            Event::Imu(_) => 1,
        }
    }
}

fn check_sorted(stream: &'static str, times: impl Iterator<Item = f64>) -> Result<(), EstimatorError> {
    let mut prev = f64::NEG_INFINITY;
    for (index, t) in times.enumerate() {
        if t < prev {
            return Err(EstimatorError::UnsortedStream { stream, index });
        }
        prev = t;
    }
    Ok(())
}

/// Run the judge over complete sensor streams and sample the world-frame
/// velocity estimate on the fixed output grid (timestamps k / output_rate).
///
/// Initialization uses the first two GPS fixes: position from the second
/// fix, yaw from the bearing between them, velocity zero. Events earlier
/// than the initialization time are discarded. The result is deterministic
/// for identical inputs.
pub fn run_estimator(
    gps: &[GpsSample],
    imu: &[ImuSample],
    cfg: &EkfConfig,
    origin: &GeoPoint,
) -> Result<TimeSeries, EstimatorError> {
    cfg.validate()?;
    if gps.len() < 2 {
        return Err(EstimatorError::InsufficientGps);
    }
    check_sorted("gps", gps.iter().map(|s| s.t))?;
    check_sorted("imu", imu.iter().map(|s| s.t))?;

    // Initialize from the first two fixes.
    let e0 = lla_to_enu(&gps[0].position, origin)?;
    let e1 = lla_to_enu(&gps[1].position, origin)?;
    let (de, dn) = (e1.east - e0.east, e1.north - e0.north);
    let yaw0 = if de.hypot(dn) > 1e-12 {
        dn.atan2(de)
    } else {
        0.0
    };
    let mut mean = StateVector::zeros();
    mean[X] = e1.east;
    mean[Y] = e1.north;
    mean[YAW] = wrap_angle(yaw0);
    let mut covariance = StateMatrix::zeros();
    for i in 0..STATE_DIM {
        covariance[(i, i)] = cfg.initial_covariance[i];
    }
    let mut state = EstimatorState::new(mean, covariance, gps[1].t);

    // Merge the remaining events in (t, GPS-before-IMU) order.
    let mut events: Vec<Event> = gps[2..]
        .iter()
        .map(Event::Gps)
        .chain(imu.iter().map(Event::Imu))
        .filter(|e| e.t() >= state.t)
        .collect();
    events.sort_by(|a, b| {
        a.t()
            .partial_cmp(&b.t())
            .unwrap()
            .then(a.order().cmp(&b.order()))
    });

    let rate = cfg.output_rate_hz;
    let t_end = events.last().map(|e| e.t()).unwrap_or(state.t);
    let k_first = (state.t * rate - 1e-9).ceil().max(0.0) as u64;
    let k_last = (t_end * rate + 1e-9).floor() as u64;

    let mut timestamps = Vec::new();
    let mut velocities = Vec::new();
    let mut next_event = 0usize;
    for k in k_first..=k_last {
        let t_k = k as f64 / rate;
        while next_event < events.len() && events[next_event].t() <= t_k {
            let event = &events[next_event];
            let dt = event.t() - state.t;
            if dt > 0.0 {
                state = ekf_predict(&state, cfg, dt)?;
                state.t = event.t();
            }
            state = match event {
                Event::Gps(s) => ekf_update_gps(&state, cfg, s, origin)?,
                Event::Imu(s) => ekf_update_imu(&state, cfg, s)?,
            };
            next_event += 1;
        }
        let dt = t_k - state.t;
        if dt > 0.0 {
            state = ekf_predict(&state, cfg, dt)?;
            state.t = t_k;
        }
        let v = state.velocity_world();
        timestamps.push(t_k);
        velocities.extend_from_slice(&v);
    }

    Ok(TimeSeries::new(
        timestamps,
        velocities,
        2,
        Unit::MetersPerSecond,
    )?)
}
