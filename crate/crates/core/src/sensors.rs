//! GPS/IMU noise models and the five composed sensor variants.
//!
//! The IMU is a Gaussian-drift model: white noise plus a bias that random
//! walks with per-step standard deviation `b0 * sqrt(dt / tb)`. The same
//! model serves gyroscope and accelerometer and is shared by every variant.
//!
//! GPS position noise comes in two flavors, applied in local ENU meters and
//! converted to latitude/longitude afterwards so the sigmas stay metric:
//!
//! * additive Gaussian noise per axis;
//! * a random walk whose error acceleration is drawn around a
//!   concentration-gradient mean `-p/p_max` that pulls the accumulated
//!   error back toward zero. The opposite (diverging) sign can be selected
//!   with `literal_gradient_sign` for comparison.
//!
//! Measurement covariance is either the zero matrix or derived from an
//! HDOP low-pass filter, `H' = alpha*H + (1-alpha)*H_inf` with
//! `alpha = exp(-dt/tau)`, mapped to a diagonal covariance with entries
//! `(scale * H)^2`.
//!
//! Every model owns a seeded RNG split from the run seed by stream index,
//! so adding or removing one model never perturbs another model's draws.

use crate::geodesy::{enu_to_lla, EnuPoint, GeoPoint, GeodesyError};
use crate::vehicle::GroundTruthTrajectory;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// RNG stream indices within a run seed (one per model instance).
const IMU_STREAM: u64 = 0;
const GPS_STREAM: u64 = 1;

pub type Matrix3 = [[f64; 3]; 3];

pub const ZERO_COVARIANCE: Matrix3 = [[0.0; 3]; 3];

#[derive(Debug, Error, PartialEq)]
pub enum SensorError {
    #[error("{field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("non-finite ground-truth input at t={0}")]
    NonFiniteInput(f64),
    #[error("HDOP must be positive, got {0}")]
    NonPositiveHdop(f64),
    #[error("trajectory rate {sim_rate_hz} Hz is not an integer multiple of sensor rate {sensor_rate_hz} Hz")]
    IncompatibleRate { sim_rate_hz: f64, sensor_rate_hz: f64 },
    #[error("trajectory too short to sample")]
    TrajectoryTooShort,
    #[error(transparent)]
    Geodesy(#[from] GeodesyError),
}

fn require_non_negative(field: &'static str, values: &[f64]) -> Result<(), SensorError> {
    for &v in values {
        let ok = v.is_finite() && v >= 0.0;
        if !ok {
            return Err(SensorError::InvalidConfig {
                field,
                reason: format!("must be >= 0 and finite, got {v}"),
            });
        }
    }
    Ok(())
}

fn require_positive(field: &'static str, v: f64) -> Result<(), SensorError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(SensorError::InvalidConfig {
            field,
            reason: format!("must be > 0, got {v}"),
        })
    }
}

// ---------------------------------------------------------------------------
// IMU
// ---------------------------------------------------------------------------

/// Gaussian-drift IMU parameters (shared by gyroscope and accelerometer).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImuConfig {
    /// White-noise sigma per gyro axis, rad/s.
    pub gyro_sigma: [f64; 3],
    /// White-noise sigma per accelerometer axis, m/s^2.
    pub accel_sigma: [f64; 3],
    /// Bias drift scale per axis.
    pub bias_b0: [f64; 3],
    /// Bias drift time constant, s.
    pub bias_tb: f64,
    /// White-noise mean per axis.
    pub mu_a: [f64; 3],
    /// Bias increment mean per axis.
    pub mu_b: [f64; 3],
    pub rate_hz: f64,
}

impl Default for ImuConfig {
    fn default() -> Self {
        // Sigmas are datasheet-style placeholders for a MEMS unit; the bias
        // drift parameters b0 = 1e-4 and tb = 0.1 s are the standard
        // Gaussian-drift settings.
        Self {
            gyro_sigma: [0.005; 3],
            accel_sigma: [0.02; 3],
            bias_b0: [1e-4; 3],
            bias_tb: 0.1,
            mu_a: [0.0; 3],
            mu_b: [0.0; 3],
            rate_hz: 100.0,
        }
    }
}

impl ImuConfig {
    pub fn validate(&self) -> Result<(), SensorError> {
        require_non_negative("imu.gyro_sigma", &self.gyro_sigma)?;
        require_non_negative("imu.accel_sigma", &self.accel_sigma)?;
        require_non_negative("imu.bias_b0", &self.bias_b0)?;
        require_positive("imu.bias_tb", self.bias_tb)?;
        require_positive("imu.rate_hz", self.rate_hz)?;
        Ok(())
    }
}

/// One IMU measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t: f64,
    /// rad/s, body frame.
    pub angular_velocity: [f64; 3],
    /// m/s^2, body frame.
    pub linear_acceleration: [f64; 3],
}

/// Stateful Gaussian-drift IMU. Biases start at zero and accumulate a
/// Gaussian increment every step; the step period is fixed at 1/rate.
#[derive(Debug, Clone)]
pub struct ImuModel {
    cfg: ImuConfig,
    gyro_bias: [f64; 3],
    accel_bias: [f64; 3],
    rng: ChaCha8Rng,
}

impl ImuModel {
    pub fn new(cfg: ImuConfig, seed: u64) -> Result<Self, SensorError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(IMU_STREAM);
        Ok(Self {
            cfg,
            gyro_bias: [0.0; 3],
            accel_bias: [0.0; 3],
            rng,
        })
    }

    pub fn config(&self) -> &ImuConfig {
        &self.cfg
    }

    /// Advance one period and measure the given ground-truth kinematics.
    ///
    /// The bias is updated first and the fresh value enters the sample:
    /// `out = truth + noise + bias`. Draw order is fixed (gyro bias, gyro
    /// noise, accel bias, accel noise; x, y, z within each) so streams are
    /// reproducible.
    pub fn step(
        &mut self,
        gt_angular_velocity: [f64; 3],
        gt_acceleration: [f64; 3],
        t: f64,
    ) -> Result<ImuSample, SensorError> {
        if gt_angular_velocity.iter().chain(&gt_acceleration).any(|v| !v.is_finite()) {
            return Err(SensorError::NonFiniteInput(t));
        }
        let dt = 1.0 / self.cfg.rate_hz;
        let drift = (dt / self.cfg.bias_tb).sqrt();

        let mut angular_velocity = [0.0; 3];
        for i in 0..3 {
            let z: f64 = self.rng.sample(StandardNormal);
            self.gyro_bias[i] += self.cfg.mu_b[i] + self.cfg.bias_b0[i] * drift * z;
            let n: f64 = self.rng.sample(StandardNormal);
            angular_velocity[i] =
                gt_angular_velocity[i] + (self.cfg.mu_a[i] + self.cfg.gyro_sigma[i] * n) + self.gyro_bias[i];
        }
        let mut linear_acceleration = [0.0; 3];
        for i in 0..3 {
            let z: f64 = self.rng.sample(StandardNormal);
            self.accel_bias[i] += self.cfg.mu_b[i] + self.cfg.bias_b0[i] * drift * z;
            let n: f64 = self.rng.sample(StandardNormal);
            linear_acceleration[i] =
                gt_acceleration[i] + (self.cfg.mu_a[i] + self.cfg.accel_sigma[i] * n) + self.accel_bias[i];
        }
        Ok(ImuSample {
            t,
            angular_velocity,
            linear_acceleration,
        })
    }
}

// ---------------------------------------------------------------------------
// GPS position noise
// ---------------------------------------------------------------------------

/// One GPS fix: geodetic position plus the measurement covariance the
/// sensor reports to the estimator (zero for the Chrono-style models).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsSample {
    pub t: f64,
    pub position: GeoPoint,
    /// 3x3 symmetric PSD measurement covariance, m^2, ENU axes.
    pub covariance: Matrix3,
}

/// Additive Gaussian GPS noise, meters per ENU axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpsGaussConfig {
    pub sigma: [f64; 3],
    pub rate_hz: f64,
}

impl Default for GpsGaussConfig {
    fn default() -> Self {
        // Datasheet-style horizontal accuracy of an RTK-grade receiver.
        // Still IID per fix, so it stresses the estimator far more than a
        // slow random walk of the same magnitude.
        Self {
            sigma: [0.05, 0.05, 0.05],
            rate_hz: 10.0,
        }
    }
}

impl GpsGaussConfig {
    pub fn validate(&self) -> Result<(), SensorError> {
        require_non_negative("gps_gauss.sigma", &self.sigma)?;
        require_positive("gps_gauss.rate_hz", self.rate_hz)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GaussianGps {
    cfg: GpsGaussConfig,
    rng: ChaCha8Rng,
}

impl GaussianGps {
    pub fn new(cfg: GpsGaussConfig, seed: u64) -> Result<Self, SensorError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(GPS_STREAM);
        Ok(Self { cfg, rng })
    }

    /// Measure a ground-truth ENU position; covariance is the zero matrix.
    pub fn step(
        &mut self,
        gt_pos: EnuPoint,
        origin: &GeoPoint,
        t: f64,
    ) -> Result<GpsSample, SensorError> {
        let mut noisy = [gt_pos.east, gt_pos.north, gt_pos.up];
        for (i, value) in noisy.iter_mut().enumerate() {
            let z: f64 = self.rng.sample(StandardNormal);
            *value += self.cfg.sigma[i] * z;
        }
        let position = enu_to_lla(&EnuPoint::new(noisy[0], noisy[1], noisy[2]), origin)?;
        Ok(GpsSample {
            t,
            position,
            covariance: ZERO_COVARIANCE,
        })
    }
}

/// Random-walk GPS noise driven by a concentration-gradient acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpsRwConfig {
    /// Error-acceleration sigma per axis, m/s^2 (standstill calibration).
    pub sigma_a: [f64; 3],
    /// Error scale at which the gradient reaches 1 m/s^2, meters.
    pub p_max: f64,
    pub rate_hz: f64,
    /// Use the diverging gradient sign (+p/p_max) instead of the
    /// mean-reverting default.
    pub literal_gradient_sign: bool,
}

impl Default for GpsRwConfig {
    fn default() -> Self {
        Self {
            sigma_a: [0.02; 3],
            p_max: 0.06,
            rate_hz: 10.0,
            literal_gradient_sign: false,
        }
    }
}

impl GpsRwConfig {
    pub fn validate(&self) -> Result<(), SensorError> {
        require_non_negative("gps_rw.sigma_a", &self.sigma_a)?;
        require_positive("gps_rw.p_max", self.p_max)?;
        require_positive("gps_rw.rate_hz", self.rate_hz)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RandomWalkGps {
    cfg: GpsRwConfig,
    /// Accumulated position error, meters.
    error_pos: [f64; 3],
    /// Error velocity, m/s.
    error_vel: [f64; 3],
    rng: ChaCha8Rng,
}

impl RandomWalkGps {
    pub fn new(cfg: GpsRwConfig, seed: u64) -> Result<Self, SensorError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(GPS_STREAM);
        Ok(Self {
            cfg,
            error_pos: [0.0; 3],
            error_vel: [0.0; 3],
            rng,
        })
    }

    pub fn error_position(&self) -> [f64; 3] {
        self.error_pos
    }

    /// Advance the error kinematics one GPS period and measure.
    ///
    /// The error acceleration is integrated with the symplectic Euler
    /// update (velocity first, then position from the new velocity). The
    /// kick-drift form `p += v dt + a dt^2 / 2` amplifies the oscillator
    /// energy by ~(1 + (dt^2)/(2 p_max)) per step, which at 10 Hz blows up
    /// within a single run; the symplectic form keeps the mean-reverting
    /// gradient doing its job.
    pub fn step(
        &mut self,
        gt_pos: EnuPoint,
        origin: &GeoPoint,
        t: f64,
    ) -> Result<GpsSample, SensorError> {
        let dt = 1.0 / self.cfg.rate_hz;
        for i in 0..3 {
            let gradient = self.error_pos[i] / self.cfg.p_max;
            let mean = if self.cfg.literal_gradient_sign {
                gradient
            } else {
                -gradient
            };
            let z: f64 = self.rng.sample(StandardNormal);
            let accel = mean + self.cfg.sigma_a[i] * z;
            self.error_vel[i] += accel * dt;
            self.error_pos[i] += self.error_vel[i] * dt;
        }
        let position = enu_to_lla(
            &EnuPoint::new(
                gt_pos.east + self.error_pos[0],
                gt_pos.north + self.error_pos[1],
                gt_pos.up + self.error_pos[2],
            ),
            origin,
        )?;
        Ok(GpsSample {
            t,
            position,
            covariance: ZERO_COVARIANCE,
        })
    }
}

// ---------------------------------------------------------------------------
// HDOP covariance
// ---------------------------------------------------------------------------

/// HDOP low-pass filter parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HdopConfig {
    /// Initial HDOP (poor signal at start).
    pub h0: f64,
    /// HDOP at convergence.
    pub h_inf: f64,
    /// Filter time constant, s.
    pub tau: f64,
    /// Meters of measurement sigma per HDOP unit.
    pub scale: f64,
}

impl Default for HdopConfig {
    fn default() -> Self {
        Self {
            h0: 100.0,
            h_inf: 0.8,
            tau: 2.0,
            scale: 0.02,
        }
    }
}

impl HdopConfig {
    pub fn validate(&self) -> Result<(), SensorError> {
        require_positive("hdop.h_inf", self.h_inf)?;
        require_positive("hdop.tau", self.tau)?;
        require_non_negative("hdop.scale", &[self.scale])?;
        if self.h0 < self.h_inf {
            return Err(SensorError::InvalidConfig {
                field: "hdop.h0",
                reason: format!("must be >= h_inf ({}), got {}", self.h_inf, self.h0),
            });
        }
        Ok(())
    }
}

/// Exponential HDOP decay toward `h_inf`.
#[derive(Debug, Clone, Copy)]
pub struct HdopFilter {
    cfg: HdopConfig,
    h: f64,
}

impl HdopFilter {
    pub fn new(cfg: HdopConfig) -> Result<Self, SensorError> {
        cfg.validate()?;
        Ok(Self { cfg, h: cfg.h0 })
    }

    pub fn current(&self) -> f64 {
        self.h
    }

    /// One filter update over `dt`: `H' = H_inf + alpha * (H - H_inf)` with
    /// `alpha = exp(-dt/tau)`; written in contraction form so the distance
    /// to `H_inf` shrinks by exactly `alpha`.
    pub fn step(&mut self, dt: f64) -> f64 {
        let alpha = (-dt / self.cfg.tau).exp();
        self.h = self.cfg.h_inf + alpha * (self.h - self.cfg.h_inf);
        self.h
    }
}

/// Map an HDOP value to the diagonal measurement covariance with entries
/// `(scale * H)^2` m^2.
pub fn hdop_covariance(h: f64, cfg: &HdopConfig) -> Result<Matrix3, SensorError> {
    let positive = h.is_finite() && h > 0.0;
    if !positive {
        return Err(SensorError::NonPositiveHdop(h));
    }
    let var = (cfg.scale * h).powi(2);
    let mut cov = ZERO_COVARIANCE;
    for (i, row) in cov.iter_mut().enumerate() {
        row[i] = var;
    }
    Ok(cov)
}

// ---------------------------------------------------------------------------
// Composed variants
// ---------------------------------------------------------------------------

/// The five GPS sensor-model variants. The IMU model is identical across
/// all of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorVariant {
    /// Additive Gaussian noise, zero measurement covariance.
    ChGauss,
    /// Random-walk noise, zero measurement covariance.
    ChRw,
    /// No position noise, HDOP-derived covariance.
    AirSim,
    /// Additive Gaussian noise, HDOP-derived covariance.
    ChGaussAirSim,
    /// Random-walk noise, HDOP-derived covariance.
    ChRwAirSim,
}

impl SensorVariant {
    pub const ALL: [SensorVariant; 5] = [
        SensorVariant::ChGauss,
        SensorVariant::ChRw,
        SensorVariant::AirSim,
        SensorVariant::ChGaussAirSim,
        SensorVariant::ChRwAirSim,
    ];

    pub fn slug(&self) -> &'static str {
        match self {
            SensorVariant::ChGauss => "ch_gauss",
            SensorVariant::ChRw => "ch_rw",
            SensorVariant::AirSim => "air_sim",
            SensorVariant::ChGaussAirSim => "ch_gauss_air_sim",
            SensorVariant::ChRwAirSim => "ch_rw_air_sim",
        }
    }
}

impl std::fmt::Display for SensorVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.slug())
    }
}

impl std::str::FromStr for SensorVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SensorVariant::ALL
            .iter()
            .find(|v| v.slug() == s)
            .copied()
            .ok_or_else(|| format!("unknown sensor variant '{s}' (expected one of ch_gauss, ch_rw, air_sim, ch_gauss_air_sim, ch_rw_air_sim)"))
    }
}

/// Parameter set for all models; each variant picks what it needs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorParams {
    pub imu: ImuConfig,
    pub gps_gauss: GpsGaussConfig,
    pub gps_rw: GpsRwConfig,
    pub hdop: HdopConfig,
}

impl SensorParams {
    pub fn validate(&self) -> Result<(), SensorError> {
        self.imu.validate()?;
        self.gps_gauss.validate()?;
        self.gps_rw.validate()?;
        self.hdop.validate()
    }
}

#[derive(Debug, Clone)]
enum GpsNoiseModel {
    /// Ground truth passes through untouched (AirSim-style).
    None { rate_hz: f64 },
    Gauss(GaussianGps),
    RandomWalk(RandomWalkGps),
}

impl GpsNoiseModel {
    fn rate_hz(&self) -> f64 {
        match self {
            GpsNoiseModel::None { rate_hz } => *rate_hz,
            GpsNoiseModel::Gauss(m) => m.cfg.rate_hz,
            GpsNoiseModel::RandomWalk(m) => m.cfg.rate_hz,
        }
    }

    fn step(
        &mut self,
        gt_pos: EnuPoint,
        origin: &GeoPoint,
        t: f64,
    ) -> Result<GpsSample, SensorError> {
        match self {
            GpsNoiseModel::None { .. } => Ok(GpsSample {
                t,
                position: enu_to_lla(&gt_pos, origin)?,
                covariance: ZERO_COVARIANCE,
            }),
            GpsNoiseModel::Gauss(m) => m.step(gt_pos, origin, t),
            GpsNoiseModel::RandomWalk(m) => m.step(gt_pos, origin, t),
        }
    }
}

#[derive(Debug, Clone)]
enum CovarianceSource {
    Zero,
    Hdop { filter: HdopFilter },
}

/// GPS and IMU streams sampled from one ground-truth trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorStreams {
    pub gps: Vec<GpsSample>,
    pub imu: Vec<ImuSample>,
}

/// A composed sensor rig: one IMU model plus one GPS variant, stepping at
/// their configured rates over a ground-truth trajectory. Single-owner
/// mutable state; build one rig per run.
#[derive(Debug, Clone)]
pub struct SensorRig {
    variant: SensorVariant,
    imu: ImuModel,
    gps: GpsNoiseModel,
    covariance: CovarianceSource,
}

impl SensorRig {
    /// Compose the rig for a variant from the shared parameter set and the
    /// run seed.
    pub fn new(
        variant: SensorVariant,
        params: &SensorParams,
        seed: u64,
    ) -> Result<Self, SensorError> {
        params.validate()?;
        let imu = ImuModel::new(params.imu, seed)?;
        let gps = match variant {
            SensorVariant::ChGauss | SensorVariant::ChGaussAirSim => {
                GpsNoiseModel::Gauss(GaussianGps::new(params.gps_gauss, seed)?)
            }
            SensorVariant::ChRw | SensorVariant::ChRwAirSim => {
                GpsNoiseModel::RandomWalk(RandomWalkGps::new(params.gps_rw, seed)?)
            }
            // No position noise; publication rate shared with the Gaussian
            // model's setting.
            SensorVariant::AirSim => GpsNoiseModel::None {
                rate_hz: params.gps_gauss.rate_hz,
            },
        };
        let covariance = match variant {
            SensorVariant::ChGauss | SensorVariant::ChRw => CovarianceSource::Zero,
            SensorVariant::AirSim | SensorVariant::ChGaussAirSim | SensorVariant::ChRwAirSim => {
                CovarianceSource::Hdop {
                    filter: HdopFilter::new(params.hdop)?,
                }
            }
        };
        Ok(Self {
            variant,
            imu,
            gps,
            covariance,
        })
    }

    pub fn variant(&self) -> SensorVariant {
        self.variant
    }

    /// Publication rate of this rig's GPS model, Hz.
    pub fn gps_rate_hz(&self) -> f64 {
        self.gps.rate_hz()
    }

    /// Publication rate of this rig's IMU model, Hz.
    pub fn imu_rate_hz(&self) -> f64 {
        self.imu.cfg.rate_hz
    }

    /// Sample both sensors over a trajectory whose grid must be an integer
    /// multiple of each sensor rate (the 500 Hz default divides evenly into
    /// 100 Hz IMU and 10 Hz GPS).
    pub fn sample_trajectory(
        &mut self,
        traj: &GroundTruthTrajectory,
        origin: &GeoPoint,
    ) -> Result<SensorStreams, SensorError> {
        if traj.len() < 2 {
            return Err(SensorError::TrajectoryTooShort);
        }
        let sim_dt = traj.state(1).t - traj.state(0).t;
        let sim_rate = 1.0 / sim_dt;
        let imu_stride = stride_for(sim_rate, self.imu.cfg.rate_hz)?;
        let gps_rate = self.gps.rate_hz();
        let gps_stride = stride_for(sim_rate, gps_rate)?;
        let gps_dt = 1.0 / gps_rate;

        let mut imu = Vec::with_capacity(traj.len() / imu_stride + 1);
        for idx in (0..traj.len()).step_by(imu_stride) {
            let s = traj.state(idx);
            imu.push(self.imu.step(
                [0.0, 0.0, s.yaw_rate],
                [s.accel_body[0], s.accel_body[1], 0.0],
                s.t,
            )?);
        }

        let mut gps = Vec::with_capacity(traj.len() / gps_stride + 1);
        for idx in (0..traj.len()).step_by(gps_stride) {
            let s = traj.state(idx);
            let gt_pos = EnuPoint::new(s.pos[0], s.pos[1], 0.0);
            let mut sample = self.gps.step(gt_pos, origin, s.t)?;
            if let CovarianceSource::Hdop { filter } = &mut self.covariance {
                sample.covariance = hdop_covariance(filter.current(), &filter.cfg)?;
                filter.step(gps_dt);
            }
            gps.push(sample);
        }

        Ok(SensorStreams { gps, imu })
    }
}

fn stride_for(sim_rate: f64, sensor_rate: f64) -> Result<usize, SensorError> {
    let ratio = sim_rate / sensor_rate;
    let stride = ratio.round();
    if stride < 1.0 || (ratio - stride).abs() > 1e-6 {
        return Err(SensorError::IncompatibleRate {
            sim_rate_hz: sim_rate,
            sensor_rate_hz: sensor_rate,
        });
    }
    Ok(stride as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesy::lla_to_enu;
    use crate::vehicle::{generate_trajectory, PathKind, Scenario, SpeedProfile};

    fn origin() -> GeoPoint {
        GeoPoint::new(40.0, -105.0, 0.0).unwrap()
    }

    fn quiet_imu() -> ImuConfig {
        ImuConfig {
            gyro_sigma: [0.0; 3],
            accel_sigma: [0.0; 3],
            bias_b0: [0.0; 3],
            ..ImuConfig::default()
        }
    }

    fn standstill_scenario() -> Scenario {
        Scenario {
            name: "line".into(),
            path: PathKind::Line,
            duration_s: 5.0,
            target_speed_mps: 1.0,
            speed_profile: SpeedProfile::Constant,
            origin: origin(),
            sim_rate_hz: 500.0,
        }
    }

    #[test]
    fn imu_noise_disabled_is_exact_passthrough() {
        let mut imu = ImuModel::new(quiet_imu(), 7).unwrap();
        let s = imu.step([0.1, -0.2, 0.3], [1.0, 2.0, 3.0], 0.0).unwrap();
        assert_eq!(s.angular_velocity, [0.1, -0.2, 0.3]);
        assert_eq!(s.linear_acceleration, [1.0, 2.0, 3.0]);
    }

    #[test]
    fn imu_rejects_non_finite_input() {
        let mut imu = ImuModel::new(ImuConfig::default(), 7).unwrap();
        assert!(matches!(
            imu.step([f64::NAN, 0.0, 0.0], [0.0; 3], 0.1),
            Err(SensorError::NonFiniteInput(_))
        ));
    }

    #[test]
    fn imu_streams_are_deterministic() {
        let run = |seed| {
            let mut imu = ImuModel::new(ImuConfig::default(), seed).unwrap();
            (0..200)
                .map(|k| imu.step([0.0; 3], [0.0; 3], k as f64 / 100.0).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn imu_bias_variance_matches_random_walk_oracle() {
        // Monte-Carlo oracle for the bias recursion: after N steps the bias
        // variance is N * (b0 * sqrt(dt/tb))^2. With dt = 0.01, tb = 0.1 and
        // b0 = 1e-4 the per-step sigma is 1e-4 * sqrt(0.1).
        let cfg = ImuConfig {
            gyro_sigma: [0.0; 3],
            accel_sigma: [0.0; 3],
            bias_b0: [1e-4; 3],
            bias_tb: 0.1,
            ..ImuConfig::default()
        };
        let n_steps = 50;
        let trials = 100_000;
        let mut sum_sq = 0.0;
        for trial in 0..trials {
            let mut imu = ImuModel::new(cfg, trial as u64).unwrap();
            let mut last = 0.0;
            for k in 0..n_steps {
                last = imu.step([0.0; 3], [0.0; 3], k as f64 * 0.01).unwrap().angular_velocity[2];
            }
            sum_sq += last * last;
        }
        let measured = sum_sq / trials as f64;
        let expected = n_steps as f64 * (1e-4 * 0.1f64.sqrt()).powi(2);
        assert!(
            (measured - expected).abs() / expected < 0.05,
            "measured {measured:e}, expected {expected:e}"
        );
    }

    #[test]
    fn gauss_gps_sigma_zero_is_passthrough() {
        let cfg = GpsGaussConfig {
            sigma: [0.0; 3],
            rate_hz: 10.0,
        };
        let mut gps = GaussianGps::new(cfg, 1).unwrap();
        let gt = EnuPoint::new(3.0, -4.0, 0.5);
        let s = gps.step(gt, &origin(), 0.0).unwrap();
        assert_eq!(s.position, enu_to_lla(&gt, &origin()).unwrap());
        assert_eq!(s.covariance, ZERO_COVARIANCE);
    }

    #[test]
    fn gauss_gps_empirical_std_matches_sigma() {
        let cfg = GpsGaussConfig {
            sigma: [1.0; 3],
            rate_hz: 10.0,
        };
        let mut gps = GaussianGps::new(cfg, 99).unwrap();
        let gt = EnuPoint::new(0.0, 0.0, 0.0);
        let o = origin();
        let n = 10_000;
        let mut acc = [0.0f64; 3];
        for k in 0..n {
            let s = gps.step(gt, &o, k as f64 * 0.1).unwrap();
            let e = lla_to_enu(&s.position, &o).unwrap();
            acc[0] += e.east * e.east;
            acc[1] += e.north * e.north;
            acc[2] += e.up * e.up;
        }
        for (axis, sum_sq) in acc.iter().enumerate() {
            let std = (sum_sq / n as f64).sqrt();
            assert!((std - 1.0).abs() < 0.05, "axis {axis}: std {std}");
        }
    }

    #[test]
    fn random_walk_zero_noise_is_fixed_point() {
        let cfg = GpsRwConfig {
            sigma_a: [0.0; 3],
            ..GpsRwConfig::default()
        };
        let mut gps = RandomWalkGps::new(cfg, 5).unwrap();
        let gt = EnuPoint::new(1.0, 2.0, 0.0);
        let o = origin();
        for k in 0..100 {
            let s = gps.step(gt, &o, k as f64 * 0.1).unwrap();
            assert_eq!(s.position, enu_to_lla(&gt, &o).unwrap());
        }
        assert_eq!(gps.error_position(), [0.0; 3]);
    }

    #[test]
    fn random_walk_standstill_error_stays_bounded() {
        // Standstill oracle: the mean-reverting gradient keeps the
        // accumulated error at the p_max scale. Report-style assertion: the
        // 99th percentile of |error| per axis stays within an order of
        // magnitude of p_max over 1e5 steps.
        let cfg = GpsRwConfig::default();
        let mut gps = RandomWalkGps::new(cfg, 11).unwrap();
        let gt = EnuPoint::new(0.0, 0.0, 0.0);
        let o = origin();
        let steps = 100_000;
        let mut magnitudes = Vec::with_capacity(steps);
        for k in 0..steps {
            gps.step(gt, &o, k as f64 * 0.1).unwrap();
            magnitudes.push(gps.error_position()[0].abs());
        }
        magnitudes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let p99 = magnitudes[steps * 99 / 100];
        println!("random-walk standstill 99th percentile |error_east| = {p99:.4} m (p_max = {})", cfg.p_max);
        assert!(p99 < 10.0 * cfg.p_max, "99th percentile {p99} m");
    }

    #[test]
    fn random_walk_literal_sign_diverges() {
        // The diverging gradient (+p/p_max) doubles the error every ~0.17 s
        // once noise seeds it; within a few hundred steps it leaves the
        // tangent-plane validity region entirely.
        let cfg = GpsRwConfig {
            literal_gradient_sign: true,
            ..GpsRwConfig::default()
        };
        let mut gps = RandomWalkGps::new(cfg, 11).unwrap();
        let gt = EnuPoint::new(0.0, 0.0, 0.0);
        let o = origin();
        let mut diverged = false;
        for k in 0..500 {
            if gps.step(gt, &o, k as f64 * 0.1).is_err() {
                diverged = true;
                break;
            }
        }
        assert!(diverged, "literal gradient sign should blow past 50 km");
    }

    #[test]
    fn random_walk_is_deterministic() {
        let run = |seed| {
            let mut gps = RandomWalkGps::new(GpsRwConfig::default(), seed).unwrap();
            (0..50)
                .map(|k| gps.step(EnuPoint::new(0.0, 0.0, 0.0), &origin(), k as f64 * 0.1).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn hdop_fixed_point_and_hand_value() {
        let cfg = HdopConfig {
            h0: 100.0,
            h_inf: 1.0,
            tau: 2.0,
            scale: 0.02,
        };
        let mut at_limit = HdopFilter::new(HdopConfig { h0: 1.0, ..cfg }).unwrap();
        assert_eq!(at_limit.step(0.5), 1.0);

        // One step of dt = tau: H1 = e^-1 * 100 + (1 - e^-1) * 1 = 37.420...
        let mut f = HdopFilter::new(cfg).unwrap();
        let h1 = f.step(cfg.tau);
        assert!((h1 - 37.420).abs() < 1e-3, "h1 = {h1}");
    }

    #[test]
    fn hdop_contracts_geometrically() {
        let cfg = HdopConfig::default();
        let mut f = HdopFilter::new(cfg).unwrap();
        let dt = 0.1;
        let alpha = (-dt / cfg.tau).exp();
        let mut h = cfg.h0;
        for _ in 0..2000 {
            let next = f.step(dt);
            let expected_gap = alpha * (h - cfg.h_inf);
            assert!(((next - cfg.h_inf) - expected_gap).abs() <= 1e-12 * cfg.h0);
            h = next;
        }
        assert!((h - cfg.h_inf).abs() < 1e-6);
    }

    #[test]
    fn hdop_covariance_values() {
        let cfg = HdopConfig::default();
        let cov = hdop_covariance(100.0, &cfg).unwrap();
        for (i, row) in cov.iter().enumerate() {
            assert_eq!(row[i], 4.0);
        }
        let cov = hdop_covariance(1.0, &cfg).unwrap();
        for (i, row) in cov.iter().enumerate() {
            assert!((row[i] - 4.0e-4).abs() < 1e-18);
        }
        let zero_scale = HdopConfig { scale: 0.0, ..cfg };
        assert_eq!(hdop_covariance(50.0, &zero_scale).unwrap(), ZERO_COVARIANCE);
        assert!(hdop_covariance(0.0, &cfg).is_err());
    }

    #[test]
    fn airsim_variant_position_is_ground_truth() {
        let params = SensorParams::default();
        let mut rig = SensorRig::new(SensorVariant::AirSim, &params, 1).unwrap();
        let traj = generate_trajectory(&standstill_scenario()).unwrap();
        let o = origin();
        let streams = rig.sample_trajectory(&traj, &o).unwrap();
        for (k, s) in streams.gps.iter().enumerate() {
            let gt = traj.state(k * 50);
            let expected = enu_to_lla(&EnuPoint::new(gt.pos[0], gt.pos[1], 0.0), &o).unwrap();
            assert_eq!(s.position, expected);
        }
    }

    #[test]
    fn ch_gauss_covariance_is_zero_matrix() {
        let params = SensorParams::default();
        let mut rig = SensorRig::new(SensorVariant::ChGauss, &params, 1).unwrap();
        let traj = generate_trajectory(&standstill_scenario()).unwrap();
        let streams = rig.sample_trajectory(&traj, &origin()).unwrap();
        assert!(streams.gps.iter().all(|s| s.covariance == ZERO_COVARIANCE));
    }

    #[test]
    fn ch_rw_airsim_covariance_trace_decreases_to_limit() {
        let params = SensorParams::default();
        let mut rig = SensorRig::new(SensorVariant::ChRwAirSim, &params, 1).unwrap();
        let mut sc = standstill_scenario();
        sc.duration_s = 30.0;
        let traj = generate_trajectory(&sc).unwrap();
        let streams = rig.sample_trajectory(&traj, &origin()).unwrap();
        let trace = |s: &GpsSample| s.covariance[0][0] + s.covariance[1][1] + s.covariance[2][2];
        for w in streams.gps.windows(2) {
            assert!(trace(&w[1]) < trace(&w[0]));
        }
        let limit = 3.0 * (params.hdop.scale * params.hdop.h_inf).powi(2);
        let last = trace(streams.gps.last().unwrap());
        assert!(last > limit && last - limit < 1e-4, "last trace {last}, limit {limit}");
    }

    #[test]
    fn sampling_rates_are_honored() {
        let params = SensorParams::default();
        let mut rig = SensorRig::new(SensorVariant::ChRw, &params, 1).unwrap();
        let traj = generate_trajectory(&standstill_scenario()).unwrap();
        let streams = rig.sample_trajectory(&traj, &origin()).unwrap();
        for w in streams.gps.windows(2) {
            assert!((w[1].t - w[0].t - 0.1).abs() < 1e-9);
        }
        for w in streams.imu.windows(2) {
            assert!((w[1].t - w[0].t - 0.01).abs() < 1e-9);
        }
    }

    #[test]
    fn all_variants_reproduce_ground_truth_with_zero_noise() {
        let params = SensorParams {
            imu: quiet_imu(),
            gps_gauss: GpsGaussConfig {
                sigma: [0.0; 3],
                rate_hz: 10.0,
            },
            gps_rw: GpsRwConfig {
                sigma_a: [0.0; 3],
                ..GpsRwConfig::default()
            },
            hdop: HdopConfig::default(),
        };
        let traj = generate_trajectory(&standstill_scenario()).unwrap();
        let o = origin();
        for variant in SensorVariant::ALL {
            let mut rig = SensorRig::new(variant, &params, 9).unwrap();
            let streams = rig.sample_trajectory(&traj, &o).unwrap();
            for (k, s) in streams.gps.iter().enumerate() {
                let gt = traj.state(k * 50);
                let e = lla_to_enu(&s.position, &o).unwrap();
                let err = (e.east - gt.pos[0]).hypot(e.north - gt.pos[1]);
                assert!(err < 1e-9, "{variant}: GPS error {err}");
            }
            for (k, s) in streams.imu.iter().enumerate() {
                let gt = traj.state(k * 5);
                assert_eq!(s.angular_velocity[2], gt.yaw_rate, "{variant}");
                assert_eq!(s.linear_acceleration[0], gt.accel_body[0], "{variant}");
            }
        }
    }

    #[test]
    fn rig_streams_are_deterministic() {
        let params = SensorParams::default();
        let traj = generate_trajectory(&standstill_scenario()).unwrap();
        let run = |seed| {
            let mut rig = SensorRig::new(SensorVariant::ChGaussAirSim, &params, seed).unwrap();
            rig.sample_trajectory(&traj, &origin()).unwrap()
        };
        assert_eq!(run(123), run(123));
        assert_ne!(run(123).gps, run(124).gps);
    }

    #[test]
    fn incompatible_rate_is_rejected() {
        let params = SensorParams {
            imu: ImuConfig {
                rate_hz: 99.0,
                ..ImuConfig::default()
            },
            ..SensorParams::default()
        };
        let mut rig = SensorRig::new(SensorVariant::AirSim, &params, 1).unwrap();
        let traj = generate_trajectory(&standstill_scenario()).unwrap();
        assert!(matches!(
            rig.sample_trajectory(&traj, &origin()),
            Err(SensorError::IncompatibleRate { .. })
        ));
    }
}
