//! GPS/IMU sensor simulation, EKF velocity estimation, and the VEPD
//! sim2real gap metric.
//!
//! The crate simulates GPS and IMU streams over scripted vehicle
//! trajectories, fuses them through a planar EKF "judge" into velocity
//! estimates, and quantifies the gap between any two populations of runs
//! with the VEPD score: per-run speed RMSE and Wiener-entropy signatures
//! compared via exact 1-D Wasserstein distances.
//!
//! Module map:
//!
//! * [`timeseries`] - timestamped sample containers, resampling, alignment.
//! * [`geodesy`] - lat/lon/alt <-> local East-North-Up conversions.
//! * [`vehicle`] - scripted kinematic ground-truth trajectories.
//! * [`sensors`] - the IMU noise model and five GPS sensor variants.
//! * [`estimator`] - the planar EKF judge producing 35 Hz velocity estimates.
//! * [`metrics`] - RMSE, Wiener entropy, Wasserstein distance, VEPD.
//! * [`dataset`] - JSONL run-log persistence and GPS replay mixing.
//! * [`experiment`] - population orchestration, reports, determinism.

pub mod dataset;
pub mod estimator;
pub mod experiment;
pub mod geodesy;
pub mod metrics;
pub mod sensors;
pub mod timeseries;
pub mod vehicle;

pub use dataset::{load_run, replay_mix, save_run, RunLog, RunLogMeta};
pub use estimator::{run_estimator, EkfConfig, EstimatorState};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentReport};
pub use geodesy::{enu_to_lla, lla_to_enu, EnuPoint, GeoPoint};
pub use metrics::{
    entropy_diff, rmse, vepd, wasserstein_1d, wiener_entropy, RunPopulation, RunScore, VepdReport,
};
pub use sensors::{
    GpsSample, ImuSample, SensorParams, SensorRig, SensorStreams, SensorVariant,
};
pub use timeseries::{resample_linear, speed_magnitude, AlignedPair, TimeSeries, Unit};
pub use vehicle::{generate_trajectory, GroundTruthTrajectory, PathKind, Scenario, SpeedProfile};
