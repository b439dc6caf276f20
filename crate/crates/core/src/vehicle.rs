//! Scripted kinematic ground-truth trajectories.
//!
//! Three path shapes (straight line, circle, half-sine lane change) are
//! traversed at a configurable speed profile. Velocity is the analytic time
//! derivative of position and the body-frame channels are analytically
//! consistent with the path geometry (for a circle: yaw rate v/R,
//! centripetal acceleration v^2/R). Generation is pure: no randomness, no
//! dynamics, just kinematics sampled on a fixed grid.
//!
//! The default simulation rate of 500 Hz is chosen so the 100 Hz IMU and
//! 10 Hz GPS sampling grids are exact subsamples.

use crate::geodesy::GeoPoint;
use crate::timeseries::{TimeSeries, Unit};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SIM_RATE_HZ: f64 = 500.0;

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("{field}: must be positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("speed_profile.amplitude_mps: |{0}| must be smaller than target_speed_mps")]
    PerturbationTooLarge(f64),
    #[error("ground truth states must have strictly increasing timestamps")]
    NonMonotonic,
    #[error("ground truth trajectory needs at least 2 states")]
    TooShort,
    #[error("non-finite ground truth state at index {0}")]
    NonFinite(usize),
}

/// Path geometry followed by the vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathKind {
    Line,
    Circle { radius_m: f64 },
    HalfSine { amplitude_m: f64, wavelength_m: f64 },
}

/// Speed along the path as a function of time.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum SpeedProfile {
    /// Hold the target speed for the whole run.
    #[default]
    Constant,
    /// Linear ramp from standstill to the target over `t_ramp_s`.
    Ramp { t_ramp_s: f64 },
    /// Sinusoidal speed variation around the target, emulating
    /// terrain-induced speed changes.
    Perturbed { amplitude_mps: f64, period_s: f64 },
}

fn default_origin() -> GeoPoint {
    GeoPoint {
        lat_deg: 40.0,
        lon_deg: -105.0,
        alt_m: 0.0,
    }
}

fn default_sim_rate() -> f64 {
    DEFAULT_SIM_RATE_HZ
}

/// One scripted test scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(flatten)]
    pub path: PathKind,
    pub duration_s: f64,
    pub target_speed_mps: f64,
    #[serde(default)]
    pub speed_profile: SpeedProfile,
    #[serde(default = "default_origin")]
    pub origin: GeoPoint,
    #[serde(default = "default_sim_rate")]
    pub sim_rate_hz: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let positive = |field, value: f64| {
            if value.is_finite() && value > 0.0 {
                Ok(())
            } else {
                Err(ScenarioError::NonPositive { field, value })
            }
        };
        positive("duration_s", self.duration_s)?;
        positive("target_speed_mps", self.target_speed_mps)?;
        positive("sim_rate_hz", self.sim_rate_hz)?;
        match self.path {
            PathKind::Line => {}
            PathKind::Circle { radius_m } => positive("radius_m", radius_m)?,
            PathKind::HalfSine { wavelength_m, .. } => positive("wavelength_m", wavelength_m)?,
        }
        match self.speed_profile {
            SpeedProfile::Constant => {}
            SpeedProfile::Ramp { t_ramp_s } => positive("speed_profile.t_ramp_s", t_ramp_s)?,
            SpeedProfile::Perturbed {
                amplitude_mps,
                period_s,
            } => {
                positive("speed_profile.period_s", period_s)?;
                if amplitude_mps.abs() >= self.target_speed_mps {
                    return Err(ScenarioError::PerturbationTooLarge(amplitude_mps));
                }
            }
        }
        Ok(())
    }

    /// Speed along the path at time t.
    fn speed(&self, t: f64) -> f64 {
        let v = self.target_speed_mps;
        match self.speed_profile {
            SpeedProfile::Constant => v,
            SpeedProfile::Ramp { t_ramp_s } => v * (t / t_ramp_s).min(1.0),
            SpeedProfile::Perturbed {
                amplitude_mps,
                period_s,
            } => v + amplitude_mps * (2.0 * std::f64::consts::PI * t / period_s).sin(),
        }
    }

    /// Time derivative of the speed profile.
    fn accel_along(&self, t: f64) -> f64 {
        let v = self.target_speed_mps;
        match self.speed_profile {
            SpeedProfile::Constant => 0.0,
            SpeedProfile::Ramp { t_ramp_s } => {
                if t < t_ramp_s {
                    v / t_ramp_s
                } else {
                    0.0
                }
            }
            SpeedProfile::Perturbed {
                amplitude_mps,
                period_s,
            } => {
                let w = 2.0 * std::f64::consts::PI / period_s;
                amplitude_mps * w * (w * t).cos()
            }
        }
    }

    /// Arc length travelled by time t (closed-form integral of the profile).
    fn arc_length(&self, t: f64) -> f64 {
        let v = self.target_speed_mps;
        match self.speed_profile {
            SpeedProfile::Constant => v * t,
            SpeedProfile::Ramp { t_ramp_s } => {
                if t < t_ramp_s {
                    v * t * t / (2.0 * t_ramp_s)
                } else {
                    v * (t_ramp_s / 2.0 + (t - t_ramp_s))
                }
            }
            SpeedProfile::Perturbed {
                amplitude_mps,
                period_s,
            } => {
                let w = 2.0 * std::f64::consts::PI / period_s;
                v * t + amplitude_mps / w * (1.0 - (w * t).cos())
            }
        }
    }
}

/// Ground-truth kinematic state at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthState {
    pub t: f64,
    /// Planar position [east, north] in meters relative to the run origin.
    pub pos: [f64; 2],
    /// Heading, radians, continuous (unwrapped).
    pub yaw: f64,
    /// World-frame velocity [east, north], m/s.
    pub vel: [f64; 2],
    /// Body-frame proper acceleration [forward, left], m/s^2.
    pub accel_body: [f64; 2],
    /// rad/s.
    pub yaw_rate: f64,
}

/// Ground-truth trajectory sampled on a fixed grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthTrajectory {
    states: Vec<GroundTruthState>,
}

impl GroundTruthTrajectory {
    pub fn from_states(states: Vec<GroundTruthState>) -> Result<Self, ScenarioError> {
        if states.len() < 2 {
            return Err(ScenarioError::TooShort);
        }
        for (i, s) in states.iter().enumerate() {
            let finite = s.t.is_finite()
                && s.pos.iter().all(|v| v.is_finite())
                && s.yaw.is_finite()
                && s.vel.iter().all(|v| v.is_finite())
                && s.accel_body.iter().all(|v| v.is_finite())
                && s.yaw_rate.is_finite();
            if !finite {
                return Err(ScenarioError::NonFinite(i));
            }
        }
        if states.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(ScenarioError::NonMonotonic);
        }
        Ok(Self { states })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[GroundTruthState] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &GroundTruthState {
        &self.states[i]
    }

    pub fn start_time(&self) -> f64 {
        self.states[0].t
    }

    pub fn end_time(&self) -> f64 {
        self.states[self.states.len() - 1].t
    }

    /// Linearly interpolated state at time t (clamped to the span).
    pub fn state_at(&self, t: f64) -> GroundTruthState {
        let states = &self.states;
        if t <= states[0].t {
            return states[0];
        }
        if t >= states[states.len() - 1].t {
            return states[states.len() - 1];
        }
        let idx = states.partition_point(|s| s.t < t);
        let (a, b) = (&states[idx - 1], &states[idx]);
        if b.t == t {
            return *b;
        }
        let w = (t - a.t) / (b.t - a.t);
        let lerp = |x: f64, y: f64| x + (y - x) * w;
        GroundTruthState {
            t,
            pos: [lerp(a.pos[0], b.pos[0]), lerp(a.pos[1], b.pos[1])],
            yaw: lerp(a.yaw, b.yaw),
            vel: [lerp(a.vel[0], b.vel[0]), lerp(a.vel[1], b.vel[1])],
            accel_body: [
                lerp(a.accel_body[0], b.accel_body[0]),
                lerp(a.accel_body[1], b.accel_body[1]),
            ],
            yaw_rate: lerp(a.yaw_rate, b.yaw_rate),
        }
    }

    /// World-frame velocity as a 2-D series.
    pub fn velocity_series(&self) -> TimeSeries {
        let ts = self.states.iter().map(|s| s.t).collect();
        let data = self.states.iter().flat_map(|s| s.vel).collect();
        TimeSeries::new(ts, data, 2, Unit::MetersPerSecond).expect("trajectory invariants")
    }

    /// Horizontal ground speed as a 1-D series.
    pub fn speed_series(&self) -> TimeSeries {
        let ts = self.states.iter().map(|s| s.t).collect();
        let data = self
            .states
            .iter()
            .map(|s| s.vel[0].hypot(s.vel[1]))
            .collect();
        TimeSeries::scalar(ts, data, Unit::MetersPerSecond).expect("trajectory invariants")
    }

    /// Keep every `stride`-th state (used to log ground truth at INS-like
    /// rates instead of the full simulation rate).
    pub fn decimate(&self, stride: usize) -> Self {
        let stride = stride.max(1);
        Self {
            states: self.states.iter().copied().step_by(stride).collect(),
        }
    }
}

/// Generate the ground-truth trajectory for a scenario.
pub fn generate_trajectory(scenario: &Scenario) -> Result<GroundTruthTrajectory, ScenarioError> {
    scenario.validate()?;
    let rate = scenario.sim_rate_hz;
    let n_steps = (scenario.duration_s * rate).round() as usize;
    let mut states = Vec::with_capacity(n_steps + 1);

    match scenario.path {
        PathKind::Line => {
            for j in 0..=n_steps {
                let t = j as f64 / rate;
                let (v, a, s) = (scenario.speed(t), scenario.accel_along(t), scenario.arc_length(t));
                states.push(GroundTruthState {
                    t,
                    pos: [s, 0.0],
                    yaw: 0.0,
                    vel: [v, 0.0],
                    accel_body: [a, 0.0],
                    yaw_rate: 0.0,
                });
            }
        }
        PathKind::Circle { radius_m: r } => {
            // Counter-clockwise circle entered tangentially heading east.
            for j in 0..=n_steps {
                let t = j as f64 / rate;
                let (v, a, s) = (scenario.speed(t), scenario.accel_along(t), scenario.arc_length(t));
                let theta = s / r;
                states.push(GroundTruthState {
                    t,
                    pos: [r * theta.sin(), r * (1.0 - theta.cos())],
                    yaw: theta,
                    vel: [v * theta.cos(), v * theta.sin()],
                    accel_body: [a, v * v / r],
                    yaw_rate: v / r,
                });
            }
        }
        PathKind::HalfSine {
            amplitude_m,
            wavelength_m,
        } => {
            let path = HalfSinePath {
                amplitude: amplitude_m,
                half_wavelength: wavelength_m,
            };
            // Baseline progress obeys dx/dt = v(t) / sqrt(1 + y'(x)^2) so the
            // path speed matches the profile exactly; integrate with RK4.
            let h = 1.0 / rate;
            let mut x = 0.0f64;
            for j in 0..=n_steps {
                let t = j as f64 / rate;
                states.push(path.state(scenario, x, t));
                let f = |x: f64, t: f64| scenario.speed(t) / (1.0 + path.slope(x).powi(2)).sqrt();
                let k1 = f(x, t);
                let k2 = f(x + 0.5 * h * k1, t + 0.5 * h);
                let k3 = f(x + 0.5 * h * k2, t + 0.5 * h);
                let k4 = f(x + h * k3, t + h);
                x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
        }
    }

    GroundTruthTrajectory::from_states(states)
}

/// Half-sine lane-change geometry: lateral offset y = A sin(pi x / L) for
/// x in [0, L], continued straight (matching slope, zero curvature) beyond
/// the arch. The joint is C2 because y'' vanishes at x = 0 and x = L.
struct HalfSinePath {
    amplitude: f64,
    half_wavelength: f64,
}

impl HalfSinePath {
    fn offset(&self, x: f64) -> f64 {
        let l = self.half_wavelength;
        if x <= l {
            self.amplitude * (std::f64::consts::PI * x / l).sin()
        } else {
            (x - l) * self.slope(l)
        }
    }

    fn slope(&self, x: f64) -> f64 {
        let l = self.half_wavelength;
        let k = std::f64::consts::PI / l;
        if x <= l {
            self.amplitude * k * (k * x).cos()
        } else {
            -self.amplitude * k
        }
    }

    fn second_derivative(&self, x: f64) -> f64 {
        let l = self.half_wavelength;
        let k = std::f64::consts::PI / l;
        if x <= l {
            -self.amplitude * k * k * (k * x).sin()
        } else {
            0.0
        }
    }

    fn state(&self, scenario: &Scenario, x: f64, t: f64) -> GroundTruthState {
        let (v, a) = (scenario.speed(t), scenario.accel_along(t));
        let yp = self.slope(x);
        let norm = (1.0 + yp * yp).sqrt();
        let (cos_yaw, sin_yaw) = (1.0 / norm, yp / norm);
        let curvature = self.second_derivative(x) / (norm * norm * norm);
        GroundTruthState {
            t,
            pos: [x, self.offset(x)],
            yaw: yp.atan(),
            vel: [v * cos_yaw, v * sin_yaw],
            accel_body: [a, v * v * curvature],
            yaw_rate: v * curvature,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(path: PathKind) -> Scenario {
        Scenario {
            name: "test".into(),
            path,
            duration_s: 10.0,
            target_speed_mps: 2.0,
            speed_profile: SpeedProfile::Constant,
            origin: default_origin(),
            sim_rate_hz: 500.0,
        }
    }

    #[test]
    fn line_uniform_motion() {
        let traj = generate_trajectory(&scenario(PathKind::Line)).unwrap();
        let last = traj.states().last().unwrap();
        assert!((last.pos[0] - 20.0).abs() < 1e-9);
        assert_eq!(last.pos[1], 0.0);
        assert!(traj.states().iter().all(|s| s.yaw_rate == 0.0));
    }

    #[test]
    fn circle_centripetal_consistency() {
        // v^2/R = 0.8 m/s^2 and v/R = 0.4 rad/s for R = 5 m, v = 2 m/s.
        let traj = generate_trajectory(&scenario(PathKind::Circle { radius_m: 5.0 })).unwrap();
        for s in traj.states() {
            assert!((s.accel_body[1] - 0.8).abs() < 1e-12);
            assert!((s.yaw_rate - 0.4).abs() < 1e-12);
            assert!((s.pos[0].powi(2) + (s.pos[1] - 5.0).powi(2)).sqrt() - 5.0 < 1e-9);
        }
    }

    #[test]
    fn half_sine_geometry() {
        // Oracle: y = A sin(pi x / L) evaluated at x = L/2 gives A; the
        // offset returns to 0 at x = L; the heading deviations at the two
        // arch endpoints are atan(+-A*pi/L), equal and opposite.
        let (a, l) = (2.0, 20.0);
        let mut sc = scenario(PathKind::HalfSine {
            amplitude_m: a,
            wavelength_m: l,
        });
        sc.duration_s = 12.0; // long enough to pass the arch end
        let traj = generate_trajectory(&sc).unwrap();

        let at_mid = traj
            .states()
            .iter()
            .min_by(|p, q| {
                (p.pos[0] - l / 2.0)
                    .abs()
                    .partial_cmp(&(q.pos[0] - l / 2.0).abs())
                    .unwrap()
            })
            .unwrap();
        assert!((at_mid.pos[1] - a).abs() < 1e-3, "mid offset {}", at_mid.pos[1]);

        let at_end = traj
            .states()
            .iter()
            .min_by(|p, q| {
                (p.pos[0] - l)
                    .abs()
                    .partial_cmp(&(q.pos[0] - l).abs())
                    .unwrap()
            })
            .unwrap();
        assert!(at_end.pos[1].abs() < 1e-3, "end offset {}", at_end.pos[1]);

        let expected = (a * std::f64::consts::PI / l).atan();
        assert!((traj.state(0).yaw - expected).abs() < 1e-9);
        assert!((at_end.yaw + expected).abs() < 1e-3);
    }

    #[test]
    fn ramp_profile_accelerates_then_holds() {
        let mut sc = scenario(PathKind::Line);
        sc.speed_profile = SpeedProfile::Ramp { t_ramp_s: 4.0 };
        let traj = generate_trajectory(&sc).unwrap();
        let at = |t: f64| traj.state_at(t);
        assert!((at(2.0).vel[0] - 1.0).abs() < 1e-9);
        assert!((at(2.0).accel_body[0] - 0.5).abs() < 1e-9);
        assert!((at(6.0).vel[0] - 2.0).abs() < 1e-9);
        assert_eq!(at(6.0).accel_body[0], 0.0);
        // distance: v*t_ramp/2 during the ramp, then v*(t - t_ramp)
        assert!((at(4.0).pos[0] - 4.0).abs() < 1e-9);
        assert!((at(10.0).pos[0] - 16.0).abs() < 1e-9);
    }

    #[test]
    fn speed_matches_constant_profile_exactly() {
        for path in [
            PathKind::Line,
            PathKind::Circle { radius_m: 5.0 },
            PathKind::HalfSine {
                amplitude_m: 2.0,
                wavelength_m: 20.0,
            },
        ] {
            let traj = generate_trajectory(&scenario(path)).unwrap();
            for s in traj.states() {
                let speed = s.vel[0].hypot(s.vel[1]);
                assert!((speed - 2.0).abs() < 1e-9, "{path:?}: speed {speed}");
            }
        }
    }

    #[test]
    fn position_integrates_velocity() {
        // Trapezoidal integral of the velocity channel must reproduce the
        // position channel within 1e-6 m over the whole run.
        for path in [
            PathKind::Line,
            PathKind::Circle { radius_m: 5.0 },
            PathKind::HalfSine {
                amplitude_m: 2.0,
                wavelength_m: 20.0,
            },
        ] {
            let mut sc = scenario(path);
            sc.speed_profile = SpeedProfile::Perturbed {
                amplitude_mps: 0.3,
                period_s: 2.0,
            };
            let traj = generate_trajectory(&sc).unwrap();
            let mut integral = traj.state(0).pos;
            for w in traj.states().windows(2) {
                let dt = w[1].t - w[0].t;
                integral[0] += 0.5 * (w[0].vel[0] + w[1].vel[0]) * dt;
                integral[1] += 0.5 * (w[0].vel[1] + w[1].vel[1]) * dt;
                let err = (integral[0] - w[1].pos[0]).hypot(integral[1] - w[1].pos[1]);
                assert!(err < 1e-6, "{path:?}: drift {err} at t={}", w[1].t);
            }
        }
    }

    #[test]
    fn finite_difference_velocity_matches_channel() {
        for path in [
            PathKind::Line,
            PathKind::Circle { radius_m: 5.0 },
            PathKind::HalfSine {
                amplitude_m: 2.0,
                wavelength_m: 20.0,
            },
        ] {
            let traj = generate_trajectory(&scenario(path)).unwrap();
            let states = traj.states();
            for i in 1..states.len() - 1 {
                let dt = states[i + 1].t - states[i - 1].t;
                for d in 0..2 {
                    let fd = (states[i + 1].pos[d] - states[i - 1].pos[d]) / dt;
                    assert!(
                        (fd - states[i].vel[d]).abs() < 1e-3,
                        "{path:?}: axis {d} at i={i}"
                    );
                }
            }
        }
    }

    #[test]
    fn yaw_is_continuous() {
        let mut sc = scenario(PathKind::Circle { radius_m: 2.0 });
        sc.duration_s = 20.0; // several revolutions
        let traj = generate_trajectory(&sc).unwrap();
        for w in traj.states().windows(2) {
            assert!((w[1].yaw - w[0].yaw).abs() < std::f64::consts::PI);
        }
    }

    #[test]
    fn determinism() {
        let sc = scenario(PathKind::HalfSine {
            amplitude_m: 2.0,
            wavelength_m: 20.0,
        });
        assert_eq!(
            generate_trajectory(&sc).unwrap(),
            generate_trajectory(&sc).unwrap()
        );
    }

    #[test]
    fn validation_reports_field() {
        let mut sc = scenario(PathKind::Circle { radius_m: -1.0 });
        let err = sc.validate().unwrap_err();
        assert_eq!(
            err,
            ScenarioError::NonPositive {
                field: "radius_m",
                value: -1.0
            }
        );
        sc = scenario(PathKind::Line);
        sc.duration_s = 0.0;
        assert!(matches!(
            sc.validate(),
            Err(ScenarioError::NonPositive { field: "duration_s", .. })
        ));
    }
}
