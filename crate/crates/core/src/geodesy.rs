//! Geodetic <-> local East-North-Up conversions.
//!
//! GPS models emit latitude/longitude while the estimator works in meters,
//! so every run declares an origin and projects onto the local tangent
//! plane there. The projection scales longitude by the prime-vertical
//! radius and latitude by the meridional radius of the WGS-84 ellipsoid at
//! the origin, which keeps the pair of conversions exactly invertible.
//! Valid for the short baselines used here; conversions beyond 50 km from
//! the origin are rejected.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// WGS-84 semi-major axis, meters.
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS-84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;
/// WGS-84 first eccentricity squared, e^2 = f(2 - f).
pub const WGS84_E2: f64 = WGS84_F * (2.0 - WGS84_F);

/// Horizontal distance beyond which the tangent-plane model is rejected.
pub const TANGENT_PLANE_LIMIT_M: f64 = 50_000.0;

#[derive(Debug, Error, PartialEq)]
pub enum GeodesyError {
    #[error("latitude {0} out of range [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("longitude {0} out of range (-180, 180]")]
    LongitudeOutOfRange(f64),
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("point is {0:.0} m from origin, outside tangent-plane validity (50 km)")]
    OutsideTangentPlane(f64),
}

/// Geodetic position on the WGS-84 ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub alt_m: f64,
}

impl GeoPoint {
    pub fn new(lat_deg: f64, lon_deg: f64, alt_m: f64) -> Result<Self, GeodesyError> {
        if !lat_deg.is_finite() || !lon_deg.is_finite() || !alt_m.is_finite() {
            return Err(GeodesyError::NonFinite);
        }
        if !(-90.0..=90.0).contains(&lat_deg) {
            return Err(GeodesyError::LatitudeOutOfRange(lat_deg));
        }
        if lon_deg <= -180.0 || lon_deg > 180.0 {
            return Err(GeodesyError::LongitudeOutOfRange(lon_deg));
        }
        Ok(Self {
            lat_deg,
            lon_deg,
            alt_m,
        })
    }
}

/// Cartesian offset from a declared [`GeoPoint`] origin, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnuPoint {
    pub east: f64,
    pub north: f64,
    pub up: f64,
}

impl EnuPoint {
    pub fn new(east: f64, north: f64, up: f64) -> Self {
        Self { east, north, up }
    }

    pub fn horizontal_norm(&self) -> f64 {
        self.east.hypot(self.north)
    }
}

/// Meridional radius of curvature at geodetic latitude (radians).
fn meridional_radius(lat_rad: f64) -> f64 {
    let s2 = lat_rad.sin().powi(2);
    WGS84_A * (1.0 - WGS84_E2) / (1.0 - WGS84_E2 * s2).powf(1.5)
}

/// Prime-vertical radius of curvature at geodetic latitude (radians).
fn prime_vertical_radius(lat_rad: f64) -> f64 {
    let s2 = lat_rad.sin().powi(2);
    WGS84_A / (1.0 - WGS84_E2 * s2).sqrt()
}

/// Per-axis scale factors (meters per radian of lat/lon) at the origin.
fn tangent_scales(origin: &GeoPoint) -> (f64, f64) {
    let lat = origin.lat_deg.to_radians();
    let east_scale = (prime_vertical_radius(lat) + origin.alt_m) * lat.cos();
    let north_scale = meridional_radius(lat) + origin.alt_m;
    (east_scale, north_scale)
}

/// Project a geodetic point onto the local tangent plane at `origin`.
pub fn lla_to_enu(p: &GeoPoint, origin: &GeoPoint) -> Result<EnuPoint, GeodesyError> {
    let (east_scale, north_scale) = tangent_scales(origin);
    let enu = EnuPoint::new(
        (p.lon_deg - origin.lon_deg).to_radians() * east_scale,
        (p.lat_deg - origin.lat_deg).to_radians() * north_scale,
        p.alt_m - origin.alt_m,
    );
    let d = enu.horizontal_norm();
    if d > TANGENT_PLANE_LIMIT_M {
        return Err(GeodesyError::OutsideTangentPlane(d));
    }
    Ok(enu)
}

/// Inverse of [`lla_to_enu`] under the same tangent-plane model.
pub fn enu_to_lla(e: &EnuPoint, origin: &GeoPoint) -> Result<GeoPoint, GeodesyError> {
    let d = e.horizontal_norm();
    if d > TANGENT_PLANE_LIMIT_M {
        return Err(GeodesyError::OutsideTangentPlane(d));
    }
    let (east_scale, north_scale) = tangent_scales(origin);
    GeoPoint::new(
        origin.lat_deg + (e.north / north_scale).to_degrees(),
        origin.lon_deg + (e.east / east_scale).to_degrees(),
        origin.alt_m + e.up,
    )
}
