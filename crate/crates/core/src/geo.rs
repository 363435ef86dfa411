//! Great-circle distance and the local planar projection.
//!
//! The projection is the simple equirectangular approximation around a
//! fixed reference point: one degree of latitude is taken as
//! [`METERS_PER_DEGREE`] meters and longitude is shrunk by `cos(lat0)`.

use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};

/// Mean Earth radius (IUGG), meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Average length of one degree of latitude, meters.
pub const METERS_PER_DEGREE: f64 = 111_319.44;

/// A latitude/longitude pair in degrees.
///
/// [`GeoPoint::new`] rejects out-of-range coordinates. Points produced by
/// [`to_geo`] are not clamped and may be invalid; check [`GeoPoint::is_valid`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        let p = GeoPoint { lat, lon };
        if p.is_valid() {
            Ok(p)
        } else {
            Err(Error::domain(format!("invalid coordinate ({lat}, {lon})")))
        }
    }

    /// Builds a point without range checks.
    pub fn new_unchecked(lat: f64, lon: f64) -> Self {
        GeoPoint { lat, lon }
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    pub fn is_valid(&self) -> bool {
        coords_valid(self.lat, self.lon)
    }
}

/// True when `lat ∈ [-90, 90]` and `lon ∈ [-180, 180]` (NaN is invalid).
pub fn coords_valid(lat: f64, lon: f64) -> bool {
    (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon)
}

/// Planar offset from a reference point, meters east (`x`) and north (`y`).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LocalPoint {
    pub x: f64,
    pub y: f64,
}

impl LocalPoint {
    pub fn new(x: f64, y: f64) -> Self {
        LocalPoint { x, y }
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(&self, other: &LocalPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Origin of the local projection. Fixed for a whole dataset or experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceFrame {
    origin: GeoPoint,
    cos_lat0: f64,
}

impl ReferenceFrame {
    pub fn new(lat0: f64, lon0: f64) -> Result<Self> {
        let origin = GeoPoint::new(lat0, lon0)?;
        Ok(ReferenceFrame { origin, cos_lat0: lat0.to_radians().cos() })
    }

    pub fn lat0(&self) -> f64 {
        self.origin.lat
    }

    pub fn lon0(&self) -> f64 {
        self.origin.lon
    }
}

/// Haversine distance on raw degree values, no validation.
pub(crate) fn haversine_raw(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let phi1 = lat1.to_radians();
    let phi2 = lat2.to_radians();
    let s_dphi = ((phi2 - phi1) * 0.5).sin();
    let s_dlam = ((lon2 - lon1).to_radians() * 0.5).sin();
    let h = s_dphi * s_dphi + phi1.cos() * phi2.cos() * s_dlam * s_dlam;
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Great-circle distance between two valid points, meters.
pub fn haversine_m(a: &GeoPoint, b: &GeoPoint) -> Result<f64> {
    for p in [a, b] {
        if !p.is_valid() {
            return Err(Error::domain(format!("haversine of invalid coordinate ({}, {})", p.lat, p.lon)));
        }
    }
    Ok(haversine_raw(a.lat, a.lon, b.lat, b.lon))
}

pub fn to_local(frame: &ReferenceFrame, p: &GeoPoint) -> LocalPoint {
    LocalPoint {
        x: METERS_PER_DEGREE * frame.cos_lat0 * (p.lon - frame.origin.lon),
        y: METERS_PER_DEGREE * (p.lat - frame.origin.lat),
    }
}

/// Inverse of [`to_local`]. The result is not range-checked.
pub fn to_geo(frame: &ReferenceFrame, p: &LocalPoint) -> GeoPoint {
    GeoPoint {
        lat: frame.origin.lat + p.y / METERS_PER_DEGREE,
        lon: frame.origin.lon + p.x / (METERS_PER_DEGREE * frame.cos_lat0),
    }
}

/// Moves `distance` meters from `from` along `bearing` (radians,
/// counter-clockwise from east).
pub fn polar_step(from: &LocalPoint, distance: f64, bearing: f64) -> Result<LocalPoint> {
    if !(distance >= 0.0) {
        return Err(Error::domain(format!("negative step distance {distance}")));
    }
    Ok(LocalPoint { x: from.x + distance * bearing.cos(), y: from.y + distance * bearing.sin() })
}

/// Distance and bearing in `[0, 2π)` from `a` to `b`. Bearing is 0 when the
/// points coincide.
pub fn polar_between(a: &LocalPoint, b: &LocalPoint) -> (f64, f64) {
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    let d = dx.hypot(dy);
    if d == 0.0 {
        return (0.0, 0.0);
    }
    let mut theta = dy.atan2(dx);
    if theta < 0.0 {
        theta += TAU;
    }
    if theta >= TAU {
        theta -= TAU;
    }
    (d, theta)
}

/// Shortest angular separation of two bearings, in `[0, π]`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        TAU - d
    } else {
        d
    }
}
