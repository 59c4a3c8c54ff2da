//! Geometric primitives: great-circle distance and progress along a
//! stop-to-stop segment.
//!
//! Segments are straight lines between consecutive stops. Progress is
//! computed in a local equirectangular plane centered at the segment start;
//! at city scale (< 3 km segments) the planar error is negligible.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Two segment endpoints closer than this are considered coincident.
pub const DEGENERATE_SEGMENT_M: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("longitude {0} outside [-180, 180]")]
    LongitudeOutOfRange(f64),
    #[error("coordinate is not finite")]
    NonFiniteCoordinate,
    #[error("segment endpoints coincide within {DEGENERATE_SEGMENT_M} m")]
    DegenerateSegment,
}

/// A geographic coordinate in degrees.
#[derive(Debug, Copy, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    /// Validating constructor: finite values, lat in [-90, 90], lon in [-180, 180].
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(GeoError::NonFiniteCoordinate);
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::LatitudeOutOfRange(lat));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(GeoError::LongitudeOutOfRange(lon));
        }
        Ok(Self { lat, lon })
    }
}

/// Haversine great-circle distance in meters on a sphere of radius
/// [`EARTH_RADIUS_M`].
pub fn haversine(a: GeoPoint, b: GeoPoint) -> f64 {
    let d_lat = (b.lat - a.lat).to_radians();
    let d_lon = (b.lon - a.lon).to_radians();
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();

    let h = (d_lat * 0.5).sin().powi(2)
        + lat1.cos() * lat2.cos() * (d_lon * 0.5).sin().powi(2);
    let c = 2.0 * h.sqrt().atan2((1.0 - h).sqrt());
    EARTH_RADIUS_M * c
}

/// Local equirectangular projection of `p` relative to `origin`, in meters.
fn to_local_plane(p: GeoPoint, origin: GeoPoint) -> (f64, f64) {
    let x = (p.lon - origin.lon).to_radians() * origin.lat.to_radians().cos() * EARTH_RADIUS_M;
    let y = (p.lat - origin.lat).to_radians() * EARTH_RADIUS_M;
    (x, y)
}

/// Fraction of the segment `seg_start → seg_end` covered by the orthogonal
/// projection of `p`, clamped to `[0, 1]`.
///
/// Returns [`GeoError::DegenerateSegment`] when the endpoints coincide
/// within [`DEGENERATE_SEGMENT_M`].
pub fn segment_progress(p: GeoPoint, seg_start: GeoPoint, seg_end: GeoPoint) -> Result<f64, GeoError> {
    if haversine(seg_start, seg_end) < DEGENERATE_SEGMENT_M {
        return Err(GeoError::DegenerateSegment);
    }
    let (px, py) = to_local_plane(p, seg_start);
    let (ex, ey) = to_local_plane(seg_end, seg_start);
    let len_sq = ex * ex + ey * ey;
    let t = (px * ex + py * ey) / len_sq;
    Ok(t.clamp(0.0, 1.0))
}

/// Distance in meters from `p` to the segment `seg_start → seg_end`
/// (to the nearest point of the segment, endpoints included).
pub fn distance_to_segment(p: GeoPoint, seg_start: GeoPoint, seg_end: GeoPoint) -> Result<f64, GeoError> {
    let t = segment_progress(p, seg_start, seg_end)?;
    let nearest = point_along(seg_start, seg_end, t);
    Ok(haversine(p, nearest))
}

/// Point at fraction `t` of the straight segment, linear in lat/lon.
pub fn point_along(seg_start: GeoPoint, seg_end: GeoPoint, t: f64) -> GeoPoint {
    GeoPoint {
        lat: seg_start.lat + (seg_end.lat - seg_start.lat) * t,
        lon: seg_start.lon + (seg_end.lon - seg_start.lon) * t,
    }
}
