//! Shared geodesic primitives: the local planar projection and great-circle
//! distances, both on a spherical earth of radius [`EARTH_RADIUS_M`].

use crate::error::{Error, Result};

/// Mean earth radius in meters, shared by the projection and haversine paths.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Largest latitude/longitude span (degrees) the local projection accepts.
/// Beyond city scale the equirectangular approximation degrades.
pub const MAX_PROJECTION_SPAN_DEG: f64 = 2.0;

/// A point in the local planar frame, meters east (`x`) and north (`y`) of
/// the region origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarPoint {
    pub x: f64,
    pub y: f64,
}

impl PlanarPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &PlanarPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Local equirectangular projection of a WGS84 coordinate onto the plane
/// anchored at `(origin_lat, origin_lon)`:
///
/// ```text
/// x = R·cos(origin_lat)·Δlon   y = R·Δlat     (angles in radians)
/// ```
///
/// Valid only at city scale; spans above [`MAX_PROJECTION_SPAN_DEG`] degrees
/// are rejected.
pub fn project(lat: f64, lon: f64, origin_lat: f64, origin_lon: f64) -> Result<PlanarPoint> {
    if !(-90.0..=90.0).contains(&lat) || !(-90.0..=90.0).contains(&origin_lat) {
        return Err(Error::Argument(format!(
            "latitude out of range: {lat} (origin {origin_lat})"
        )));
    }
    if !(-180.0..=180.0).contains(&lon) || !(-180.0..=180.0).contains(&origin_lon) {
        return Err(Error::Argument(format!(
            "longitude out of range: {lon} (origin {origin_lon})"
        )));
    }
    let dlat = lat - origin_lat;
    let dlon = lon - origin_lon;
    if dlat.abs() > MAX_PROJECTION_SPAN_DEG || dlon.abs() > MAX_PROJECTION_SPAN_DEG {
        return Err(Error::ProjectionDomain(format!(
            "point ({lat}, {lon}) is more than {MAX_PROJECTION_SPAN_DEG} degrees from \
             origin ({origin_lat}, {origin_lon})"
        )));
    }
    let x = EARTH_RADIUS_M * origin_lat.to_radians().cos() * dlon.to_radians();
    let y = EARTH_RADIUS_M * dlat.to_radians();
    Ok(PlanarPoint { x, y })
}

/// Inverse of [`project`]; used when exporting grid geometry back to WGS84.
pub fn unproject(p: PlanarPoint, origin_lat: f64, origin_lon: f64) -> (f64, f64) {
    let lat = origin_lat + (p.y / EARTH_RADIUS_M).to_degrees();
    let lon = origin_lon + (p.x / (EARTH_RADIUS_M * origin_lat.to_radians().cos())).to_degrees();
    (lat, lon)
}

/// Great-circle distance in meters between two WGS84 coordinates (haversine).
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let phi1 = lat1.to_radians();
    let phi2 = lat2.to_radians();
    let dphi = (lat2 - lat1).to_radians();
    let dlambda = (lon2 - lon1).to_radians();

    let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().asin()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn project_origin_is_zero() {
        let p = project(40.75, -73.98, 40.75, -73.98).unwrap();
        assert_eq!(p.x, 0.0);
        assert_eq!(p.y, 0.0);
    }

    #[test]
    fn project_hundredth_degree_north() {
        // R * 0.01 deg in radians = 1111.9949 m
        let p = project(40.76, -73.98, 40.75, -73.98).unwrap();
        assert_relative_eq!(p.y, 1111.9949, max_relative = 1e-4);
        assert_eq!(p.x, 0.0);
    }

    #[test]
    fn project_hundredth_degree_east_at_40_75() {
        // R * cos(40.75 deg) * 0.01 deg in radians = 842.35 m
        let p = project(40.75, -73.97, 40.75, -73.98).unwrap();
        assert_relative_eq!(p.x, 842.35, max_relative = 1e-3);
        assert_eq!(p.y, 0.0);
    }

    #[test]
    fn project_rejects_wide_span() {
        let err = project(43.0, -73.98, 40.75, -73.98).unwrap_err();
        assert!(matches!(err, Error::ProjectionDomain(_)));
    }

    #[test]
    fn unproject_round_trips() {
        let p = project(40.7653, -73.9124, 40.75, -73.98).unwrap();
        let (lat, lon) = unproject(p, 40.75, -73.98);
        assert_relative_eq!(lat, 40.7653, epsilon = 1e-9);
        assert_relative_eq!(lon, -73.9124, epsilon = 1e-9);
    }

    #[test]
    fn haversine_meridian_hundredth_degree() {
        let d = haversine_m(40.75, -73.98, 40.76, -73.98);
        assert_relative_eq!(d, 1111.9949, max_relative = 1e-4);
    }

    #[test]
    fn haversine_matches_projection_locally() {
        // At city scale the planar distance and the great-circle distance agree.
        let a = project(40.751, -73.981, 40.75, -73.98).unwrap();
        let b = project(40.758, -73.969, 40.75, -73.98).unwrap();
        let planar = a.distance(&b);
        let sphere = haversine_m(40.751, -73.981, 40.758, -73.969);
        assert_relative_eq!(planar, sphere, max_relative = 1e-4);
    }
}
