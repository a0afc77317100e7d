//! Geographic points and great-circle geometry.
//!
//! Distances use the haversine formula on a sphere with the IUGG mean
//! Earth radius. That is plenty for ranking neighbours at city scale.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius in kilometres (IUGG R1).
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("invalid point id {0:?}: ids must be non-empty and free of whitespace, ',' and ';'")]
    Id(String),
}

/// A named location on the globe, in decimal degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    id: String,
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(id: impl Into<String>, lat: f64, lon: f64) -> Result<Self, GeoError> {
        let id = id.into();
        if !valid_id(&id) {
            return Err(GeoError::Id(id));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::Latitude(lat));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(GeoError::Longitude(lon));
        }
        Ok(Self { id, lat, lon })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({:.4}, {:.4})", self.id, self.lat, self.lon)
    }
}

// Ids end up inside `;`-joined CSV cells and comma-separated agent replies.
fn valid_id(id: &str) -> bool {
    !id.is_empty() && !id.chars().any(|c| c.is_whitespace() || c == ',' || c == ';')
}

/// Great-circle distance in kilometres.
pub fn haversine_km(a: &GeoPoint, b: &GeoPoint) -> f64 {
    haversine_deg(a.lat, a.lon, b.lat, b.lon)
}

/// Haversine distance between raw degree coordinates.
pub fn haversine_deg(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let phi1 = lat1.to_radians();
    let phi2 = lat2.to_radians();
    let dphi = (lat2 - lat1).to_radians();
    let dlambda = (lon2 - lon1).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Initial bearing from the first coordinate to the second, degrees in [0, 360).
pub fn initial_bearing_deg(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let phi1 = lat1.to_radians();
    let phi2 = lat2.to_radians();
    let dlambda = (lon2 - lon1).to_radians();
    let y = dlambda.sin() * phi2.cos();
    let x = phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * dlambda.cos();
    let theta = y.atan2(x).to_degrees();
    theta.rem_euclid(360.0)
}

/// Destination reached by travelling `distance_km` along `bearing_deg` from a start coordinate.
pub fn destination(lat: f64, lon: f64, bearing_deg: f64, distance_km: f64) -> (f64, f64) {
    let delta = distance_km / EARTH_RADIUS_KM;
    let theta = bearing_deg.to_radians();
    let phi1 = lat.to_radians();
    let lambda1 = lon.to_radians();
    let phi2 = (phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * theta.cos()).asin();
    let lambda2 = lambda1 + (theta.sin() * delta.sin() * phi1.cos()).atan2(delta.cos() - phi1.sin() * phi2.sin());
    let lon2 = (lambda2.to_degrees() + 540.0).rem_euclid(360.0) - 180.0;
    (phi2.to_degrees().clamp(-90.0, 90.0), lon2)
}

/// The sixteen-point compass rose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Compass16 {
    N,
    NNE,
    NE,
    ENE,
    E,
    ESE,
    SE,
    SSE,
    S,
    SSW,
    SW,
    WSW,
    W,
    WNW,
    NW,
    NNW,
}

impl Compass16 {
    pub const ALL: [Compass16; 16] = [
        Compass16::N,
        Compass16::NNE,
        Compass16::NE,
        Compass16::ENE,
        Compass16::E,
        Compass16::ESE,
        Compass16::SE,
        Compass16::SSE,
        Compass16::S,
        Compass16::SSW,
        Compass16::SW,
        Compass16::WSW,
        Compass16::W,
        Compass16::WNW,
        Compass16::NW,
        Compass16::NNW,
    ];

    /// Nearest compass point for a bearing in degrees.
    pub fn from_bearing(bearing_deg: f64) -> Self {
        let sector = (bearing_deg.rem_euclid(360.0) / 22.5).round() as usize % 16;
        Self::ALL[sector]
    }

    pub fn name(self) -> &'static str {
        match self {
            Compass16::N => "North",
            Compass16::NNE => "North-Northeast",
            Compass16::NE => "Northeast",
            Compass16::ENE => "East-Northeast",
            Compass16::E => "East",
            Compass16::ESE => "East-Southeast",
            Compass16::SE => "Southeast",
            Compass16::SSE => "South-Southeast",
            Compass16::S => "South",
            Compass16::SSW => "South-Southwest",
            Compass16::SW => "Southwest",
            Compass16::WSW => "West-Southwest",
            Compass16::W => "West",
            Compass16::WNW => "West-Northwest",
            Compass16::NW => "Northwest",
            Compass16::NNW => "North-Northwest",
        }
    }
}

impl fmt::Display for Compass16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn p(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new("x", lat, lon).unwrap()
    }

    #[test]
    fn identical_points_are_zero_apart() {
        assert_eq!(haversine_km(&p(0.0, 0.0), &p(0.0, 0.0)), 0.0);
    }

    #[test]
    fn antipodal_and_quarter_arcs() {
        let half = haversine_km(&p(0.0, 0.0), &p(0.0, 180.0));
        assert!((half - PI * 6371.0088).abs() < 1e-6);
        assert!((half - 20015.1).abs() < 0.1);
        let quarter = haversine_km(&p(0.0, 0.0), &p(90.0, 0.0));
        assert!((quarter - PI / 2.0 * 6371.0088).abs() < 1e-6);
        assert!((quarter - 10007.6).abs() < 0.1);
    }

    #[test]
    fn rejects_out_of_range_and_bad_ids() {
        assert!(matches!(GeoPoint::new("a", 90.5, 0.0), Err(GeoError::Latitude(_))));
        assert!(matches!(GeoPoint::new("a", 0.0, -180.1), Err(GeoError::Longitude(_))));
        assert!(matches!(GeoPoint::new("a b", 0.0, 0.0), Err(GeoError::Id(_))));
        assert!(matches!(GeoPoint::new("a;b", 0.0, 0.0), Err(GeoError::Id(_))));
        assert!(matches!(GeoPoint::new("", 0.0, 0.0), Err(GeoError::Id(_))));
        assert!(matches!(GeoPoint::new("a", f64::NAN, 0.0), Err(GeoError::Latitude(_))));
    }

    #[test]
    fn compass_sectors() {
        assert_eq!(Compass16::from_bearing(0.0), Compass16::N);
        assert_eq!(Compass16::from_bearing(359.0), Compass16::N);
        assert_eq!(Compass16::from_bearing(90.0), Compass16::E);
        assert_eq!(Compass16::from_bearing(200.0), Compass16::SSW);
        assert_eq!(Compass16::from_bearing(-45.0), Compass16::NW);
    }

    #[test]
    fn bearing_cardinal_directions() {
        assert!((initial_bearing_deg(0.0, 0.0, 1.0, 0.0) - 0.0).abs() < 1e-9);
        assert!((initial_bearing_deg(0.0, 0.0, 0.0, 1.0) - 90.0).abs() < 1e-9);
        assert!((initial_bearing_deg(0.0, 0.0, -1.0, 0.0) - 180.0).abs() < 1e-9);
        assert!((initial_bearing_deg(0.0, 0.0, 0.0, -1.0) - 270.0).abs() < 1e-9);
    }

    fn coord() -> impl Strategy<Value = (f64, f64)> {
        (-90.0f64..=90.0, -180.0f64..=180.0)
    }

    proptest! {
        #[test]
        fn symmetric((a1, o1) in coord(), (a2, o2) in coord()) {
            let d1 = haversine_deg(a1, o1, a2, o2);
            let d2 = haversine_deg(a2, o2, a1, o1);
            prop_assert!((d1 - d2).abs() <= 1e-9);
            prop_assert!((0.0..=PI * EARTH_RADIUS_KM + 1e-9).contains(&d1));
        }

        #[test]
        fn triangle_sanity((a1, o1) in coord(), (a2, o2) in coord(), (a3, o3) in coord()) {
            let ab = haversine_deg(a1, o1, a2, o2);
            let bc = haversine_deg(a2, o2, a3, o3);
            let ac = haversine_deg(a1, o1, a3, o3);
            prop_assert!(ab <= bc + ac + 1e-6);
            prop_assert!(bc <= ab + ac + 1e-6);
            prop_assert!(ac <= ab + bc + 1e-6);
        }

        #[test]
        fn destination_travels_requested_distance((lat, lon) in (-80.0f64..80.0, -180.0f64..180.0),
                                                  bearing in 0.0f64..360.0, dist in 0.1f64..500.0) {
            let (lat2, lon2) = destination(lat, lon, bearing, dist);
            prop_assert!((haversine_deg(lat, lon, lat2, lon2) - dist).abs() < 1e-6);
        }
    }
}
