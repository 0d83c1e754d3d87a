use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in meters (IUGG).
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// A WGS84 coordinate in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub lon: f64,
    pub lat: f64,
}

impl Location {
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
            return Err(Error::InvalidLocation { lon, lat });
        }
        Ok(Self { lon, lat })
    }

    /// Great-circle distance in meters.
    pub fn haversine(&self, other: &Location) -> f64 {
        let (phi1, phi2) = (self.lat.to_radians(), other.lat.to_radians());
        let dphi = phi2 - phi1;
        let dlambda = (other.lon - self.lon).to_radians();
        let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
    }

    /// The point `distance_m` away along the great circle leaving at
    /// `bearing_rad` (clockwise from north).
    pub fn destination(&self, bearing_rad: f64, distance_m: f64) -> Location {
        let delta = distance_m / EARTH_RADIUS_M;
        let phi1 = self.lat.to_radians();
        let phi2 = (phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * bearing_rad.cos()).asin();
        let dl = (bearing_rad.sin() * delta.sin() * phi1.cos()).atan2(delta.cos() - phi1.sin() * phi2.sin());
        let lon = (self.lon + dl.to_degrees() + 540.0) % 360.0 - 180.0;
        Location { lon, lat: phi2.to_degrees() }
    }
}

/// West, south, east, north in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub west: f64,
    pub south: f64,
    pub east: f64,
    pub north: f64,
}

impl BoundingBox {
    pub fn new(west: f64, south: f64, east: f64, north: f64) -> Result<Self> {
        Location::new(west, south)?;
        Location::new(east, north)?;
        if west >= east || south >= north {
            return Err(Error::InvalidBbox(format!("{west},{south},{east},{north}")));
        }
        Ok(Self { west, south, east, north })
    }

    /// Parses `west,south,east,north`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidBbox(s.to_string()))?;
        match parts[..] {
            [w, s_, e, n] => Self::new(w, s_, e, n),
            _ => Err(Error::InvalidBbox(s.to_string())),
        }
    }

    pub fn world() -> Self {
        Self { west: -180.0, south: -90.0, east: 180.0, north: 90.0 }
    }

    pub fn contains(&self, p: &Location) -> bool {
        p.lon >= self.west && p.lon <= self.east && p.lat >= self.south && p.lat <= self.north
    }

    pub fn center(&self) -> Location {
        Location { lon: (self.west + self.east) / 2.0, lat: (self.south + self.north) / 2.0 }
    }

    pub fn covering<'a>(points: impl IntoIterator<Item = &'a Location>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = Self { west: first.lon, south: first.lat, east: first.lon, north: first.lat };
        for p in it {
            b.west = b.west.min(p.lon);
            b.east = b.east.max(p.lon);
            b.south = b.south.min(p.lat);
            b.north = b.north.max(p.lat);
        }
        Some(b)
    }
}

/// Equirectangular projection around a reference point, in meters.
///
/// Accurate to well under 1% over city-scale extents, which is all the
/// spatial indexes need: they use it for bucketing and fall back to
/// great-circle distances for every actual comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalProjection {
    origin: Location,
    cos_lat: f64,
}

impl LocalProjection {
    pub fn new(origin: Location) -> Self {
        Self { origin, cos_lat: origin.lat.to_radians().cos() }
    }

    pub fn to_xy(&self, p: &Location) -> (f64, f64) {
        let x = (p.lon - self.origin.lon).to_radians() * EARTH_RADIUS_M * self.cos_lat;
        let y = (p.lat - self.origin.lat).to_radians() * EARTH_RADIUS_M;
        (x, y)
    }

    pub fn to_location(&self, x: f64, y: f64) -> Location {
        Location {
            lon: self.origin.lon + (x / (EARTH_RADIUS_M * self.cos_lat)).to_degrees(),
            lat: self.origin.lat + (y / EARTH_RADIUS_M).to_degrees(),
        }
    }

    /// Offsets `p` by `(dx, dy)` meters east/north.
    pub fn offset(&self, p: &Location, dx: f64, dy: f64) -> Location {
        let (x, y) = self.to_xy(p);
        self.to_location(x + dx, y + dy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn destination_round_trips_through_haversine() {
        let p = Location { lon: -71.06, lat: 42.36 };
        for k in 0..16 {
            let q = p.destination(k as f64 * 0.4, 300.0);
            assert!((p.haversine(&q) - 300.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(Location::new(181.0, 0.0).is_err());
        assert!(Location::new(0.0, -90.5).is_err());
        assert!(Location::new(-71.06, 42.36).is_ok());
    }

    #[test]
    fn haversine_one_degree_of_latitude() {
        let a = Location { lon: 0.0, lat: 0.0 };
        let b = Location { lon: 0.0, lat: 1.0 };
        let expected = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        assert!((a.haversine(&b) - expected).abs() < 1e-6);
    }

    #[test]
    fn projection_round_trip_and_scale() {
        let proj = LocalProjection::new(Location { lon: -71.06, lat: 42.36 });
        let p = Location { lon: -71.05, lat: 42.37 };
        let (x, y) = proj.to_xy(&p);
        let q = proj.to_location(x, y);
        assert!((p.lon - q.lon).abs() < 1e-12 && (p.lat - q.lat).abs() < 1e-12);
        let planar = (x * x + y * y).sqrt();
        let gc = Location { lon: -71.06, lat: 42.36 }.haversine(&p);
        assert!((planar - gc).abs() / gc < 1e-3);
    }

    #[test]
    fn bbox_parse() {
        let b = BoundingBox::parse("-71.2,42.2,-70.9,42.5").unwrap();
        assert_eq!(b.west, -71.2);
        assert!(BoundingBox::parse("1,2,3").is_err());
        assert!(BoundingBox::parse("3,2,1,4").is_err());
    }
}
