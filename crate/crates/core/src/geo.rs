//! Sensor locations, great-circle distances and candidate neighbor maps.

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius in kilometers (IUGG).
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Kilometers per statute mile.
pub const KM_PER_MILE: f64 = 1.609344;

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("duplicate device id `{0}` in registry")]
    DuplicateDevice(DeviceId),
    #[error("unknown device id `{0}`")]
    UnknownDevice(DeviceId),
    #[error("radius must be positive, got {0} km")]
    Radius(f64),
}

/// Identifier of a sensing device, e.g. `400760_N`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceId(String);

impl DeviceId {
    pub fn new(id: impl Into<String>) -> Self {
        DeviceId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for DeviceId {
    fn from(s: &str) -> Self {
        DeviceId(s.to_owned())
    }
}

impl From<String> for DeviceId {
    fn from(s: String) -> Self {
        DeviceId(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpsCoord {
    lat: f64,
    lon: f64,
}

impl GpsCoord {
    /// Latitude and longitude in degrees. NaN is rejected like any other
    /// out-of-range value.
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::Latitude(lat));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(GeoError::Longitude(lon));
        }
        Ok(GpsCoord { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Great-circle distance in kilometers.
///
/// The arguments are put in a canonical order first, so the result is
/// bitwise symmetric.
pub fn haversine_distance(a: GpsCoord, b: GpsCoord) -> f64 {
    let (p, q) = if (a.lat, a.lon) <= (b.lat, b.lon) { (a, b) } else { (b, a) };
    let phi1 = p.lat.to_radians();
    let phi2 = q.lat.to_radians();
    let dphi = (q.lat - p.lat).to_radians();
    let dlambda = (q.lon - p.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.clamp(0.0, 1.0).sqrt().asin()
}

/// Device ids and their positions, in insertion order.
#[derive(Clone, Debug, Default)]
pub struct SensorRegistry {
    entries: IndexMap<DeviceId, GpsCoord>,
}

impl SensorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<DeviceId>, coord: GpsCoord) -> Result<(), GeoError> {
        let id = id.into();
        if self.entries.contains_key(&id) {
            return Err(GeoError::DuplicateDevice(id));
        }
        self.entries.insert(id, coord);
        Ok(())
    }

    pub fn get(&self, id: &DeviceId) -> Option<GpsCoord> {
        self.entries.get(id).copied()
    }

    pub fn contains(&self, id: &DeviceId) -> bool {
        self.entries.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &DeviceId> {
        self.entries.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DeviceId, &GpsCoord)> {
        self.entries.iter()
    }
}

/// Candidate favorite neighbors of one device: every other device within the
/// radius, nearest first.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateMap {
    entries: Vec<(DeviceId, f64)>,
}

impl CandidateMap {
    /// Builds a map from arbitrary entries, applying the canonical
    /// `(distance, id)` order.
    pub fn from_entries(mut entries: Vec<(DeviceId, f64)>) -> Self {
        entries.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        CandidateMap { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: &DeviceId) -> bool {
        self.entries.iter().any(|(d, _)| d == id)
    }

    pub fn distance(&self, id: &DeviceId) -> Option<f64> {
        self.entries.iter().find(|(d, _)| d == id).map(|(_, km)| *km)
    }

    /// Candidate ids from nearest to farthest.
    pub fn ids(&self) -> impl Iterator<Item = &DeviceId> {
        self.entries.iter().map(|(d, _)| d)
    }

    pub fn entries(&self) -> &[(DeviceId, f64)] {
        &self.entries
    }
}

/// Collects every device other than `owner` lying within `radius_km`
/// (boundary included), sorted by distance with ties broken by id.
pub fn form_cfn(owner: &DeviceId, registry: &SensorRegistry, radius_km: f64) -> Result<CandidateMap, GeoError> {
    if !(radius_km > 0.0) {
        return Err(GeoError::Radius(radius_km));
    }
    let origin = registry.get(owner).ok_or_else(|| GeoError::UnknownDevice(owner.clone()))?;
    let entries = registry
        .iter()
        .filter(|(id, _)| *id != owner)
        .filter_map(|(id, coord)| {
            let km = haversine_distance(origin, *coord);
            (km <= radius_km).then(|| (id.clone(), km))
        })
        .collect();
    Ok(CandidateMap::from_entries(entries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(lat: f64, lon: f64) -> GpsCoord {
        GpsCoord::new(lat, lon).unwrap()
    }

    // Offsets along the equator by a given number of kilometers.
    fn east_of_origin(km: f64) -> GpsCoord {
        c(0.0, (km / EARTH_RADIUS_KM).to_degrees())
    }

    #[test]
    fn rejects_out_of_range_coordinates() {
        assert_eq!(GpsCoord::new(90.5, 0.0), Err(GeoError::Latitude(90.5)));
        assert_eq!(GpsCoord::new(0.0, -180.1), Err(GeoError::Longitude(-180.1)));
        assert!(GpsCoord::new(f64::NAN, 0.0).is_err());
        assert!(GpsCoord::new(-90.0, 180.0).is_ok());
    }

    #[test]
    fn haversine_reference_values() {
        assert_eq!(haversine_distance(c(37.0, -122.0), c(37.0, -122.0)), 0.0);
        // one degree of longitude on the equator is R * pi / 180
        let one_degree = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
        assert!((one_degree - 111.195).abs() < 1e-3);
        assert!((haversine_distance(c(0.0, 0.0), c(0.0, 1.0)) - one_degree).abs() < 1e-9);
        let quarter = EARTH_RADIUS_KM * std::f64::consts::FRAC_PI_2;
        assert!((quarter - 10007.56).abs() < 1e-2);
        assert!((haversine_distance(c(0.0, 0.0), c(90.0, 0.0)) - quarter).abs() < 1e-9);
    }

    #[test]
    fn empty_map_when_nobody_is_close() {
        let mut reg = SensorRegistry::new();
        reg.insert("a", c(0.0, 0.0)).unwrap();
        reg.insert("b", c(10.0, 10.0)).unwrap();
        let cfn = form_cfn(&"a".into(), &reg, 1.0).unwrap();
        assert!(cfn.is_empty());
    }

    #[test]
    fn radius_filter_keeps_only_close_devices() {
        let mut reg = SensorRegistry::new();
        reg.insert("owner", c(0.0, 0.0)).unwrap();
        reg.insert("far", east_of_origin(2.0)).unwrap();
        reg.insert("near", east_of_origin(0.5)).unwrap();
        reg.insert("mid", east_of_origin(1.5)).unwrap();
        let cfn = form_cfn(&"owner".into(), &reg, 1.0).unwrap();
        let ids: Vec<_> = cfn.ids().map(|d| d.as_str()).collect();
        assert_eq!(ids, ["near"]);
        assert!((cfn.distance(&"near".into()).unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn boundary_distance_is_included_and_ties_break_by_id() {
        let mut reg = SensorRegistry::new();
        reg.insert("o", c(0.0, 0.0)).unwrap();
        reg.insert("z", c(0.0, 0.01)).unwrap();
        reg.insert("y", c(0.0, -0.01)).unwrap();
        let exact = haversine_distance(c(0.0, 0.0), c(0.0, 0.01));
        let cfn = form_cfn(&"o".into(), &reg, exact).unwrap();
        let ids: Vec<_> = cfn.ids().map(|d| d.as_str()).collect();
        assert_eq!(ids, ["y", "z"]);
    }

    #[test]
    fn unknown_owner_and_bad_radius() {
        let reg = SensorRegistry::new();
        assert_eq!(form_cfn(&"x".into(), &reg, 1.0), Err(GeoError::UnknownDevice("x".into())));
        let mut reg = SensorRegistry::new();
        reg.insert("x", c(0.0, 0.0)).unwrap();
        assert_eq!(form_cfn(&"x".into(), &reg, 0.0), Err(GeoError::Radius(0.0)));
        assert!(reg.insert("x", c(1.0, 1.0)).is_err());
    }

    fn coord() -> impl Strategy<Value = GpsCoord> {
        (-90.0f64..=90.0, -180.0f64..=180.0).prop_map(|(a, b)| c(a, b))
    }

    proptest! {
        #[test]
        fn haversine_is_symmetric_and_bounded(a in coord(), b in coord()) {
            let d = haversine_distance(a, b);
            prop_assert_eq!(d.to_bits(), haversine_distance(b, a).to_bits());
            prop_assert!(d >= 0.0);
            prop_assert!(d <= std::f64::consts::PI * EARTH_RADIUS_KM + 1e-9);
        }

        #[test]
        fn cfn_matches_brute_force(points in prop::collection::vec((-0.05f64..0.05, -0.05f64..0.05), 1..15),
                                   radius in 0.5f64..6.0) {
            let mut reg = SensorRegistry::new();
            for (i, (la, lo)) in points.iter().enumerate() {
                reg.insert(format!("d{i:02}"), c(*la, *lo)).unwrap();
            }
            let owner: DeviceId = "d00".into();
            let cfn = form_cfn(&owner, &reg, radius).unwrap();
            let origin = reg.get(&owner).unwrap();
            let mut expected: Vec<(DeviceId, f64)> = reg.iter()
                .filter(|(id, _)| **id != owner)
                .map(|(id, p)| (id.clone(), haversine_distance(origin, *p)))
                .filter(|(_, km)| *km <= radius)
                .collect();
            expected.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            prop_assert_eq!(cfn.entries(), &expected[..]);
            prop_assert!(!cfn.contains(&owner));
            prop_assert_eq!(form_cfn(&owner, &reg, radius).unwrap(), cfn);
        }
    }
}
