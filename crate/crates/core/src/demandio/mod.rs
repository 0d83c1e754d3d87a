//! Trip and station ingestion (Bluebikes export schema), request generation
//! and the canonical request file.
//!
//! Column names are mapped through [`TripColumns`] / [`StationColumns`]; the
//! defaults match the 2019 Bluebikes exports:
//!
//! | field | trips CSV | stations CSV |
//! |---|---|---|
//! | start time | `starttime` | |
//! | start station id / lat / lon | `start station id`, `start station latitude`, `start station longitude` | |
//! | end station id / lat / lon | `end station id`, `end station latitude`, `end station longitude` | |
//! | duration (informational) | `tripduration` | |
//! | station id / lat / lon / docks | | `Number`, `Latitude`, `Longitude`, `Total docks` |

mod requests;
mod stats;
mod synthetic;

use std::collections::HashMap;
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

pub use requests::{read_requests, scatter_requests, write_requests, Request, RequestFile};
pub use stats::{demand_stats, DemandStats};
pub use synthetic::{SyntheticCity, SyntheticSpec};

use crate::error::{Error, Result};
use crate::geo::Location;

const TIME_FORMATS: &[&str] = &["%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M"];

/// Parses the timestamp formats found in Bluebikes exports.
pub fn parse_time(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    TIME_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d").ok().and_then(|d| d.and_hms_opt(0, 0, 0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TripColumns {
    pub start_time: String,
    pub start_id: String,
    pub start_lat: String,
    pub start_lon: String,
    pub end_id: String,
    pub end_lat: String,
    pub end_lon: String,
    pub duration: String,
}

impl Default for TripColumns {
    fn default() -> Self {
        Self {
            start_time: "starttime".into(),
            start_id: "start station id".into(),
            start_lat: "start station latitude".into(),
            start_lon: "start station longitude".into(),
            end_id: "end station id".into(),
            end_lat: "end station latitude".into(),
            end_lon: "end station longitude".into(),
            duration: "tripduration".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StationColumns {
    pub id: String,
    pub lat: String,
    pub lon: String,
    pub capacity: String,
}

impl Default for StationColumns {
    fn default() -> Self {
        Self { id: "Number".into(), lat: "Latitude".into(), lon: "Longitude".into(), capacity: "Total docks".into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripRecord {
    pub start_time: NaiveDateTime,
    pub start_station: (String, Location),
    pub end_station: (String, Location),
    pub duration_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationRecord {
    pub id: String,
    pub location: Location,
    pub capacity: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripLoad {
    pub trips: Vec<TripRecord>,
    /// Rows dropped as malformed (blank ids, bad numbers or timestamps).
    pub skipped: usize,
}

fn open_csv(path: &Path) -> Result<(csv::Reader<std::fs::File>, csv::StringRecord)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    Ok((rdr, headers))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Csv { path: path.into(), msg: format!("{other:?}") },
    }
}

fn column(path: &Path, headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim().trim_start_matches('\u{feff}').eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::MissingColumn { path: path.into(), column: name.into() })
}

fn location(lat: &str, lon: &str) -> Option<Location> {
    Location::new(lon.trim().parse().ok()?, lat.trim().parse().ok()?).ok()
}

/// Loads trips starting in `[t0, t1)`, sorted by start time (stable for
/// equal times). Malformed rows are counted and skipped.
pub fn load_trips(path: &Path, cols: &TripColumns, window: (NaiveDateTime, NaiveDateTime)) -> Result<TripLoad> {
    let (mut rdr, headers) = open_csv(path)?;
    let idx = [
        column(path, &headers, &cols.start_time)?,
        column(path, &headers, &cols.start_id)?,
        column(path, &headers, &cols.start_lat)?,
        column(path, &headers, &cols.start_lon)?,
        column(path, &headers, &cols.end_id)?,
        column(path, &headers, &cols.end_lat)?,
        column(path, &headers, &cols.end_lon)?,
    ];
    let dur = column(path, &headers, &cols.duration).ok();
    let mut trips = Vec::new();
    let mut skipped = 0;
    for row in rdr.records() {
        let Ok(row) = row else {
            skipped += 1;
            continue;
        };
        let f = |i: usize| row.get(idx[i]).unwrap_or("").trim();
        let parsed = (|| {
            let t = parse_time(f(0))?;
            let (sid, eid) = (f(1), f(4));
            if sid.is_empty() || eid.is_empty() || sid.eq_ignore_ascii_case("null") || eid.eq_ignore_ascii_case("null")
            {
                return None;
            }
            let s = location(f(2), f(3))?;
            let e = location(f(5), f(6))?;
            let duration_s = dur.and_then(|d| row.get(d)).and_then(|x| x.trim().parse().ok());
            Some(TripRecord { start_time: t, start_station: (sid.into(), s), end_station: (eid.into(), e), duration_s })
        })();
        match parsed {
            Some(t) if t.start_time >= window.0 && t.start_time < window.1 => trips.push(t),
            Some(_) => {}
            None => skipped += 1,
        }
    }
    if trips.is_empty() {
        return Err(Error::EmptyDemand(path.into()));
    }
    trips.sort_by_key(|t| t.start_time);
    log::info!("loaded {} trips from {} ({skipped} malformed rows skipped)", trips.len(), path.display());
    Ok(TripLoad { trips, skipped })
}

/// Loads and validates stations; ids must be unique and capacity ≥ 1.
/// Preamble lines before the header row (the published export starts with
/// a "Last Updated" line) are skipped.
pub fn load_stations(path: &Path, cols: &StationColumns) -> Result<Vec<StationRecord>> {
    let mut rdr =
        csv::ReaderBuilder::new().flexible(true).has_headers(false).from_path(path).map_err(|e| csv_error(path, e))?;
    let mut headers = None;
    for row in rdr.records().take(5) {
        let row = row.map_err(|e| csv_error(path, e))?;
        if column(path, &row, &cols.id).is_ok() {
            headers = Some(row);
            break;
        }
    }
    let headers = headers.ok_or_else(|| Error::MissingColumn { path: path.into(), column: cols.id.clone() })?;
    let idx = [
        column(path, &headers, &cols.id)?,
        column(path, &headers, &cols.lat)?,
        column(path, &headers, &cols.lon)?,
        column(path, &headers, &cols.capacity)?,
    ];
    let mut out: Vec<StationRecord> = Vec::new();
    let mut seen = HashMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = row.position().map_or(0, |p| p.line());
        let f = |i: usize| row.get(idx[i]).unwrap_or("").trim();
        let id = f(0).to_string();
        let bad =
            |what: &str| Error::Csv { path: path.into(), msg: format!("line {line}: bad {what} for station `{id}`") };
        let location = location(f(1), f(2)).ok_or_else(|| bad("coordinates"))?;
        let capacity: i64 = f(3).parse().map_err(|_| bad("capacity"))?;
        if capacity < 1 {
            return Err(Error::StationCapacity { id, capacity });
        }
        if seen.insert(id.clone(), ()).is_some() {
            return Err(Error::DuplicateStation(id));
        }
        out.push(StationRecord { id, location, capacity: capacity as u32 });
    }
    Ok(out)
}

pub fn write_stations(path: &Path, stations: &[StationRecord]) -> Result<()> {
    let mut s = String::from("Number,Latitude,Longitude,Total docks\n");
    for st in stations {
        s.push_str(&format!("{},{:.7},{:.7},{}\n", st.id, st.location.lat, st.location.lon, st.capacity));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Writes trips in the default Bluebikes column layout.
pub fn write_trips(path: &Path, trips: &[TripRecord]) -> Result<()> {
    let mut s = String::from(
        "tripduration,starttime,start station id,start station latitude,start station longitude,end station id,end station latitude,end station longitude\n",
    );
    for t in trips {
        s.push_str(&format!(
            "{},{},{},{:.7},{:.7},{},{:.7},{:.7}\n",
            t.duration_s.map_or(String::new(), |d| format!("{d:.0}")),
            t.start_time.format("%Y-%m-%d %H:%M:%S%.3f"),
            t.start_station.0,
            t.start_station.1.lat,
            t.start_station.1.lon,
            t.end_station.0,
            t.end_station.1.lat,
            t.end_station.1.lon
        ));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
