use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDateTime};

use super::{load_any_network, DataConfig, RunConfig, WindowConfig, CONFIG_FILE};
use crate::demandio::{
    load_stations, load_trips, scatter_requests, write_requests, write_stations, RequestFile, StationColumns,
    SyntheticCity, SyntheticSpec, TripColumns,
};
use crate::error::{Error, Result};
use crate::geo::{BoundingBox, HighwayFilter};

pub const NETWORK_FILE: &str = "network.net";
pub const STATIONS_FILE: &str = "stations.csv";
pub const REQUESTS_FILE: &str = "requests.csv";

const TIME_FMT: &str = "%Y-%m-%d %H:%M:%S";
/// Margin added around the stations when no bounding box is given.
const BBOX_MARGIN_DEG: f64 = 0.02;

/// Raw inputs for [`prepare_bluebikes`].
#[derive(Debug, Clone)]
pub struct BluebikesSource {
    /// OSM extract (`.osm`, `.pbf`) or a canonical network file.
    pub network: PathBuf,
    pub bbox: Option<String>,
    pub highways: HighwayFilter,
    pub stations: PathBuf,
    pub station_columns: StationColumns,
    /// Monthly trip exports covering the history and the window.
    pub trips: Vec<PathBuf>,
    pub trip_columns: TripColumns,
    pub window: (NaiveDateTime, NaiveDateTime),
    /// Whole weeks of trips kept before the window for the demand baseline.
    pub history_weeks: u32,
    pub seed: u64,
    pub scatter_radius_m: f64,
}

/// What `prepare` wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub dir: PathBuf,
    /// Run config pointing at the prepared files.
    pub config: PathBuf,
    pub nodes: usize,
    pub stations: usize,
    pub requests: usize,
    pub window_requests: usize,
}

fn write_config(dir: &Path, window: (NaiveDateTime, NaiveDateTime)) -> Result<PathBuf> {
    let cfg = RunConfig {
        data: DataConfig {
            network: NETWORK_FILE.into(),
            stations: STATIONS_FILE.into(),
            requests: REQUESTS_FILE.into(),
            ..Default::default()
        },
        window: WindowConfig {
            start: window.0.format(TIME_FMT).to_string(),
            end: window.1.format(TIME_FMT).to_string(),
        },
        ..Default::default()
    };
    let p = dir.join(CONFIG_FILE);
    fs::write(&p, cfg.to_toml()).map_err(|e| Error::io(&p, e))?;
    Ok(p)
}

/// Converts raw Bluebikes exports and an OSM extract into the canonical
/// network, station and request files plus a run config, all in `dir`.
pub fn prepare_bluebikes(src: &BluebikesSource, dir: &Path) -> Result<Prepared> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stations = load_stations(&src.stations, &src.station_columns)?;
    let bbox = match &src.bbox {
        Some(b) => b.clone(),
        None => {
            let b = BoundingBox::covering(stations.iter().map(|s| &s.location))
                .ok_or(Error::EmptyNetwork(" (no stations)"))?;
            let m = BBOX_MARGIN_DEG;
            format!("{},{},{},{}", b.west - m, b.south - m, b.east + m, b.north + m)
        }
    };
    let net = load_any_network(&src.network, Some(&bbox), &src.highways)?;
    let epoch = src.window.0 - Duration::weeks(src.history_weeks as i64);
    let mut trips = Vec::new();
    for path in &src.trips {
        let load = load_trips(path, &src.trip_columns, (epoch, src.window.1))?;
        if load.skipped > 0 {
            log::warn!("{}: skipped {} malformed rows", path.display(), load.skipped);
        }
        trips.extend(load.trips);
    }
    trips.sort_by_key(|t| t.start_time);
    let window_requests = trips.iter().filter(|t| t.start_time >= src.window.0).count();
    let requests = RequestFile { epoch, requests: scatter_requests(&trips, epoch, src.seed, src.scatter_radius_m)? };

    net.save(&dir.join(NETWORK_FILE))?;
    write_stations(&dir.join(STATIONS_FILE), &stations)?;
    write_requests(&dir.join(REQUESTS_FILE), &requests)?;
    let config = write_config(dir, src.window)?;
    Ok(Prepared {
        dir: dir.into(),
        config,
        nodes: net.node_count(),
        stations: stations.len(),
        requests: requests.requests.len(),
        window_requests,
    })
}

/// Writes a synthetic city in the canonical layout.
pub fn prepare_synthetic(spec: &SyntheticSpec, scatter_radius_m: f64, dir: &Path) -> Result<Prepared> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let city = SyntheticCity::generate(spec)?;
    let requests = city.request_file(spec.seed, scatter_radius_m)?;
    city.network.save(&dir.join(NETWORK_FILE))?;
    write_stations(&dir.join(STATIONS_FILE), &city.stations)?;
    write_requests(&dir.join(REQUESTS_FILE), &requests)?;
    let config = write_config(dir, city.window)?;
    Ok(Prepared {
        dir: dir.into(),
        config,
        nodes: city.network.node_count(),
        stations: city.stations.len(),
        requests: requests.requests.len(),
        window_requests: city.window_trips().count(),
    })
}
