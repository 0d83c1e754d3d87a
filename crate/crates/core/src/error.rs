use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid location lon={lon} lat={lat}")]
    InvalidLocation { lon: f64, lat: f64 },
    #[error("invalid bounding box `{0}` (expected west,south,east,north)")]
    InvalidBbox(String),

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed OSM data in {path}: {msg}")]
    Osm { path: PathBuf, msg: String },
    #[error("bounding box contains no highway nodes of the extract")]
    BboxOutsideData,
    #[error("road network is empty{0}")]
    EmptyNetwork(&'static str),
    #[error("malformed network file: {0}")]
    NetworkFormat(String),

    #[error("grid resolution yields {0} cells (allowed 1..=100000)")]
    GridSize(usize),

    #[error("no route from node {from} to node {to}")]
    NoRoute { from: u32, to: u32 },
    #[error("speed must be positive, got {0} km/h")]
    NonPositiveSpeed(f64),

    #[error("negative delay {0} s")]
    NegativeDelay(f64),
    #[error("handler failed at t={time_ms} ms (event #{seq}): {msg}")]
    Handler { time_ms: u64, seq: u64, msg: String },

    #[error("transportation problem: {0}")]
    Transport(String),

    #[error("csv {path}: {msg}")]
    Csv { path: PathBuf, msg: String },
    #[error("missing required column `{column}` in {path}")]
    MissingColumn { path: PathBuf, column: String },
    #[error("duplicate station id `{0}`")]
    DuplicateStation(String),
    #[error("station `{id}` has capacity {capacity} (must be >= 1)")]
    StationCapacity { id: String, capacity: i64 },
    #[error("no records left after filtering {0}")]
    EmptyDemand(PathBuf),
    #[error("malformed request file line {line}: {msg}")]
    RequestFormat { line: usize, msg: String },

    #[error("log: {0}")]
    Log(String),
    #[error("event log is truncated (no run-end marker)")]
    TruncatedLog,

    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown preset `{name}`; available: {available}")]
    UnknownPreset { name: String, available: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
