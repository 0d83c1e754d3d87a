//! Run configuration, shared inputs, single runs with on-disk artifacts,
//! parameter sweeps and presets.
//!
//! A run configuration is a TOML file:
//!
//! ```toml
//! seed = 1
//! out = "runs/sb-nominal"
//!
//! [data]
//! network = "data/network.net"   # canonical network, or .osm / .pbf with `bbox`
//! stations = "data/stations.csv"
//! requests = "data/requests.csv"
//! routing = "auto"               # auto | ch | dijkstra
//! hex_edge_m = 461.354684
//!
//! [window]
//! start = "2019-10-07 00:00:00"
//! end = "2019-10-14 00:00:00"
//!
//! [sim]
//! mode = "station"
//! fleet_size = 3500
//!
//! [output]
//! timeline_bin_s = 900
//! write_log = true
//! ```
//!
//! Relative paths resolve against the file's directory. `BIKESIM_SEED` and
//! `BIKESIM_OUT` override `seed` and `out`.

mod prepare;
mod preset;
mod sweep;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use prepare::{prepare_bluebikes, prepare_synthetic, BluebikesSource, Prepared};
pub use preset::{preset, LosSpec, Preset, PRESETS};
pub use sweep::{
    is_sweep, level_of_service, set_param, sweep, LosOutcome, SweepFailure, SweepResult, SweepRow, SweepSpec,
};

use crate::demandio::{self, read_requests, RequestFile, StationColumns};
use crate::error::{Error, Result};
use crate::geo::{
    build_grid, cost_matrix_on, load_network, BoundingBox, GridIndex, HighwayFilter, NodeIndex, RoadNetwork,
    DEFAULT_HEX_EDGE_M,
};
use crate::metrics::{KpiReport, Timeline};
use crate::modes::{simulate, ModeConfig, RebalanceInputs, RebalancingScenario, Scenario, SimOutput};
use crate::rebalance::{
    slot_of, DemandHistory, ExternalForecast, HistoricalMean, PerfectForesight, Predictor, PredictorKind,
};
use crate::routing::{RoutingBackend, RoutingService};

pub const ENV_SEED: &str = "BIKESIM_SEED";
pub const ENV_OUT: &str = "BIKESIM_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub network: PathBuf,
    /// `west,south,east,north`; required for OSM extracts.
    pub bbox: Option<String>,
    /// `highway=*` values kept from OSM extracts.
    pub highways: HighwayFilter,
    pub stations: PathBuf,
    pub station_columns: StationColumns,
    pub requests: PathBuf,
    pub routing: RoutingBackend,
    /// Where contraction hierarchies are cached between runs.
    pub cache_dir: Option<PathBuf>,
    /// Forecast matrix for the `external-file` predictor.
    pub forecast: Option<PathBuf>,
    pub hex_edge_m: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            network: "data/network.net".into(),
            bbox: None,
            highways: HighwayFilter::default(),
            stations: "data/stations.csv".into(),
            station_columns: StationColumns::default(),
            requests: "data/requests.csv".into(),
            routing: RoutingBackend::Auto,
            cache_dir: None,
            forecast: None,
            hex_edge_m: DEFAULT_HEX_EDGE_M,
        }
    }
}

/// Simulated interval `[start, end)` in wall-clock time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub start: String,
    pub end: String,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { start: "2019-10-07 00:00:00".into(), end: "2019-10-14 00:00:00".into() }
    }
}

impl WindowConfig {
    pub fn parse(&self) -> Result<(NaiveDateTime, NaiveDateTime)> {
        let p = |s: &str| demandio::parse_time(s).ok_or_else(|| Error::Config(format!("bad window time `{s}`")));
        let (a, b) = (p(&self.start)?, p(&self.end)?);
        if b <= a {
            return Err(Error::Config(format!("window end {b} is not after start {a}")));
        }
        Ok((a, b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Timeline bin width; 0 disables the timeline.
    pub timeline_bin_s: u64,
    pub write_log: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { timeline_bin_s: 900, write_log: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub window: WindowConfig,
    pub sim: ModeConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out: "out".into(),
            data: DataConfig::default(),
            window: WindowConfig::default(),
            sim: ModeConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Reads a config file, resolves its relative paths and applies the
    /// environment overrides.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new("")));
        cfg.apply_env()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out);
        fix(&mut self.data.network);
        fix(&mut self.data.stations);
        fix(&mut self.data.requests);
        self.data.cache_dir.as_mut().map(fix);
        self.data.forecast.as_mut().map(fix);
    }

    pub fn apply_env(&mut self) -> Result<()> {
        self.apply_overrides(std::env::var(ENV_SEED).ok(), std::env::var(ENV_OUT).ok())
    }

    pub fn apply_overrides(&mut self, seed: Option<String>, out: Option<String>) -> Result<()> {
        if let Some(s) = seed {
            self.seed = s.trim().parse().map_err(|_| Error::Config(format!("{ENV_SEED}=`{s}` is not an integer")))?;
        }
        if let Some(o) = out {
            self.out = o.into();
        }
        Ok(())
    }

    /// Checks parameters and that every referenced file exists.
    /// Seeds must fit a TOML integer so the config can be written back.
    fn check_seed(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config(format!("seed {} exceeds {}", self.seed, i64::MAX)));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check_seed()?;
        self.sim.validate()?;
        self.window.parse()?;
        if !(self.data.hex_edge_m > 0.0) {
            return Err(Error::Config(format!("hex_edge_m must be positive, got {}", self.data.hex_edge_m)));
        }
        let mut files =
            vec![("network", &self.data.network), ("stations", &self.data.stations), ("requests", &self.data.requests)];
        let external = self.sim.rebalancing == RebalancingScenario::Predictive
            && self.sim.prediction.predictor == PredictorKind::ExternalFile;
        if external {
            let f = self
                .data
                .forecast
                .as_ref()
                .ok_or_else(|| Error::Config("external-file predictor needs data.forecast".into()))?;
            files.push(("forecast", f));
        }
        for (what, p) in files {
            if !p.is_file() {
                return Err(Error::Config(format!("{what} file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// SHA-256 of the configuration with the output path cleared.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        hex(&Sha256::digest(c.to_toml().as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Loads a road network: the canonical text format, or an OSM extract
/// (`.osm`, `.xml`, `.pbf`) clipped to `bbox`.
pub fn load_any_network(path: &Path, bbox: Option<&str>, highways: &HighwayFilter) -> Result<RoadNetwork> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    if matches!(ext.as_str(), "osm" | "xml" | "pbf") {
        let bbox = match bbox {
            Some(b) => BoundingBox::parse(b)?,
            None => return Err(Error::Config(format!("{} is an OSM extract; data.bbox is required", path.display()))),
        };
        load_network(path, &bbox, highways)
    } else {
        RoadNetwork::load(path)
    }
}

struct GridInputs {
    grid: Arc<GridIndex>,
    costs: Arc<crate::geo::CostMatrix>,
    anchors: Vec<u32>,
    /// `(t_ms, origin cell)` of every request in the file.
    origins: Vec<(u64, u32)>,
}

/// Everything a run reads from disk, loaded once and shared by all runs on
/// the same data (sweeps, level-of-service searches).
pub struct Inputs {
    pub base: Scenario,
    pub requests: RequestFile,
    hex_edge_m: f64,
    forecast: Option<PathBuf>,
    grid: OnceLock<std::result::Result<GridInputs, String>>,
}

impl Inputs {
    pub fn load(data: &DataConfig, window: &WindowConfig) -> Result<Self> {
        let net = Arc::new(load_any_network(&data.network, data.bbox.as_deref(), &data.highways)?);
        let stations = demandio::load_stations(&data.stations, &data.station_columns)?;
        let requests = read_requests(&data.requests)?;
        let router = RoutingService::new(net.clone(), data.routing, data.cache_dir.as_deref())?;
        Self::from_parts(net, Arc::new(router), &stations, requests, window, data.hex_edge_m, data.forecast.clone())
    }

    pub fn from_parts(
        net: Arc<RoadNetwork>,
        router: Arc<dyn crate::routing::Router + Send + Sync>,
        stations: &[demandio::StationRecord],
        requests: RequestFile,
        window: &WindowConfig,
        hex_edge_m: f64,
        forecast: Option<PathBuf>,
    ) -> Result<Self> {
        let (start, end) = window.parse()?;
        let (t0, t1) = (requests.offset_ms(start), requests.offset_ms(end));
        if t0 < 0 {
            return Err(Error::Config(format!("window starts {start}, before the request epoch {}", requests.epoch)));
        }
        let sites: Vec<_> = stations.iter().map(|s| (s.id.clone(), s.location, s.capacity)).collect();
        let base = Scenario::new(net, router, &sites, &requests.requests, t0 as u64, t1 as u64)?;
        log::info!("{} stations, {} requests in the window", base.stations.len(), base.trips.len());
        Ok(Self { base, requests, hex_edge_m, forecast, grid: OnceLock::new() })
    }

    fn grid_inputs(&self) -> Result<&GridInputs> {
        self.grid
            .get_or_init(|| {
                let net = &self.base.net;
                let grid = build_grid(net, self.hex_edge_m).map_err(|e| e.to_string())?;
                let index = NodeIndex::new(net);
                let anchors: Vec<u32> =
                    grid.cells().iter().map(|c| index.nearest(&c.centroid).map_or(0, |x| x.0)).collect();
                let costs = cost_matrix_on(net, &anchors);
                let origins = self
                    .requests
                    .requests
                    .iter()
                    .filter_map(|r| index.nearest(&r.origin).map(|(n, _)| (r.t_ms, grid.node_cell(n))))
                    .collect();
                log::info!("rebalancing grid: {} cells", grid.cell_count());
                Ok(GridInputs { grid: Arc::new(grid), costs: Arc::new(costs), anchors, origins })
            })
            .as_ref()
            .map_err(|e| Error::Config(e.clone()))
    }

    /// The scenario for `cfg`, with rebalancing inputs when it needs them.
    pub fn scenario(&self, cfg: &ModeConfig) -> Result<Scenario> {
        let mut sc = self.base.clone();
        if cfg.rebalancing != RebalancingScenario::Predictive {
            return Ok(sc);
        }
        let g = self.grid_inputs()?;
        let cells = g.grid.cell_count();
        let (t0, t1) = (sc.t0_ms, sc.t1_ms);
        let predictor: Arc<dyn Predictor> = match cfg.prediction.predictor {
            PredictorKind::BaselineHistorical => {
                // The mean itself only reads slots before the query time.
                Arc::new(HistoricalMean::new(
                    DemandHistory::from_events(cells, g.origins.iter().copied()),
                    cfg.prediction.window,
                ))
            }
            PredictorKind::PerfectForesight => {
                let window = g.origins.iter().copied().filter(|&(t, _)| t >= t0 && t < t1);
                Arc::new(PerfectForesight::new(DemandHistory::from_events(cells, window)))
            }
            PredictorKind::ExternalFile => {
                let path = self
                    .forecast
                    .as_ref()
                    .ok_or_else(|| Error::Config("external-file predictor needs data.forecast".into()))?;
                Arc::new(ExternalForecast::load(path, cells, slot_of(t0))?)
            }
        };
        sc.rebalance = Some(RebalanceInputs {
            grid: g.grid.clone(),
            costs: g.costs.clone(),
            anchors: g.anchors.clone(),
            predictor,
        });
        Ok(sc)
    }

    /// Runs `cfg` with `seed`, streaming the log to `log` (or discarding it).
    pub fn simulate(&self, cfg: &RunConfig, log: Option<Box<dyn Write + Send>>) -> Result<SimOutput> {
        cfg.check_seed()?;
        let sc = self.scenario(&cfg.sim)?;
        let sink = log.unwrap_or_else(|| Box::new(std::io::sink()));
        let bin = (cfg.output.timeline_bin_s > 0).then(|| cfg.output.timeline_bin_s * 1000);
        simulate(&sc, &cfg.sim, cfg.seed, &cfg.hash(), sink, bin)
    }
}

pub const LOG_FILE: &str = "events.log";
pub const REPORT_FILE: &str = "report.txt";
pub const KPI_FILE: &str = "kpis.txt";
pub const TIMELINE_FILE: &str = "timeline.csv";
pub const CONFIG_FILE: &str = "config.toml";

/// Result of a run that wrote its artifacts.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: KpiReport,
    pub timeline: Option<Timeline>,
    pub end_ms: u64,
    pub events: u64,
    pub artifacts: Vec<PathBuf>,
}

/// Loads the inputs and runs one configuration (see [`run_with`]).
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let inputs = Inputs::load(&cfg.data, &cfg.window)?;
    run_with(&inputs, cfg)
}

/// Runs `cfg` on preloaded inputs and writes the log, report, KPI file,
/// timeline and effective config into `cfg.out`. On failure every artifact
/// written so far is removed.
pub fn run_with(inputs: &Inputs, cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.sim.validate()?;
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let mut written = Vec::new();
    let res = write_artifacts(inputs, cfg, &mut written);
    if res.is_err() {
        for p in &written {
            let _ = fs::remove_file(p);
        }
    }
    res.map(|o| RunOutcome {
        report: o.report,
        timeline: o.timeline,
        end_ms: o.end_ms,
        events: o.events,
        artifacts: written,
    })
}

fn write_artifacts(inputs: &Inputs, cfg: &RunConfig, written: &mut Vec<PathBuf>) -> Result<SimOutput> {
    let put = |written: &mut Vec<PathBuf>, name: &str, body: &str| -> Result<()> {
        let p = cfg.out.join(name);
        written.push(p.clone());
        fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    put(written, CONFIG_FILE, &cfg.to_toml())?;
    let log: Option<Box<dyn Write + Send>> = if cfg.output.write_log {
        let p = cfg.out.join(LOG_FILE);
        written.push(p.clone());
        let f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        Some(Box::new(BufWriter::new(f)))
    } else {
        None
    };
    let out = inputs.simulate(cfg, log)?;
    put(written, REPORT_FILE, &out.report.to_table())?;
    put(written, KPI_FILE, &out.report.to_kv())?;
    if let Some(t) = &out.timeline {
        put(written, TIMELINE_FILE, &t.to_csv())?;
    }
    Ok(out)
}
