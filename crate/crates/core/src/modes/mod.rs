//! User and bike life cycles for the station-based, dockless and autonomous
//! service concepts, driven by the event engine.
//!
//! All movement uses road distances between network nodes. Requests, bikes
//! and stations are snapped to their nearest node; catchment radii are
//! checked on the great-circle distance between snapped nodes.

mod autonomous;
mod dockless;
mod station;
mod world;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use world::{simulate, simulate_with, Ev, SimOutput};

use crate::error::{Error, Result};
use crate::geo::{CostMatrix, GridIndex, Location, NodeId, NodeIndex, PointGrid, RoadNetwork};
use crate::metrics::{Activity, Mode};
use crate::rebalance::{Predictor, PredictorKind};
use crate::routing::Router;

/// Lower bound of road millimeters per great-circle meter between nodes,
/// with slack for per-edge rounding.
pub(crate) const LB_MM_PER_M: f64 = 990.0;

/// Attempts a user makes before giving up on a race for a bike.
pub const RETRY_CAP: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RebalancingScenario {
    #[default]
    None,
    Ideal,
    Predictive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatteryModel {
    pub autonomy_km: f64,
    pub recharge_time_h: f64,
    /// Fraction below which a bike is ineligible and goes to charge.
    pub min_level: f64,
}

impl Default for BatteryModel {
    fn default() -> Self {
        Self { autonomy_km: 70.0, recharge_time_h: 4.5, min_level: 0.15 }
    }
}

impl BatteryModel {
    pub fn autonomy_mm(&self) -> f64 {
        self.autonomy_km * 1e6
    }

    /// Millimeters a bike at `soc` can still drive.
    pub fn range_mm(&self, soc: f64) -> f64 {
        soc * self.autonomy_mm()
    }
}

/// State of charge after driving `mm` millimeters.
pub fn discharge(soc: f64, mm: u64, battery: &BatteryModel) -> f64 {
    (soc - mm as f64 / battery.autonomy_mm()).max(0.0)
}

/// Predictor parameters, in 15-minute slots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictionConfig {
    pub predictor: PredictorKind,
    /// Input window W: minimum history before a forecast is trusted.
    pub window: u64,
    /// Prediction ahead P.
    pub ahead: u64,
    /// Re-invocation period T.
    pub period: u64,
    /// Slack penalty; defaults to ten times the largest cell distance.
    pub lambda_mm: Option<u64>,
    /// Bikes on a rebalancing move stay assignable. A claimed bike leaves
    /// from the last route node it has reached.
    pub claim_en_route: bool,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        Self {
            predictor: PredictorKind::BaselineHistorical,
            window: 4,
            ahead: 1,
            period: 1,
            lambda_mm: None,
            claim_en_route: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeConfig {
    pub mode: Mode,
    pub fleet_size: u32,
    pub walk_radius_m: f64,
    pub walking_speed_kmh: f64,
    pub riding_speed_kmh: f64,
    pub autonomous_speed_kmh: f64,
    pub autonomous_radius_m: f64,
    /// Probability of a station rebalancing request.
    pub beta: f64,
    pub min_bikes_docks: u32,
    pub rebalancing: RebalancingScenario,
    pub battery: BatteryModel,
    pub prediction: PredictionConfig,
}

impl Default for ModeConfig {
    fn default() -> Self {
        Self::nominal(Mode::Station)
    }
}

impl ModeConfig {
    /// Nominal parameters of each service concept.
    pub fn nominal(mode: Mode) -> Self {
        let base = Self {
            mode,
            fleet_size: 3500,
            walk_radius_m: 300.0,
            walking_speed_kmh: 5.0,
            riding_speed_kmh: 10.2,
            autonomous_speed_kmh: 8.0,
            autonomous_radius_m: 2000.0,
            beta: 0.9,
            min_bikes_docks: 3,
            rebalancing: RebalancingScenario::None,
            battery: BatteryModel::default(),
            prediction: PredictionConfig::default(),
        };
        match mode {
            Mode::Station => base,
            Mode::Dockless => Self { fleet_size: 8000, ..base },
            Mode::Autonomous => Self { fleet_size: 1000, ..base },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("walking_speed_kmh", self.walking_speed_kmh),
            ("riding_speed_kmh", self.riding_speed_kmh),
            ("autonomous_speed_kmh", self.autonomous_speed_kmh),
            ("battery.autonomy_km", self.battery.autonomy_km),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("walk_radius_m", self.walk_radius_m), ("autonomous_radius_m", self.autonomous_radius_m)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        if !(self.battery.recharge_time_h >= 0.0 && self.battery.recharge_time_h.is_finite()) {
            return bad(format!("battery.recharge_time_h must be >= 0, got {}", self.battery.recharge_time_h));
        }
        if !(0.0..1.0).contains(&self.battery.min_level) {
            return bad(format!("battery.min_level must lie in [0, 1), got {}", self.battery.min_level));
        }
        if self.prediction.period == 0 {
            return bad("prediction.period must be >= 1".into());
        }
        if self.rebalancing != RebalancingScenario::None && self.mode != Mode::Autonomous {
            return bad("rebalancing scenarios apply to autonomous mode only".into());
        }
        Ok(())
    }
}

/// A docking station (also a charging site in autonomous mode).
#[derive(Debug, Clone, PartialEq)]
pub struct StationSite {
    pub name: String,
    pub node: NodeId,
    pub capacity: u32,
}

/// A request snapped onto the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trip {
    pub id: u32,
    pub t_ms: u64,
    pub origin: NodeId,
    pub destination: NodeId,
}

/// Inputs of predictive rebalancing.
#[derive(Clone)]
pub struct RebalanceInputs {
    pub grid: Arc<GridIndex>,
    pub costs: Arc<CostMatrix>,
    /// Node nearest each cell centroid; moves drive there.
    pub anchors: Vec<NodeId>,
    pub predictor: Arc<dyn Predictor>,
}

/// Immutable inputs of a run; cheap to clone and shared across sweeps.
#[derive(Clone)]
pub struct Scenario {
    pub net: Arc<RoadNetwork>,
    pub router: Arc<dyn Router + Send + Sync>,
    pub stations: Arc<Vec<StationSite>>,
    /// Requests of the window, sorted by time.
    pub trips: Arc<Vec<Trip>>,
    pub t0_ms: u64,
    pub t1_ms: u64,
    pub rebalance: Option<RebalanceInputs>,
}

impl Scenario {
    /// Snaps stations and requests to the network. Requests outside
    /// `[t0_ms, t1_ms)` are dropped.
    pub fn new(
        net: Arc<RoadNetwork>,
        router: Arc<dyn Router + Send + Sync>,
        stations: &[(String, Location, u32)],
        requests: &[crate::demandio::Request],
        t0_ms: u64,
        t1_ms: u64,
    ) -> Result<Self> {
        if t1_ms <= t0_ms {
            return Err(Error::Config(format!("empty window [{t0_ms}, {t1_ms}) ms")));
        }
        let index = NodeIndex::new(&net);
        let snap = |p: &Location| index.nearest(p).map(|x| x.0).ok_or(Error::EmptyNetwork(""));
        let stations = stations
            .iter()
            .map(|(name, loc, cap)| Ok(StationSite { name: name.clone(), node: snap(loc)?, capacity: *cap }))
            .collect::<Result<Vec<_>>>()?;
        let mut trips = requests
            .iter()
            .filter(|r| r.t_ms >= t0_ms && r.t_ms < t1_ms)
            .map(|r| Ok(Trip { id: r.id, t_ms: r.t_ms, origin: snap(&r.origin)?, destination: snap(&r.destination)? }))
            .collect::<Result<Vec<_>>>()?;
        trips.sort_by_key(|t| (t.t_ms, t.id));
        Ok(Self { net, router, stations: Arc::new(stations), trips: Arc::new(trips), t0_ms, t1_ms, rebalance: None })
    }

    pub fn location(&self, node: NodeId) -> Location {
        self.net.location(node)
    }

    pub fn distance(&self, s: NodeId, t: NodeId) -> std::result::Result<u64, String> {
        self.router.distance(s, t).ok_or_else(|| format!("no route from node {s} to node {t}"))
    }
}

/// Bikes per station proportional to capacity, largest remainder first
/// (ties to the lower station index).
pub fn proportional_counts(capacities: &[u32], fleet: u32) -> Vec<u32> {
    let total: u64 = capacities.iter().map(|&c| c as u64).sum();
    if total == 0 {
        return vec![0; capacities.len()];
    }
    let mut counts: Vec<u32> = capacities.iter().map(|&c| (fleet as u64 * c as u64 / total) as u32).collect();
    let mut left = fleet - counts.iter().sum::<u32>();
    let mut order: Vec<usize> = (0..capacities.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(fleet as u64 * capacities[i] as u64 % total), i));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Initial bike placement: the station index of each bike, ids assigned
/// station by station. Station mode rejects fleets that would leave fewer
/// free docks than the configured minimum (and at least one).
pub fn init_fleet(cfg: &ModeConfig, stations: &[StationSite]) -> Result<Vec<u32>> {
    if cfg.fleet_size > 0 && stations.is_empty() {
        return Err(Error::Config("bikes are placed at stations, but there are none".into()));
    }
    let caps: Vec<u32> = stations.iter().map(|s| s.capacity).collect();
    if cfg.mode == Mode::Station {
        let total: u64 = caps.iter().map(|&c| c as u64).sum();
        let free = cfg.min_bikes_docks.max(1) as u64;
        if cfg.fleet_size as u64 + free > total {
            return Err(Error::Config(format!(
                "fleet of {} leaves fewer than {free} free docks (total capacity {total})",
                cfg.fleet_size
            )));
        }
    }
    let counts = proportional_counts(&caps, cfg.fleet_size);
    Ok(counts.iter().enumerate().flat_map(|(s, &k)| std::iter::repeat_n(s as u32, k as usize)).collect())
}

/// A bike as seen by assignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bike {
    pub node: NodeId,
    pub activity: Activity,
    pub soc: f64,
}

/// Assignment rule: an idle (or, if it is in `available`, rebalancing)
/// bike with `soc >= min_level` within
/// `radius_m` (great-circle, `None` for unlimited) whose remaining range
/// covers the drive to the user plus `ride_mm`. Returns the eligible bike
/// with the smallest road distance to `origin`, ties to the smallest id,
/// and that distance.
#[allow(clippy::too_many_arguments)]
pub fn assign_bike(
    available: &PointGrid,
    bikes: &[Bike],
    router: &dyn Router,
    net: &RoadNetwork,
    origin: NodeId,
    radius_m: Option<f64>,
    battery: &BatteryModel,
    ride_mm: u64,
) -> Option<(u32, u64)> {
    let p = net.location(origin);
    available.nearest_by(&p, radius_m, LB_MM_PER_M, |c| {
        let b = &bikes[c.id as usize];
        if !matches!(b.activity, Activity::Idle | Activity::Rebalancing) || b.soc < battery.min_level {
            return None;
        }
        let d = router.distance(b.node, origin)?;
        (battery.range_mm(b.soc) >= (d + ride_mm) as f64).then_some(d)
    })
}
