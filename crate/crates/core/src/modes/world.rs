use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use rand::Rng;

use super::{Bike, ModeConfig, RebalancingScenario, Scenario, Trip};
use crate::engine::{run_until, substream, Agenda, Event, EventHandle, EventQueue, Handler, SimTime};
use crate::error::{Error, Result};
use crate::geo::{Location, NodeId, PointGrid};
use crate::metrics::{Activity, EventLog, KpiReport, Mode, Record, RunMeta, Timeline, UnservedReason};

pub(super) type Res = std::result::Result<(), String>;

const GRID_CELL_M: f64 = 250.0;

/// Simulation events. User events carry the index of the trip in the
/// scenario; bike events carry the bike id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ev {
    Request(u32),
    AtStation { user: u32, station: u32 },
    AtDock { user: u32, station: u32 },
    AtBike { user: u32, bike: u32, node: NodeId },
    PickedUp { user: u32 },
    Dropoff { user: u32 },
    AtDestination { user: u32 },
    Plug { bike: u32, station: u32, mm: u64 },
    ChargeDone { bike: u32 },
    Strand { bike: u32, mm: u64, node: NodeId },
    Tick,
    Relocated { bike: u32, node: NodeId, mm: u64 },
}

/// A rebalancing move that can be interrupted by an assignment.
#[derive(Debug, Clone)]
pub(super) struct Leg {
    pub handle: EventHandle,
    pub start_ms: u64,
    pub nodes: Vec<NodeId>,
    pub cum_mm: Vec<u64>,
    /// Index of the last node already logged as reached.
    pub reached: usize,
}

#[derive(Debug, Clone, Default)]
pub(super) struct UserTrip {
    pub bike: u32,
    pub pos: NodeId,
    pub leg_mm: u64,
    pub ride_mm: u64,
    pub walk_origin_ms: u64,
    pub wait_ms: u64,
    pub ride_ms: u64,
    pub walk_dest_ms: u64,
    pub attempts: u8,
}

pub(super) struct World<'a> {
    pub sc: &'a Scenario,
    pub cfg: &'a ModeConfig,
    pub seed: u64,
    log: EventLog,
    pub bikes: Vec<Bike>,
    /// Bike ids docked at each station, oldest first.
    pub docks: Vec<VecDeque<u32>>,
    /// Free-floating bikes that can be taken or assigned.
    pub available: PointGrid,
    pub station_grid: PointGrid,
    pub users: Vec<UserTrip>,
    pub anchor_locs: Vec<Location>,
    /// Claimable rebalancing moves by bike id.
    pub legs: BTreeMap<u32, Leg>,
    active: u32,
    last_done: u64,
    events: u64,
}

/// Milliseconds to cover `mm` at `kmh`.
pub(super) fn leg_ms(mm: u64, kmh: f64) -> u64 {
    (mm as f64 / (kmh / 3.6)).round() as u64
}

fn err(e: Error) -> String {
    e.to_string()
}

impl<'a> World<'a> {
    fn new(
        sc: &'a Scenario,
        cfg: &'a ModeConfig,
        seed: u64,
        out: Box<dyn Write + Send>,
        meta: RunMeta,
        bin: Option<u64>,
    ) -> Result<Self> {
        let placement = super::init_fleet(cfg, &sc.stations)?;
        let locs = sc.net.locations();
        let mut station_grid = PointGrid::new(locs, GRID_CELL_M);
        for (i, s) in sc.stations.iter().enumerate() {
            station_grid.insert(i as u32, sc.location(s.node));
        }
        let mut docks = vec![VecDeque::new(); sc.stations.len()];
        let mut available = PointGrid::new(locs, GRID_CELL_M);
        let mut bikes = Vec::with_capacity(placement.len());
        for (id, &s) in placement.iter().enumerate() {
            let node = sc.stations[s as usize].node;
            bikes.push(Bike { node, activity: Activity::Idle, soc: 1.0 });
            if cfg.mode == Mode::Station {
                docks[s as usize].push_back(id as u32);
            } else {
                available.insert(id as u32, sc.location(node));
            }
        }
        let meta = RunMeta {
            stations: if cfg.mode == Mode::Station {
                sc.stations.iter().zip(&docks).map(|(s, d)| (s.capacity, d.len() as u32)).collect()
            } else {
                Vec::new()
            },
            ..meta
        };
        let anchor_locs =
            sc.rebalance.as_ref().map_or_else(Vec::new, |r| r.anchors.iter().map(|&n| sc.location(n)).collect());
        Ok(Self {
            sc,
            cfg,
            seed,
            log: EventLog::new(meta, out, bin)?,
            bikes,
            docks,
            available,
            station_grid,
            users: vec![UserTrip::default(); sc.trips.len()],
            anchor_locs,
            legs: BTreeMap::new(),
            active: 0,
            last_done: 0,
            events: 0,
        })
    }

    pub fn rec(&mut self, now: u64, r: Record) -> Res {
        self.log.record(now, r).map_err(err)
    }

    pub fn trip(&self, u: u32) -> Trip {
        self.sc.trips[u as usize]
    }

    pub fn dist(&self, s: NodeId, t: NodeId) -> std::result::Result<u64, String> {
        self.sc.distance(s, t)
    }

    pub fn set_activity(&mut self, now: u64, bike: u32, activity: Activity) -> Res {
        if self.bikes[bike as usize].activity == activity {
            return Ok(());
        }
        self.bikes[bike as usize].activity = activity;
        self.rec(now, Record::State { bike, activity })
    }

    /// Bernoulli(β) draw, a pure function of (seed, user, attempt, purpose).
    pub fn coin(&self, u: u32, salt: u64) -> bool {
        let id = ((self.trip(u).id as u64) << 8) | self.users[u as usize].attempts as u64;
        substream(self.seed, salt, id).gen::<f64>() < self.cfg.beta
    }

    pub fn served(&mut self, now: u64, u: UserIdx) -> Res {
        let t = &self.users[u as usize];
        let r = Record::Served {
            user: self.sc.trips[u as usize].id,
            bike: t.bike,
            walk_origin_ms: t.walk_origin_ms,
            wait_ms: t.wait_ms,
            ride_ms: t.ride_ms,
            walk_dest_ms: t.walk_dest_ms,
        };
        self.active -= 1;
        self.last_done = self.last_done.max(now);
        self.rec(now, r)
    }

    pub fn unserved(&mut self, now: u64, u: UserIdx, reason: UnservedReason) -> Res {
        let user = self.trip(u).id;
        if reason == UnservedReason::RetryCap {
            self.rec(now, Record::RetryCap { user })?;
        }
        self.active -= 1;
        self.last_done = self.last_done.max(now);
        self.rec(now, Record::Unserved { user, reason })
    }

    /// Counts a failed attempt; `true` when the user gives up.
    pub fn give_up(&mut self, now: u64, u: UserIdx) -> std::result::Result<bool, String> {
        self.users[u as usize].attempts += 1;
        if self.users[u as usize].attempts >= super::RETRY_CAP {
            self.unserved(now, u, UnservedReason::RetryCap)?;
            return Ok(true);
        }
        Ok(false)
    }

    fn request(&mut self, now: u64, u: u32, ag: &mut dyn Agenda<Ev>) -> Res {
        if let Some(next) = self.sc.trips.get(u as usize + 1) {
            ag.schedule_at(SimTime(next.t_ms), Ev::Request(u + 1));
        }
        self.active += 1;
        let trip = self.trip(u);
        self.rec(now, Record::Request { user: trip.id })?;
        self.users[u as usize].pos = trip.origin;
        match self.cfg.mode {
            Mode::Station => self.sb_seek_bike(now, u, ag),
            Mode::Dockless => self.dl_seek(now, u, ag),
            Mode::Autonomous => self.au_request(now, u, ag),
        }
    }
}

pub(super) type UserIdx = u32;

impl Handler<Ev> for World<'_> {
    fn handle(&mut self, ev: Event<Ev>, ag: &mut dyn Agenda<Ev>) -> Res {
        self.events += 1;
        let now = ev.time.0;
        match ev.payload {
            Ev::Request(u) => self.request(now, u, ag),
            Ev::AtStation { user, station } => self.sb_at_station(now, user, station, ag),
            Ev::AtDock { user, station } => self.sb_at_dock(now, user, station, ag),
            Ev::AtDestination { user } => self.served(now, user),
            Ev::AtBike { user, bike, node } => self.dl_at_bike(now, user, bike, node, ag),
            Ev::PickedUp { user } => self.au_picked_up(now, user, ag),
            Ev::Dropoff { user } => self.dropoff(now, user, ag),
            Ev::Plug { bike, station, mm } => self.au_plug(now, bike, station, mm, ag),
            Ev::ChargeDone { bike } => self.au_charged(now, bike),
            Ev::Strand { bike, mm, node } => self.au_strand(now, bike, mm, node),
            Ev::Tick => self.au_tick(now, ag),
            Ev::Relocated { bike, node, mm } => self.au_relocated(now, bike, node, mm, ag),
        }
    }
}

/// Result of one run.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub report: KpiReport,
    pub timeline: Option<Timeline>,
    /// Last user completion or the window end, whichever is later.
    pub end_ms: u64,
    pub events: u64,
}

/// Runs a scenario on the production event queue, streaming the log to `out`.
pub fn simulate(
    sc: &Scenario,
    cfg: &ModeConfig,
    seed: u64,
    config_hash: &str,
    out: Box<dyn Write + Send>,
    timeline_bin_ms: Option<u64>,
) -> Result<SimOutput> {
    simulate_with(&mut EventQueue::new(), sc, cfg, seed, config_hash, out, timeline_bin_ms)
}

/// [`simulate`] on any agenda implementation.
pub fn simulate_with<A: Agenda<Ev>>(
    agenda: &mut A,
    sc: &Scenario,
    cfg: &ModeConfig,
    seed: u64,
    config_hash: &str,
    out: Box<dyn Write + Send>,
    timeline_bin_ms: Option<u64>,
) -> Result<SimOutput> {
    cfg.validate()?;
    let predictive = cfg.mode == Mode::Autonomous && cfg.rebalancing == RebalancingScenario::Predictive;
    if predictive && sc.rebalance.is_none() {
        return Err(Error::Config("predictive rebalancing needs a grid, cost matrix and predictor".into()));
    }
    if cfg.mode == Mode::Autonomous && sc.stations.is_empty() && cfg.fleet_size > 0 {
        return Err(Error::Config("autonomous mode needs stations as charging sites".into()));
    }
    let meta = RunMeta {
        mode: cfg.mode,
        fleet: cfg.fleet_size,
        seed,
        config_hash: config_hash.to_string(),
        t0_ms: sc.t0_ms,
        t1_ms: sc.t1_ms,
        stations: Vec::new(),
    };
    let mut world = World::new(sc, cfg, seed, out, meta, timeline_bin_ms)?;
    agenda.advance_to(SimTime(sc.t0_ms));
    if let Some(first) = sc.trips.first() {
        agenda.schedule_at(SimTime(first.t_ms), Ev::Request(0));
    }
    if predictive {
        agenda.schedule_at(SimTime(sc.t0_ms), Ev::Tick);
    }
    run_until(agenda, &mut world, SimTime(sc.t1_ms))?;
    // Past the window only users still on their way are followed.
    while world.active > 0 {
        let Some(t) = agenda.peek_time() else { break };
        let ev = agenda.pop_until(t).expect("peeked event");
        let (time_ms, seq) = (ev.time.0, ev.seq);
        world.handle(ev, agenda).map_err(|msg| Error::Handler { time_ms, seq, msg })?;
    }
    if world.active > 0 {
        return Err(Error::Log(format!("{} users still active with an empty agenda", world.active)));
    }
    let end_ms = sc.t1_ms.max(world.last_done);
    let events = world.events;
    let (report, timeline) = world.log.finish(end_ms)?;
    Ok(SimOutput { report, timeline, end_ms, events })
}
