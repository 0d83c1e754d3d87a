use std::fmt::Write as _;

use super::{Activity, Entry, Mode, OdoClass, Record, RecordSink, RunMeta, UnservedReason};
use crate::error::{Error, Result};

const MIN: f64 = 60_000.0;

/// Exact per-bike accumulators.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BikeTotals {
    pub served: u32,
    /// Milliseconds per [`Activity`].
    pub time_ms: [u64; 7],
    /// Millimeters per [`OdoClass`].
    pub odo_mm: [u64; 4],
    pub charges: u32,
    pub stranded: bool,
}

#[derive(Debug, Clone)]
struct BikeState {
    activity: Activity,
    since_ms: u64,
    totals: BikeTotals,
}

/// Incremental KPI accumulator; fed online by the event log or offline by a
/// log replay, producing identical reports.
#[derive(Debug, Clone)]
pub struct KpiBuilder {
    meta: RunMeta,
    demand: u64,
    served: u64,
    unserved: [u64; 4],
    walk_origin_ms: u64,
    wait_ms: u64,
    ride_ms: u64,
    walk_dest_ms: u64,
    over_10: u64,
    over_15: u64,
    bikes: Vec<BikeState>,
    docked: Vec<u32>,
    occupancy_violations: u64,
    rebalanced: u64,
    retry_cap_hits: u64,
    rebalance_moves: u64,
    records: u64,
    end_ms: Option<u64>,
    error: Option<String>,
}

impl KpiBuilder {
    pub fn new(meta: RunMeta) -> Self {
        let bike = BikeState { activity: Activity::Idle, since_ms: meta.t0_ms, totals: BikeTotals::default() };
        let docked = meta.stations.iter().map(|s| s.1).collect();
        Self {
            bikes: vec![bike; meta.fleet as usize],
            docked,
            meta,
            demand: 0,
            served: 0,
            unserved: [0; 4],
            walk_origin_ms: 0,
            wait_ms: 0,
            ride_ms: 0,
            walk_dest_ms: 0,
            over_10: 0,
            over_15: 0,
            occupancy_violations: 0,
            rebalanced: 0,
            retry_cap_hits: 0,
            rebalance_moves: 0,
            records: 0,
            end_ms: None,
            error: None,
        }
    }

    fn bike(&mut self, id: u32) -> Option<&mut BikeState> {
        let n = self.bikes.len();
        match self.bikes.get_mut(id as usize) {
            Some(b) => Some(b),
            None => {
                self.error.get_or_insert_with(|| format!("bike {id} outside fleet of {n}"));
                None
            }
        }
    }

    /// The comparative "wait or walk" figure for one served trip.
    fn wait_or_walk(mode: Mode, walk_origin: u64, wait: u64, walk_dest: u64) -> u64 {
        match mode {
            Mode::Station => walk_origin + walk_dest,
            Mode::Dockless => walk_origin,
            Mode::Autonomous => wait,
        }
    }

    pub fn demand(&self) -> u64 {
        self.demand
    }

    pub fn served(&self) -> u64 {
        self.served
    }

    pub fn report(&self) -> Result<KpiReport> {
        if let Some(e) = &self.error {
            return Err(Error::Log(e.clone()));
        }
        let end = self.end_ms.ok_or(Error::TruncatedLog)?;
        let m = &self.meta;
        let fleet = m.fleet as f64;
        let days = m.days();
        let horizon_ms = end - m.t0_ms;
        let per_served = |sum: u64| (self.served > 0).then(|| sum as f64 / self.served as f64 / MIN);
        let pct = |x: u64, of: u64| {
            if of == 0 {
                None
            } else {
                Some(100.0 * x as f64 / of as f64)
            }
        };
        let unserved: u64 = self.unserved.iter().sum();

        let mut odo = [0u64; 4];
        let mut time = [0u64; 7];
        let mut used = 0u64;
        let mut charges = 0u64;
        let mut stranded = 0u64;
        let mut bikes = Vec::with_capacity(self.bikes.len());
        for b in &self.bikes {
            let mut t = b.totals.clone();
            t.time_ms[b.activity.index()] += end - b.since_ms;
            for (a, x) in odo.iter_mut().zip(t.odo_mm) {
                *a += x;
            }
            for (a, x) in time.iter_mut().zip(t.time_ms) {
                *a += x;
            }
            used += (t.served > 0) as u64;
            charges += t.charges as u64;
            stranded += t.stranded as u64;
            bikes.push(t);
        }
        let vkt_mm: u64 = odo.iter().sum();
        let fleet_time: u64 = time.iter().sum();
        let tsplit = |acts: &[Activity]| pct(acts.iter().map(|a| time[a.index()]).sum(), fleet_time);

        Ok(KpiReport {
            mode: m.mode,
            fleet: m.fleet,
            seed: m.seed,
            days,
            horizon_ms,
            demand: self.demand,
            served: self.served,
            unserved,
            unserved_by_reason: self.unserved,
            served_pct: pct(self.served, self.demand),
            unserved_pct: pct(unserved, self.demand),
            avg_trip_min: per_served(self.walk_origin_ms + self.wait_ms + self.ride_ms + self.walk_dest_ms),
            avg_walk_origin_min: per_served(self.walk_origin_ms),
            avg_wait_min: per_served(self.wait_ms),
            avg_ride_min: per_served(self.ride_ms),
            avg_walk_dest_min: per_served(self.walk_dest_ms),
            wait_or_walk_min: per_served(match m.mode {
                Mode::Station => self.walk_origin_ms + self.walk_dest_ms,
                Mode::Dockless => self.walk_origin_ms,
                Mode::Autonomous => self.wait_ms,
            }),
            over_10_min_pct: pct(self.over_10, self.served),
            over_15_min_pct: pct(self.over_15, self.served),
            bikes_used_pct: pct(used, m.fleet as u64),
            trips_per_bike_day: (m.fleet > 0 && days > 0.0).then(|| self.served as f64 / fleet / days),
            rebalanced_bikes: self.rebalanced,
            trips_per_rebalanced: (self.rebalanced > 0).then(|| self.served as f64 / self.rebalanced as f64),
            rebalance_moves: self.rebalance_moves,
            total_charges: charges,
            charges_per_day: (days > 0.0).then(|| charges as f64 / days),
            stranded_bikes: stranded,
            retry_cap_hits: self.retry_cap_hits,
            occupancy_violations: self.occupancy_violations,
            vkt_mm,
            vkt_mm_by_class: odo,
            vkt_total_km: vkt_mm as f64 / 1e6,
            vkt_per_bike_km: (m.fleet > 0).then(|| vkt_mm as f64 / 1e6 / fleet),
            vkt_in_use_pct: pct(odo[OdoClass::InUse.index()], vkt_mm),
            vkt_pickup_pct: pct(odo[OdoClass::Pickup.index()], vkt_mm),
            vkt_rebalancing_pct: pct(odo[OdoClass::Rebalancing.index()], vkt_mm),
            vkt_charge_pct: pct(odo[OdoClass::Charge.index()], vkt_mm),
            time_in_use_pct: tsplit(&[Activity::InUse]),
            time_pickup_pct: tsplit(&[Activity::Pickup]),
            time_rebalancing_pct: tsplit(&[Activity::Rebalancing]),
            time_charge_pct: tsplit(&[Activity::ToCharger, Activity::Charging]),
            time_idling_pct: tsplit(&[Activity::Idle]),
            time_stranded_pct: tsplit(&[Activity::Stranded]),
            records: self.records,
            bikes,
        })
    }
}

impl RecordSink for KpiBuilder {
    fn accept(&mut self, e: &Entry) {
        self.records += 1;
        let t = e.time_ms;
        match &e.record {
            Record::Request { .. } => self.demand += 1,
            Record::Served { bike, walk_origin_ms, wait_ms, ride_ms, walk_dest_ms, .. } => {
                self.served += 1;
                self.walk_origin_ms += walk_origin_ms;
                self.wait_ms += wait_ms;
                self.ride_ms += ride_ms;
                self.walk_dest_ms += walk_dest_ms;
                let ww = Self::wait_or_walk(self.meta.mode, *walk_origin_ms, *wait_ms, *walk_dest_ms);
                self.over_10 += (ww > 10 * 60_000) as u64;
                self.over_15 += (ww > 15 * 60_000) as u64;
                if let Some(b) = self.bike(*bike) {
                    b.totals.served += 1;
                }
            }
            Record::Unserved { reason, .. } => self.unserved[reason.index()] += 1,
            Record::State { bike, activity } => {
                if let Some(b) = self.bike(*bike) {
                    b.totals.time_ms[b.activity.index()] += t - b.since_ms;
                    b.activity = *activity;
                    b.since_ms = t;
                    if *activity == Activity::ToCharger {
                        b.totals.charges += 1;
                    }
                }
            }
            Record::Move { bike, class, mm, .. } => {
                if let Some(b) = self.bike(*bike) {
                    b.totals.odo_mm[class.index()] += mm;
                }
            }
            Record::Occupancy { station, docked } => match self.docked.get_mut(*station as usize) {
                Some(d) => {
                    *d = *docked;
                    if *docked > self.meta.stations[*station as usize].0 {
                        self.occupancy_violations += 1;
                    }
                }
                None => self.error = Some(format!("station {station} not in header")),
            },
            Record::Rebalanced { .. } => self.rebalanced += 1,
            Record::Stranded { bike } => {
                if let Some(b) = self.bike(*bike) {
                    b.totals.stranded = true;
                }
            }
            Record::RetryCap { .. } => self.retry_cap_hits += 1,
            Record::Tick { moves } => self.rebalance_moves += *moves as u64,
            Record::Plugged { .. } | Record::Charged { .. } => {}
            Record::RunEnd => self.end_ms = Some(t),
        }
    }
}

/// Every KPI of a run. Ratios with an empty denominator are `None` and
/// print as `-`.
#[derive(Debug, Clone, PartialEq)]
pub struct KpiReport {
    pub mode: Mode,
    pub fleet: u32,
    pub seed: u64,
    pub days: f64,
    pub horizon_ms: u64,
    pub demand: u64,
    pub served: u64,
    pub unserved: u64,
    /// Indexed by [`UnservedReason`].
    pub unserved_by_reason: [u64; 4],
    pub served_pct: Option<f64>,
    pub unserved_pct: Option<f64>,
    pub avg_trip_min: Option<f64>,
    pub avg_walk_origin_min: Option<f64>,
    pub avg_wait_min: Option<f64>,
    pub avg_ride_min: Option<f64>,
    pub avg_walk_dest_min: Option<f64>,
    pub wait_or_walk_min: Option<f64>,
    pub over_10_min_pct: Option<f64>,
    pub over_15_min_pct: Option<f64>,
    pub bikes_used_pct: Option<f64>,
    pub trips_per_bike_day: Option<f64>,
    pub rebalanced_bikes: u64,
    pub trips_per_rebalanced: Option<f64>,
    pub rebalance_moves: u64,
    pub total_charges: u64,
    pub charges_per_day: Option<f64>,
    pub stranded_bikes: u64,
    pub retry_cap_hits: u64,
    pub occupancy_violations: u64,
    pub vkt_mm: u64,
    /// Indexed by [`OdoClass`].
    pub vkt_mm_by_class: [u64; 4],
    pub vkt_total_km: f64,
    pub vkt_per_bike_km: Option<f64>,
    pub vkt_in_use_pct: Option<f64>,
    pub vkt_pickup_pct: Option<f64>,
    pub vkt_rebalancing_pct: Option<f64>,
    pub vkt_charge_pct: Option<f64>,
    pub time_in_use_pct: Option<f64>,
    pub time_pickup_pct: Option<f64>,
    pub time_rebalancing_pct: Option<f64>,
    pub time_charge_pct: Option<f64>,
    pub time_idling_pct: Option<f64>,
    pub time_stranded_pct: Option<f64>,
    pub records: u64,
    pub bikes: Vec<BikeTotals>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.6}"))
}

impl KpiReport {
    pub fn unserved_pct_for(&self, reason: UnservedReason) -> Option<f64> {
        (self.demand > 0).then(|| 100.0 * self.unserved_by_reason[reason.index()] as f64 / self.demand as f64)
    }

    /// `(key, value)` pairs in a stable order; the key-value file and the
    /// sweep matrix share them.
    pub fn fields(&self) -> Vec<(String, String)> {
        let mut f: Vec<(String, String)> = vec![
            ("mode".into(), self.mode.as_str().into()),
            ("fleet".into(), self.fleet.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("days".into(), format!("{:.6}", self.days)),
            ("horizon_ms".into(), self.horizon_ms.to_string()),
            ("demand".into(), self.demand.to_string()),
            ("served".into(), self.served.to_string()),
            ("unserved".into(), self.unserved.to_string()),
            ("served_pct".into(), opt(self.served_pct)),
            ("unserved_pct".into(), opt(self.unserved_pct)),
        ];
        for r in UnservedReason::ALL {
            f.push((format!("unserved_{}_pct", r.as_str()), opt(self.unserved_pct_for(*r))));
        }
        let rest: [(&str, String); 33] = [
            ("avg_trip_min", opt(self.avg_trip_min)),
            ("avg_walk_origin_min", opt(self.avg_walk_origin_min)),
            ("avg_wait_min", opt(self.avg_wait_min)),
            ("avg_ride_min", opt(self.avg_ride_min)),
            ("avg_walk_dest_min", opt(self.avg_walk_dest_min)),
            ("wait_or_walk_min", opt(self.wait_or_walk_min)),
            ("over_10_min_pct", opt(self.over_10_min_pct)),
            ("over_15_min_pct", opt(self.over_15_min_pct)),
            ("bikes_used_pct", opt(self.bikes_used_pct)),
            ("trips_per_bike_day", opt(self.trips_per_bike_day)),
            ("rebalanced_bikes", self.rebalanced_bikes.to_string()),
            ("trips_per_rebalanced", opt(self.trips_per_rebalanced)),
            ("rebalance_moves", self.rebalance_moves.to_string()),
            ("total_charges", self.total_charges.to_string()),
            ("charges_per_day", opt(self.charges_per_day)),
            ("stranded_bikes", self.stranded_bikes.to_string()),
            ("retry_cap_hits", self.retry_cap_hits.to_string()),
            ("occupancy_violations", self.occupancy_violations.to_string()),
            ("vkt_total_km", format!("{:.6}", self.vkt_total_km)),
            ("vkt_per_bike_km", opt(self.vkt_per_bike_km)),
            ("vkt_in_use_pct", opt(self.vkt_in_use_pct)),
            ("vkt_pickup_pct", opt(self.vkt_pickup_pct)),
            ("vkt_rebalancing_pct", opt(self.vkt_rebalancing_pct)),
            ("vkt_charge_pct", opt(self.vkt_charge_pct)),
            ("time_in_use_pct", opt(self.time_in_use_pct)),
            ("time_pickup_pct", opt(self.time_pickup_pct)),
            ("time_rebalancing_pct", opt(self.time_rebalancing_pct)),
            ("time_charge_pct", opt(self.time_charge_pct)),
            ("time_idling_pct", opt(self.time_idling_pct)),
            ("time_stranded_pct", opt(self.time_stranded_pct)),
            ("vkt_mm", self.vkt_mm.to_string()),
            (
                "bikes_stranded_share_pct",
                opt((self.fleet > 0).then(|| 100.0 * self.stranded_bikes as f64 / self.fleet as f64)),
            ),
            ("records", self.records.to_string()),
        ];
        f.extend(rest.into_iter().map(|(k, v)| (k.to_string(), v)));
        f
    }

    /// Machine-readable `key = value` lines.
    pub fn to_kv(&self) -> String {
        self.fields().into_iter().fold(String::new(), |mut s, (k, v)| {
            let _ = writeln!(s, "{k} = {v}");
            s
        })
    }

    /// Parses the output of [`Self::to_kv`] into ordered pairs.
    pub fn parse_kv(text: &str) -> Vec<(String, String)> {
        text.lines().filter_map(|l| l.split_once(" = ")).map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    /// Human-readable summary table.
    pub fn to_table(&self) -> String {
        let p = |v: Option<f64>| v.map_or_else(|| "-".into(), |x| format!("{x:.2} %"));
        let mn = |v: Option<f64>| v.map_or_else(|| "-".into(), |x| format!("{x:.2} min"));
        let n = |v: Option<f64>| v.map_or_else(|| "-".into(), |x| format!("{x:.2}"));
        let mut rows: Vec<(&str, String)> = vec![
            ("Mode", self.mode.as_str().into()),
            ("Fleet size", self.fleet.to_string()),
            ("Simulated days", format!("{:.2}", self.days)),
            ("Demand", self.demand.to_string()),
            ("Served trips", p(self.served_pct)),
            ("Unserved trips", p(self.unserved_pct)),
            ("  no walkable station", p(self.unserved_pct_for(UnservedReason::NoWalkableStations))),
            ("  no bikes", p(self.unserved_pct_for(UnservedReason::NoBikes))),
            ("  no assignable bike", p(self.unserved_pct_for(UnservedReason::NoAssignableBike))),
            ("  retry cap", p(self.unserved_pct_for(UnservedReason::RetryCap))),
            ("Average trip time", mn(self.avg_trip_min)),
            ("  walk to bike", mn(self.avg_walk_origin_min)),
            ("  wait", mn(self.avg_wait_min)),
            ("  ride", mn(self.avg_ride_min)),
            ("  walk to destination", mn(self.avg_walk_dest_min)),
            ("Wait or walk time", mn(self.wait_or_walk_min)),
            ("Wait or walk > 10 min", p(self.over_10_min_pct)),
            ("Wait or walk > 15 min", p(self.over_15_min_pct)),
            ("Bikes used", p(self.bikes_used_pct)),
            ("Trips/bike/day", n(self.trips_per_bike_day)),
        ];
        if self.mode == Mode::Station {
            rows.push(("Rebalanced bikes", self.rebalanced_bikes.to_string()));
            rows.push(("Trips per rebalanced bike", n(self.trips_per_rebalanced)));
        }
        if self.mode == Mode::Autonomous {
            rows.extend([
                ("Total charges", self.total_charges.to_string()),
                ("Charges/day", n(self.charges_per_day)),
                ("Stranded bikes", self.stranded_bikes.to_string()),
                ("v.k.t. total", format!("{:.2} km", self.vkt_total_km)),
                ("v.k.t. per bike", self.vkt_per_bike_km.map_or("-".into(), |x| format!("{x:.2} km"))),
                ("v.k.t. in use", p(self.vkt_in_use_pct)),
                ("v.k.t. pickup", p(self.vkt_pickup_pct)),
                ("v.k.t. rebalancing", p(self.vkt_rebalancing_pct)),
                ("v.k.t. charge", p(self.vkt_charge_pct)),
                ("Time in use", p(self.time_in_use_pct)),
                ("Time pickup", p(self.time_pickup_pct)),
                ("Time rebalancing", p(self.time_rebalancing_pct)),
                ("Time charge", p(self.time_charge_pct)),
                ("Time idling", p(self.time_idling_pct)),
                ("Time stranded", p(self.time_stranded_pct)),
            ]);
        }
        let w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        rows.iter().fold(String::new(), |mut s, (k, v)| {
            let _ = writeln!(s, "{k:<w$}  {v:>12}");
            s
        })
    }
}
