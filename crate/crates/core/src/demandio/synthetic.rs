use chrono::{Duration, NaiveDateTime, Timelike};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;

use super::{parse_time, scatter_requests, RequestFile, StationRecord, TripRecord};
use crate::error::Result;
use crate::geo::{meters_to_mm, write_xml, LocalProjection, Location, RoadNetwork};

/// Parameters of a small synthetic city: a street grid, stations on random
/// intersections and a two-peak weekday demand profile with a downtown
/// attractor.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    /// Intersections per side.
    pub grid: usize,
    pub spacing_m: f64,
    pub center: Location,
    pub stations: usize,
    pub capacity: (u32, u32),
    pub trips_per_day: f64,
    pub days: u32,
    /// Weeks of demand generated before the simulated window.
    pub history_weeks: u32,
    pub start: NaiveDateTime,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            grid: 36,
            spacing_m: 150.0,
            center: Location { lon: -71.0589, lat: 42.3601 },
            stations: 60,
            capacity: (11, 23),
            trips_per_day: 1200.0,
            days: 7,
            history_weeks: 2,
            start: parse_time("2019-10-07 00:00:00").expect("valid literal"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCity {
    pub network: RoadNetwork,
    /// The same street grid as OSM XML.
    pub osm_xml: String,
    pub stations: Vec<StationRecord>,
    /// History weeks followed by the simulated window, sorted by start time.
    pub trips: Vec<TripRecord>,
    pub epoch: NaiveDateTime,
    pub window: (NaiveDateTime, NaiveDateTime),
}

/// Relative demand intensity by hour of day.
fn intensity(weekday: bool, hour: f64) -> f64 {
    let bump = |mu: f64, sigma: f64| (-(hour - mu).powi(2) / (2.0 * sigma * sigma)).exp();
    let night = if (1.0..5.5).contains(&hour) { 0.05 } else { 0.25 };
    if weekday {
        night + 3.0 * bump(8.25, 1.0) + 1.0 * bump(12.5, 1.5) + 3.5 * bump(17.5, 1.4)
    } else {
        night + 2.0 * bump(14.0, 3.0)
    }
}

impl SyntheticCity {
    pub fn generate(spec: &SyntheticSpec) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let n = spec.grid.max(2);
        let proj = LocalProjection::new(spec.center);
        let half = (n - 1) as f64 * spec.spacing_m / 2.0;
        let id = |r: usize, c: usize| (r * n + c) as i64 + 1;
        let nodes: Vec<(i64, Location)> = (0..n)
            .flat_map(|r| (0..n).map(move |c| (r, c)))
            .map(|(r, c)| {
                (id(r, c), proj.to_location(c as f64 * spec.spacing_m - half, r as f64 * spec.spacing_m - half))
            })
            .collect();
        // Every third street runs one way, alternating direction; avenues are two-way.
        let mut ways: Vec<(Vec<i64>, bool)> = Vec::new();
        for r in 0..n {
            let mut refs: Vec<i64> = (0..n).map(|c| id(r, c)).collect();
            let oneway = r % 3 == 1;
            if oneway && r % 2 == 0 {
                refs.reverse();
            }
            ways.push((refs, oneway));
        }
        for c in 0..n {
            ways.push(((0..n).map(|r| id(r, c)).collect(), false));
        }
        let loc = |i: i64| nodes[(i - 1) as usize].1;
        let mut edges = Vec::new();
        for (refs, oneway) in &ways {
            for p in refs.windows(2) {
                let len = meters_to_mm(loc(p[0]).haversine(&loc(p[1])));
                edges.push((p[0], p[1], len));
                if !oneway {
                    edges.push((p[1], p[0], len));
                }
            }
        }
        let osm_xml = write_xml(&nodes, &ways);
        let network = RoadNetwork::build(nodes.clone(), edges)?;

        // Stations on distinct intersections.
        let mut picks: Vec<usize> = (0..nodes.len()).collect();
        for i in 0..spec.stations.min(picks.len()) {
            let j = rng.gen_range(i..picks.len());
            picks.swap(i, j);
        }
        picks.truncate(spec.stations.min(nodes.len()));
        let stations: Vec<StationRecord> = picks
            .iter()
            .enumerate()
            .map(|(k, &p)| StationRecord {
                id: format!("S{k:03}"),
                location: nodes[p].1,
                capacity: rng.gen_range(spec.capacity.0..=spec.capacity.1),
            })
            .collect();

        // Downtown attracts morning trips and emits evening ones.
        let downtown = proj.to_location(half * 0.35, half * 0.2);
        let work: Vec<f64> = stations
            .iter()
            .map(|s| 0.15 + (-(s.location.haversine(&downtown) / (0.35 * half)).powi(2)).exp())
            .collect();
        let home: Vec<f64> = work.iter().map(|w| 1.4 - w.min(1.0)).collect();
        let mixed: Vec<f64> = work.iter().zip(&home).map(|(w, h)| w + h).collect();
        let pick_home = WeightedIndex::new(&home).expect("positive weights");
        let pick_work = WeightedIndex::new(&work).expect("positive weights");
        let pick_mixed = WeightedIndex::new(&mixed).expect("positive weights");

        let epoch = spec.start - Duration::weeks(spec.history_weeks as i64);
        let window = (spec.start, spec.start + Duration::days(spec.days as i64));
        let total_days = spec.history_weeks as i64 * 7 + spec.days as i64;
        let mut trips = Vec::new();
        for day in 0..total_days {
            let date = epoch + Duration::days(day);
            let weekday = chrono::Datelike::weekday(&date).number_from_monday() <= 5;
            let slot_w: Vec<f64> = (0..96).map(|s| intensity(weekday, (s as f64 + 0.5) / 4.0)).collect();
            let slots = WeightedIndex::new(&slot_w).expect("positive weights");
            let mean = spec.trips_per_day * if weekday { 1.0 } else { 0.7 };
            let count = if mean > 0.0 { Poisson::new(mean).expect("positive mean").sample(&mut rng) as u64 } else { 0 };
            for _ in 0..count {
                let slot = slots.sample(&mut rng) as i64;
                let t = date + Duration::milliseconds(slot * 900_000 + rng.gen_range(0..900_000));
                let hour = t.hour();
                let (o_pick, d_pick) = match (weekday, hour) {
                    (true, 5..=11) => (&pick_home, &pick_work),
                    (true, 15..=20) => (&pick_work, &pick_home),
                    _ => (&pick_mixed, &pick_mixed),
                };
                if stations.len() < 2 {
                    break;
                }
                let o = o_pick.sample(&mut rng);
                let mut d = d_pick.sample(&mut rng);
                while d == o {
                    d = d_pick.sample(&mut rng);
                }
                let (so, sd) = (&stations[o], &stations[d]);
                let duration_s = so.location.haversine(&sd.location) * 1.3 / (10.2 / 3.6);
                trips.push(TripRecord {
                    start_time: t,
                    start_station: (so.id.clone(), so.location),
                    end_station: (sd.id.clone(), sd.location),
                    duration_s: Some(duration_s.round()),
                });
            }
        }
        trips.sort_by_key(|t| t.start_time);
        Ok(Self { network, osm_xml, stations, trips, epoch, window })
    }

    /// Scattered requests for history and window, relative to [`Self::epoch`].
    pub fn request_file(&self, seed: u64, radius_m: f64) -> Result<RequestFile> {
        Ok(RequestFile { epoch: self.epoch, requests: scatter_requests(&self.trips, self.epoch, seed, radius_m)? })
    }

    pub fn window_trips(&self) -> impl Iterator<Item = &TripRecord> {
        self.trips.iter().filter(|t| t.start_time >= self.window.0 && t.start_time < self.window.1)
    }
}
