use std::fmt::Write as _;

use super::{Activity, Entry, Record, RecordSink, RunMeta};

/// One timeline bin: time-weighted mean counts plus event counts.
#[derive(Debug, Clone, PartialEq)]
pub struct TimelineRow {
    pub start_ms: u64,
    pub users_walking: f64,
    pub users_waiting: f64,
    pub users_riding: f64,
    /// Mean bikes per [`Activity`].
    pub bikes: [f64; 7],
    pub served: u64,
    pub unserved: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub bin_ms: u64,
    pub rows: Vec<TimelineRow>,
}

impl Timeline {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_start_s,users_walking,users_waiting,users_riding");
        for a in Activity::ALL {
            let _ = write!(s, ",bikes_{}", a.as_str());
        }
        s.push_str(",served,unserved\n");
        for r in &self.rows {
            let _ =
                write!(s, "{},{:.4},{:.4},{:.4}", r.start_ms / 1000, r.users_walking, r.users_waiting, r.users_riding);
            for b in r.bikes {
                let _ = write!(s, ",{b:.4}");
            }
            let _ = writeln!(s, ",{},{}", r.served, r.unserved);
        }
        s
    }

    /// Largest bin mean of bikes in use relative to `fleet`.
    pub fn peak_in_use_share(&self, fleet: u32) -> f64 {
        if fleet == 0 {
            return 0.0;
        }
        self.rows.iter().map(|r| r.bikes[Activity::InUse.index()]).fold(0.0, f64::max) / fleet as f64
    }
}

/// Accumulates the timeline in integer millisecond-weights per bin.
#[derive(Debug, Clone)]
pub struct TimelineBuilder {
    t0: u64,
    bin: u64,
    // [walking, waiting, riding] and per-activity ms-weights, per bin
    users: Vec<[u64; 3]>,
    bikes: Vec<[u64; 7]>,
    served: Vec<u64>,
    unserved: Vec<u64>,
    state: Vec<(Activity, u64)>,
    end: Option<u64>,
}

impl TimelineBuilder {
    pub fn new(meta: &RunMeta, bin_ms: u64) -> Self {
        assert!(bin_ms > 0, "timeline bin must be positive");
        Self {
            t0: meta.t0_ms,
            bin: bin_ms,
            users: Vec::new(),
            bikes: Vec::new(),
            served: Vec::new(),
            unserved: Vec::new(),
            state: vec![(Activity::Idle, meta.t0_ms); meta.fleet as usize],
            end: None,
        }
    }

    fn grow(&mut self, bins: usize) {
        if self.users.len() < bins {
            self.users.resize(bins, [0; 3]);
            self.bikes.resize(bins, [0; 7]);
            self.served.resize(bins, 0);
            self.unserved.resize(bins, 0);
        }
    }

    fn bin_of(&self, t: u64) -> usize {
        (t.saturating_sub(self.t0) / self.bin) as usize
    }

    /// Adds the overlap of `[a, b)` with each bin to `slot(bin)`.
    fn spread(&mut self, a: u64, b: u64, mut add: impl FnMut(&mut Self, usize, u64)) {
        if b <= a {
            return;
        }
        let (a, b) = (a.max(self.t0), b.max(self.t0));
        self.grow(self.bin_of(b.saturating_sub(1)) + 1);
        let mut t = a;
        while t < b {
            let i = self.bin_of(t);
            let edge = self.t0 + (i as u64 + 1) * self.bin;
            let stop = edge.min(b);
            add(self, i, stop - t);
            t = stop;
        }
    }

    pub fn finish(mut self) -> Timeline {
        let end = self.end.unwrap_or(self.t0);
        for id in 0..self.state.len() {
            let (a, since) = self.state[id];
            self.spread(since, end, |s, i, d| s.bikes[i][a.index()] += d);
        }
        let bins = self.bin_of(end.saturating_sub(1)) + 1;
        self.grow(bins);
        let rows = (0..self.users.len())
            .map(|i| {
                let start = self.t0 + i as u64 * self.bin;
                let len = (start + self.bin).min(end.max(start + 1)) - start;
                let mean = |x: u64| x as f64 / len as f64;
                let mut bikes = [0.0; 7];
                for (o, x) in bikes.iter_mut().zip(self.bikes[i]) {
                    *o = mean(x);
                }
                TimelineRow {
                    start_ms: start,
                    users_walking: mean(self.users[i][0]),
                    users_waiting: mean(self.users[i][1]),
                    users_riding: mean(self.users[i][2]),
                    bikes,
                    served: self.served[i],
                    unserved: self.unserved[i],
                }
            })
            .collect();
        Timeline { bin_ms: self.bin, rows }
    }
}

impl RecordSink for TimelineBuilder {
    fn accept(&mut self, e: &Entry) {
        let t = e.time_ms;
        match &e.record {
            Record::Served { walk_origin_ms, wait_ms, ride_ms, walk_dest_ms, .. } => {
                // Activities are contiguous and end at completion.
                let wd0 = t - walk_dest_ms;
                let r0 = wd0 - ride_ms;
                let w0 = r0 - wait_ms;
                let wo0 = w0 - walk_origin_ms;
                self.spread(wo0, w0, |s, i, d| s.users[i][0] += d);
                self.spread(w0, r0, |s, i, d| s.users[i][1] += d);
                self.spread(r0, wd0, |s, i, d| s.users[i][2] += d);
                self.spread(wd0, t, |s, i, d| s.users[i][0] += d);
                let i = self.bin_of(t);
                self.grow(i + 1);
                self.served[i] += 1;
            }
            Record::Unserved { .. } => {
                let i = self.bin_of(t);
                self.grow(i + 1);
                self.unserved[i] += 1;
            }
            Record::State { bike, activity } => {
                if let Some(&(a, since)) = self.state.get(*bike as usize) {
                    self.spread(since, t, |s, i, d| s.bikes[i][a.index()] += d);
                    self.state[*bike as usize] = (*activity, t);
                }
            }
            Record::RunEnd => self.end = Some(t),
            _ => {}
        }
    }
}
