use super::Request;
use crate::rebalance::{slot_of, SLOTS_PER_WEEK};

/// Width of the air-distance histogram bins.
const DIST_BIN_M: f64 = 1000.0;
const DIST_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct DemandStats {
    pub requests: usize,
    /// Counts per hour from `t0_ms`.
    pub per_hour: Vec<u32>,
    /// Counts per 15-minute slot of the week (slot 0 at the epoch's weekday/time).
    pub slot_of_week: Vec<u32>,
    /// Air distance origin→destination in 1 km bins; the last bin is open.
    pub air_km_hist: Vec<u32>,
    pub share_under_5km: f64,
}

/// Summaries of requests at or after `t0_ms`.
pub fn demand_stats(requests: &[Request], t0_ms: u64) -> DemandStats {
    let reqs: Vec<&Request> = requests.iter().filter(|r| r.t_ms >= t0_ms).collect();
    let hours = reqs.iter().map(|r| (r.t_ms - t0_ms) / 3_600_000 + 1).max().unwrap_or(0) as usize;
    let mut per_hour = vec![0u32; hours];
    let mut slot_of_week = vec![0u32; SLOTS_PER_WEEK as usize];
    let mut air_km_hist = vec![0u32; DIST_BINS];
    let mut under5 = 0usize;
    for r in &reqs {
        per_hour[((r.t_ms - t0_ms) / 3_600_000) as usize] += 1;
        slot_of_week[(slot_of(r.t_ms) % SLOTS_PER_WEEK) as usize] += 1;
        let d = r.origin.haversine(&r.destination);
        air_km_hist[((d / DIST_BIN_M) as usize).min(DIST_BINS - 1)] += 1;
        if d < 5000.0 {
            under5 += 1;
        }
    }
    let share_under_5km = if reqs.is_empty() { 0.0 } else { under5 as f64 / reqs.len() as f64 };
    DemandStats { requests: reqs.len(), per_hour, slot_of_week, air_km_hist, share_under_5km }
}

impl DemandStats {
    /// `hour,count` lines.
    pub fn hourly_csv(&self) -> String {
        let mut s = String::from("hour,requests\n");
        for (h, c) in self.per_hour.iter().enumerate() {
            s.push_str(&format!("{h},{c}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Location;

    fn req(t_ms: u64, km: f64) -> Request {
        let o = Location { lon: -71.0, lat: 42.0 };
        Request { id: 0, t_ms, origin: o, destination: o.destination(0.0, km * 1000.0) }
    }

    #[test]
    fn single_request_one_hour_bin() {
        let s = demand_stats(&[req(5_400_000, 1.0)], 0);
        assert_eq!(s.per_hour, vec![0, 1]);
        assert_eq!(s.per_hour.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(s.air_km_hist[1], 1);
        assert_eq!(s.share_under_5km, 1.0);
    }

    #[test]
    fn uniform_week_is_flat() {
        let reqs: Vec<Request> = (0..168 * 6).map(|i| req(i * 600_000 + 1, 6.0)).collect();
        let s = demand_stats(&reqs, 0);
        assert_eq!(s.per_hour.len(), 168);
        assert!(s.per_hour.iter().all(|&c| c == 6));
        assert_eq!(s.share_under_5km, 0.0);
    }
}
