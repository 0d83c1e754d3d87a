//! Predictive rebalancing: per-cell demand forecasts and the transportation
//! problem that moves idle bikes toward forecast demand.

mod transport;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use transport::{solve_transportation, TransportPlan};

use crate::error::{Error, Result};
use crate::geo::{CostMatrix, Location};

/// Demand aggregation slot.
pub const SLOT_MS: u64 = 15 * 60 * 1000;
pub const SLOTS_PER_WEEK: u64 = 7 * 24 * 4;

pub fn slot_of(t_ms: u64) -> u64 {
    t_ms / SLOT_MS
}

/// Request counts per (slot, cell), slots absolute from the request epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DemandHistory {
    cells: usize,
    first_slot: u64,
    counts: Vec<Vec<u32>>,
}

impl DemandHistory {
    pub fn new(cells: usize) -> Self {
        Self { cells, first_slot: 0, counts: Vec::new() }
    }

    /// Aggregates `(time_ms, cell)` observations.
    pub fn from_events(cells: usize, events: impl IntoIterator<Item = (u64, u32)>) -> Self {
        let events: Vec<(u64, u32)> = events.into_iter().collect();
        let mut h = Self::new(cells);
        let Some(lo) = events.iter().map(|e| slot_of(e.0)).min() else {
            return h;
        };
        let hi = events.iter().map(|e| slot_of(e.0)).max().unwrap_or(lo);
        h.first_slot = lo;
        h.counts = vec![vec![0; cells]; (hi - lo + 1) as usize];
        for (t, c) in events {
            h.counts[(slot_of(t) - lo) as usize][c as usize] += 1;
        }
        h
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Slots `[first, end)` covered by the history.
    pub fn span(&self) -> (u64, u64) {
        (self.first_slot, self.first_slot + self.counts.len() as u64)
    }

    pub fn slot(&self, s: u64) -> Option<&[u32]> {
        s.checked_sub(self.first_slot).and_then(|i| self.counts.get(i as usize)).map(|v| v.as_slice())
    }
}

/// Forecast of bikes demanded per cell in one slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemandForecast {
    pub slot: u64,
    pub demand: Vec<u32>,
}

/// A demand model queried at a rebalancing tick.
pub trait Predictor: Send + Sync {
    /// Demand per cell for `target_slot`, computed at `now_slot`.
    fn forecast(&self, now_slot: u64, target_slot: u64) -> DemandForecast;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorKind {
    #[default]
    BaselineHistorical,
    PerfectForesight,
    ExternalFile,
}

/// Mean of the same slot-of-week over all history weeks, rounded half-up.
/// Needs at least `window` slots of history before the query.
pub struct HistoricalMean {
    history: DemandHistory,
    window: u64,
}

impl HistoricalMean {
    pub fn new(history: DemandHistory, window: u64) -> Self {
        Self { history, window }
    }
}

/// `round(sum / k)` with halves rounded up, in exact integer arithmetic.
pub fn mean_half_up(sum: u64, k: u64) -> u64 {
    (2 * sum + k) / (2 * k)
}

impl Predictor for HistoricalMean {
    fn forecast(&self, now_slot: u64, target_slot: u64) -> DemandForecast {
        let cells = self.history.cells();
        let (first, end) = self.history.span();
        let covered = end.min(now_slot).saturating_sub(first);
        if self.history.is_empty() || covered < self.window.max(1) {
            log::warn!("insufficient demand history at slot {now_slot}; forecasting zero");
            return DemandForecast { slot: target_slot, demand: vec![0; cells] };
        }
        let mut sums = vec![0u64; cells];
        let mut k = 0u64;
        let mut s = target_slot;
        while s >= SLOTS_PER_WEEK {
            s -= SLOTS_PER_WEEK;
            if s < first {
                break;
            }
            // Only observations strictly before the query time.
            if s < now_slot {
                if let Some(row) = self.history.slot(s) {
                    sums.iter_mut().zip(row).for_each(|(a, &x)| *a += x as u64);
                }
                if s < end {
                    k += 1;
                }
            }
        }
        let demand = if k == 0 {
            log::warn!("no history week covers slot {target_slot}; forecasting zero");
            vec![0; cells]
        } else {
            sums.iter().map(|&x| mean_half_up(x, k) as u32).collect()
        };
        DemandForecast { slot: target_slot, demand }
    }
}

/// Upper-bound oracle: returns the demand that will actually occur.
pub struct PerfectForesight {
    actual: DemandHistory,
}

impl PerfectForesight {
    pub fn new(actual: DemandHistory) -> Self {
        Self { actual }
    }
}

impl Predictor for PerfectForesight {
    fn forecast(&self, _now_slot: u64, target_slot: u64) -> DemandForecast {
        let demand = self.actual.slot(target_slot).map_or_else(|| vec![0; self.actual.cells()], |r| r.to_vec());
        DemandForecast { slot: target_slot, demand }
    }
}

/// Forecast matrix read from disk: one line per cell, whitespace-separated
/// counts per slot, column 0 being `first_slot`.
pub struct ExternalForecast {
    first_slot: u64,
    by_cell: Vec<Vec<u32>>,
}

impl ExternalForecast {
    pub fn load(path: &Path, cells: usize, first_slot: u64) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, cells, first_slot)
    }

    pub fn parse(text: &str, cells: usize, first_slot: u64) -> Result<Self> {
        let by_cell: Vec<Vec<u32>> = text
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .enumerate()
            .map(|(i, l)| {
                l.split_whitespace()
                    .map(|x| x.parse::<u32>().map_err(|e| Error::Config(format!("forecast row {i}: `{x}`: {e}"))))
                    .collect()
            })
            .collect::<Result<_>>()?;
        if by_cell.len() != cells {
            return Err(Error::Config(format!("forecast file has {} rows, grid has {cells} cells", by_cell.len())));
        }
        Ok(Self { first_slot, by_cell })
    }
}

impl Predictor for ExternalForecast {
    fn forecast(&self, _now_slot: u64, target_slot: u64) -> DemandForecast {
        let col = target_slot.checked_sub(self.first_slot).map(|c| c as usize);
        let demand = self.by_cell.iter().map(|row| col.and_then(|c| row.get(c).copied()).unwrap_or(0)).collect();
        DemandForecast { slot: target_slot, demand }
    }
}

/// An idle bike offered to the planner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdleBike {
    pub id: u32,
    pub cell: u32,
    pub location: Location,
}

/// One planned relocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Move {
    pub bike: u32,
    pub from_cell: u32,
    pub to_cell: u32,
}

/// Builds supply from `idle`, nets it against `forecast`, solves the
/// transportation problem and binds each unit of inter-cell flow to a
/// concrete bike: the one closest to the destination cell's anchor, ties by id.
pub fn plan_moves(
    idle: &[IdleBike],
    forecast: &[u32],
    costs: &CostMatrix,
    lambda: u64,
    anchors: &[Location],
) -> Result<(TransportPlan, Vec<Move>)> {
    let n = forecast.len();
    let mut supply = vec![0u32; n];
    for b in idle {
        supply[b.cell as usize] += 1;
    }
    let net_d: Vec<u32> = (0..n).map(|i| forecast[i].saturating_sub(supply[i])).collect();
    let net_b: Vec<u32> = (0..n).map(|i| supply[i].saturating_sub(forecast[i])).collect();
    let plan = solve_transportation(&net_b, &net_d, costs, &vec![lambda; n])?;
    let mut by_cell: Vec<Vec<IdleBike>> = vec![Vec::new(); n];
    for b in idle {
        by_cell[b.cell as usize].push(*b);
    }
    let mut moves = Vec::new();
    for (i, j, k) in plan.moves() {
        let target = anchors[j];
        let pool = &mut by_cell[i];
        pool.sort_by(|a, b| {
            let (da, db) = (a.location.haversine(&target), b.location.haversine(&target));
            da.total_cmp(&db).then(a.id.cmp(&b.id))
        });
        for b in pool.drain(..k as usize) {
            moves.push(Move { bike: b.id, from_cell: i as u32, to_cell: j as u32 });
        }
    }
    Ok((plan, moves))
}

/// Default λ: ten times the largest finite cell-to-cell cost.
pub fn default_lambda(costs: &CostMatrix) -> u64 {
    10 * costs.max_finite().max(1)
}
