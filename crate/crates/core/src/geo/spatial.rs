use super::location::{LocalProjection, Location};
use super::network::{NodeId, RoadNetwork};

/// Planar distances from the local projection may exceed great-circle
/// distances by a fraction of a percent over metro extents; ring lower
/// bounds are shrunk by this factor so pruning never discards a winner.
const LOWER_BOUND_SLACK: f64 = 0.95;

/// Uniform bucket grid over a projected bounding square.
#[derive(Debug, Clone)]
struct Buckets {
    proj: LocalProjection,
    cell: f64,
    min_x: f64,
    min_y: f64,
    nx: i64,
    ny: i64,
}

impl Buckets {
    fn new(points: &[Location], cell: f64) -> Self {
        let origin = super::location::BoundingBox::covering(points)
            .map(|b| b.center())
            .unwrap_or(Location { lon: 0.0, lat: 0.0 });
        let proj = LocalProjection::new(origin);
        let (mut min_x, mut min_y, mut max_x, mut max_y) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for p in points {
            let (x, y) = proj.to_xy(p);
            min_x = min_x.min(x);
            min_y = min_y.min(y);
            max_x = max_x.max(x);
            max_y = max_y.max(y);
        }
        let nx = ((max_x - min_x) / cell).floor() as i64 + 1;
        let ny = ((max_y - min_y) / cell).floor() as i64 + 1;
        Self { proj, cell, min_x, min_y, nx, ny }
    }

    fn len(&self) -> usize {
        (self.nx * self.ny) as usize
    }

    /// Unclamped bucket coordinates.
    fn coords(&self, p: &Location) -> (i64, i64) {
        let (x, y) = self.proj.to_xy(p);
        (((x - self.min_x) / self.cell).floor() as i64, ((y - self.min_y) / self.cell).floor() as i64)
    }

    fn inside(&self, (cx, cy): (i64, i64)) -> bool {
        cx >= 0 && cy >= 0 && cx < self.nx && cy < self.ny
    }

    fn slot(&self, (cx, cy): (i64, i64)) -> usize {
        (cy * self.nx + cx) as usize
    }

    fn max_ring(&self) -> i64 {
        self.nx.max(self.ny)
    }

    /// Bucket slots at Chebyshev distance exactly `k` from `c`, in a fixed order.
    fn ring(&self, c: (i64, i64), k: i64, out: &mut Vec<usize>) {
        out.clear();
        let mut push = |x: i64, y: i64| {
            if self.inside((x, y)) {
                out.push(self.slot((x, y)));
            }
        };
        if k == 0 {
            push(c.0, c.1);
            return;
        }
        for x in c.0 - k..=c.0 + k {
            push(x, c.1 - k);
            push(x, c.1 + k);
        }
        for y in c.1 - k + 1..c.1 + k {
            push(c.0 - k, y);
            push(c.0 + k, y);
        }
    }

    /// Minimum great-circle distance (conservative) from a query to any point
    /// in ring `k + 1` or beyond.
    fn beyond_ring(&self, k: i64) -> f64 {
        k as f64 * self.cell * LOWER_BOUND_SLACK
    }
}

/// Static nearest-node index over a road network.
#[derive(Debug, Clone)]
pub struct NodeIndex {
    buckets: Buckets,
    slots: Vec<Vec<NodeId>>,
    coords: Vec<Location>,
}

impl NodeIndex {
    pub fn new(net: &RoadNetwork) -> Self {
        Self::from_points(net.locations(), 200.0)
    }

    pub fn from_points(points: &[Location], cell_m: f64) -> Self {
        let buckets = Buckets::new(points, cell_m);
        let mut slots = vec![Vec::new(); buckets.len()];
        for (i, p) in points.iter().enumerate() {
            let s = buckets.slot(buckets.coords(p));
            slots[s].push(i as NodeId);
        }
        Self { buckets, slots, coords: points.to_vec() }
    }

    /// Node minimizing great-circle distance to `p`, smallest id on ties.
    /// Returns `None` only for an empty index.
    pub fn nearest(&self, p: &Location) -> Option<(NodeId, f64)> {
        if self.coords.is_empty() {
            return None;
        }
        let c = self.buckets.coords(p);
        if !self.buckets.inside(c) {
            return self.nearest_linear(p);
        }
        let mut best: Option<(f64, NodeId)> = None;
        let mut ring = Vec::new();
        for k in 0..=self.buckets.max_ring() {
            self.buckets.ring(c, k, &mut ring);
            for &s in &ring {
                for &v in &self.slots[s] {
                    let d = p.haversine(&self.coords[v as usize]);
                    if best.is_none_or(|(bd, bv)| d < bd || (d == bd && v < bv)) {
                        best = Some((d, v));
                    }
                }
            }
            if let Some((bd, _)) = best {
                if bd < self.buckets.beyond_ring(k) {
                    break;
                }
            }
        }
        best.map(|(d, v)| (v, d))
    }

    pub fn nearest_linear(&self, p: &Location) -> Option<(NodeId, f64)> {
        nearest_node_brute(&self.coords, p)
    }
}

/// Exhaustive scan; the oracle for [`NodeIndex::nearest`].
pub fn nearest_node_brute(coords: &[Location], p: &Location) -> Option<(NodeId, f64)> {
    coords
        .iter()
        .enumerate()
        .map(|(i, q)| (p.haversine(q), i as NodeId))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(d, v)| (v, d))
}

/// Node of `net` nearest to `p` by great-circle distance; ties go to the
/// smallest node id.
pub fn nearest_node(net: &RoadNetwork, p: &Location) -> NodeId {
    // A one-off query does not amortize an index build.
    nearest_node_brute(net.locations(), p).expect("nearest_node on an empty network").0
}

/// Dynamic set of ids placed at locations, bucketed for radius and
/// nearest-first queries. Iteration order is a pure function of the
/// insert/remove history, so simulations stay deterministic.
#[derive(Debug, Clone)]
pub struct PointGrid {
    buckets: Buckets,
    slots: Vec<Vec<u32>>,
    pos: Vec<Option<(Location, usize)>>,
}

/// A candidate produced by [`PointGrid`] queries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub id: u32,
    pub straight_m: f64,
}

impl PointGrid {
    /// `extent` fixes the bucketed area; points outside it go to the nearest
    /// border bucket and remain findable.
    pub fn new(extent: &[Location], cell_m: f64) -> Self {
        let buckets = Buckets::new(extent, cell_m);
        let slots = vec![Vec::new(); buckets.len()];
        Self { buckets, slots, pos: Vec::new() }
    }

    fn clamp_slot(&self, p: &Location) -> usize {
        let (cx, cy) = self.buckets.coords(p);
        self.buckets.slot((cx.clamp(0, self.buckets.nx - 1), cy.clamp(0, self.buckets.ny - 1)))
    }

    pub fn insert(&mut self, id: u32, p: Location) {
        self.remove(id);
        if self.pos.len() <= id as usize {
            self.pos.resize(id as usize + 1, None);
        }
        let s = self.clamp_slot(&p);
        self.slots[s].push(id);
        self.pos[id as usize] = Some((p, s));
    }

    pub fn remove(&mut self, id: u32) -> bool {
        let Some(Some((_, s))) = self.pos.get(id as usize).copied() else {
            return false;
        };
        let bucket = &mut self.slots[s];
        if let Some(i) = bucket.iter().position(|&x| x == id) {
            bucket.remove(i);
        }
        self.pos[id as usize] = None;
        true
    }

    pub fn contains(&self, id: u32) -> bool {
        matches!(self.pos.get(id as usize), Some(Some(_)))
    }

    pub fn location(&self, id: u32) -> Option<Location> {
        self.pos.get(id as usize).copied().flatten().map(|(p, _)| p)
    }

    pub fn len(&self) -> usize {
        self.pos.iter().filter(|p| p.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.iter().all(|p| p.is_none())
    }

    /// All ids within `radius_m` (great-circle) of `p`, sorted by distance then id.
    pub fn within(&self, p: &Location, radius_m: f64) -> Vec<Candidate> {
        let mut out = Vec::new();
        let r = (radius_m / (self.buckets.cell * LOWER_BOUND_SLACK)).ceil() as i64 + 1;
        let (cx, cy) = self.buckets.coords(p);
        let x0 = (cx - r).max(0);
        let x1 = (cx + r).min(self.buckets.nx - 1);
        let y0 = (cy - r).max(0);
        let y1 = (cy + r).min(self.buckets.ny - 1);
        let mut visit = |slot: usize| {
            for &id in &self.slots[slot] {
                let q = self.pos[id as usize].expect("indexed id has a position").0;
                let d = p.haversine(&q);
                if d <= radius_m {
                    out.push(Candidate { id, straight_m: d });
                }
            }
        };
        if x0 <= x1 && y0 <= y1 && self.buckets.inside((cx, cy)) {
            for y in y0..=y1 {
                for x in x0..=x1 {
                    visit(self.buckets.slot((x, y)));
                }
            }
        } else {
            // Query outside the bucketed extent: border buckets may hold
            // clamped points, so scan everything.
            for s in 0..self.slots.len() {
                visit(s);
            }
        }
        sort_candidates(&mut out);
        out
    }

    /// Finds the id minimizing `cost`, where `cost(candidate)` returns `None`
    /// for ineligible ids and is bounded below by `straight_m * lb_per_m`.
    /// Candidates are visited nearest-first and pruned with that bound.
    /// Ties go to the smallest id. `max_radius_m` restricts eligibility to a
    /// straight-line catchment.
    pub fn nearest_by<F>(
        &self,
        p: &Location,
        max_radius_m: Option<f64>,
        lb_per_m: f64,
        mut cost: F,
    ) -> Option<(u32, u64)>
    where
        F: FnMut(Candidate) -> Option<u64>,
    {
        let (cx, cy) = self.buckets.coords(p);
        let inside = self.buckets.inside((cx, cy));
        let mut best: Option<(u64, u32)> = None;
        let mut consider = |cands: &mut Vec<Candidate>, best: &mut Option<(u64, u32)>| {
            sort_candidates(cands);
            for c in cands.iter() {
                if max_radius_m.is_some_and(|r| c.straight_m > r) {
                    continue;
                }
                let lb = (c.straight_m * lb_per_m).floor() as u64;
                if best.is_some_and(|(bc, _)| lb > bc) {
                    break;
                }
                if let Some(v) = cost(*c) {
                    if best.is_none_or(|(bc, bid)| v < bc || (v == bc && c.id < bid)) {
                        *best = Some((v, c.id));
                    }
                }
            }
        };
        if !inside {
            let mut all: Vec<Candidate> = self
                .pos
                .iter()
                .enumerate()
                .filter_map(|(id, e)| e.map(|(q, _)| Candidate { id: id as u32, straight_m: p.haversine(&q) }))
                .collect();
            consider(&mut all, &mut best);
            return best.map(|(c, id)| (id, c));
        }
        let mut ring = Vec::new();
        let mut cands = Vec::new();
        for k in 0..=self.buckets.max_ring() {
            self.buckets.ring((cx, cy), k, &mut ring);
            cands.clear();
            for &s in &ring {
                for &id in &self.slots[s] {
                    let q = self.pos[id as usize].expect("indexed id has a position").0;
                    cands.push(Candidate { id, straight_m: p.haversine(&q) });
                }
            }
            consider(&mut cands, &mut best);
            let beyond = self.buckets.beyond_ring(k);
            if max_radius_m.is_some_and(|r| beyond > r) {
                break;
            }
            // Candidates in later rings cost at least this much. Equality is
            // not enough to stop: a later candidate may win the id tie-break.
            if let Some((bc, _)) = best {
                if ((beyond * lb_per_m).floor() as u64) > bc {
                    break;
                }
            }
        }
        best.map(|(c, id)| (id, c))
    }
}

fn sort_candidates(c: &mut [Candidate]) {
    c.sort_by(|a, b| a.straight_m.total_cmp(&b.straight_m).then(a.id.cmp(&b.id)));
}
