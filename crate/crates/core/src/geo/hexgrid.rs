use std::collections::HashMap;

use super::location::{LocalProjection, Location};
use super::network::{NodeId, RoadNetwork};
use super::spatial::NodeIndex;
use crate::error::{Error, Result};
use crate::routing::Router;

/// Average hexagon edge length of H3 resolution 8, in meters.
pub const DEFAULT_HEX_EDGE_M: f64 = 461.354_684;

const MAX_CELLS: usize = 100_000;
const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, PartialEq)]
pub struct HexCell {
    pub id: u32,
    /// Axial (q, r) coordinates of the pointy-top hexagon.
    pub axial: (i32, i32),
    pub centroid: Location,
    pub boundary: [Location; 6],
}

/// Hexagonal partition of the network's service area. Only hexagons that
/// contain at least one routable node are materialized as cells.
#[derive(Debug, Clone)]
pub struct GridIndex {
    edge_m: f64,
    proj: LocalProjection,
    cells: Vec<HexCell>,
    lookup: HashMap<(i32, i32), u32>,
    node_to_cell: Vec<u32>,
}

fn axial_round(q: f64, r: f64) -> (i32, i32) {
    let s = -q - r;
    let (mut rq, mut rr, rs) = (q.round(), r.round(), s.round());
    let (dq, dr, ds) = ((rq - q).abs(), (rr - r).abs(), (rs - s).abs());
    if dq > dr && dq > ds {
        rq = -rr - rs;
    } else if dr > ds {
        rr = -rq - rs;
    }
    (rq as i32, rr as i32)
}

impl GridIndex {
    fn hex_of_xy(&self, x: f64, y: f64) -> (i32, i32) {
        let q = (SQRT3 / 3.0 * x - y / 3.0) / self.edge_m;
        let r = (2.0 / 3.0 * y) / self.edge_m;
        axial_round(q, r)
    }

    fn center_xy(&self, (q, r): (i32, i32)) -> (f64, f64) {
        let (q, r) = (q as f64, r as f64);
        (self.edge_m * SQRT3 * (q + r / 2.0), self.edge_m * 1.5 * r)
    }

    pub fn edge_m(&self) -> f64 {
        self.edge_m
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[HexCell] {
        &self.cells
    }

    pub fn node_cell(&self, node: NodeId) -> u32 {
        self.node_to_cell[node as usize]
    }

    pub fn node_to_cell(&self) -> &[u32] {
        &self.node_to_cell
    }

    /// Cell containing `p`, if that hexagon is part of the grid.
    pub fn cell_of(&self, p: &Location) -> Option<u32> {
        let (x, y) = self.proj.to_xy(p);
        self.lookup.get(&self.hex_of_xy(x, y)).copied()
    }
}

/// Tiles the network with pointy-top hexagons of edge length `edge_m`.
pub fn build_grid(net: &RoadNetwork, edge_m: f64) -> Result<GridIndex> {
    if net.node_count() == 0 {
        return Err(Error::GridSize(0));
    }
    if !(edge_m > 0.0) {
        return Err(Error::Config(format!("hex edge must be positive, got {edge_m}")));
    }
    let origin = net.bbox().expect("non-empty network").center();
    let mut grid = GridIndex {
        edge_m,
        proj: LocalProjection::new(origin),
        cells: Vec::new(),
        lookup: HashMap::new(),
        node_to_cell: Vec::with_capacity(net.node_count()),
    };
    let hexes: Vec<(i32, i32)> = net
        .locations()
        .iter()
        .map(|p| {
            let (x, y) = grid.proj.to_xy(p);
            grid.hex_of_xy(x, y)
        })
        .collect();
    let mut distinct = hexes.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.is_empty() || distinct.len() > MAX_CELLS {
        return Err(Error::GridSize(distinct.len()));
    }
    for (i, &h) in distinct.iter().enumerate() {
        let (cx, cy) = grid.center_xy(h);
        let boundary = std::array::from_fn(|k| {
            let a = (60.0 * k as f64 - 30.0).to_radians();
            grid.proj.to_location(cx + edge_m * a.cos(), cy + edge_m * a.sin())
        });
        grid.cells.push(HexCell { id: i as u32, axial: h, centroid: grid.proj.to_location(cx, cy), boundary });
        grid.lookup.insert(h, i as u32);
    }
    grid.node_to_cell = hexes.iter().map(|h| grid.lookup[h]).collect();
    Ok(grid)
}

/// Square matrix of road distances between cells, in millimeters.
/// `None` marks a pair with no route.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostMatrix {
    n: usize,
    data: Vec<Option<u64>>,
}

impl CostMatrix {
    pub fn from_rows(rows: Vec<Vec<Option<u64>>>) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "cost matrix must be square");
        Self { n, data: rows.into_iter().flatten().collect() }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> Option<u64>) -> Self {
        Self { n, data: (0..n * n).map(|k| f(k / n, k % n)).collect() }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> Option<u64> {
        self.data[i * self.n + j]
    }

    /// Cost in meters, `+inf` for disconnected pairs.
    pub fn meters(&self, i: usize, j: usize) -> f64 {
        self.get(i, j).map_or(f64::INFINITY, |mm| mm as f64 / 1000.0)
    }

    pub fn max_finite(&self) -> u64 {
        self.data.iter().flatten().copied().max().unwrap_or(0)
    }

    pub fn scaled(&self, k: u64) -> Self {
        Self { n: self.n, data: self.data.iter().map(|c| c.map(|v| v * k)).collect() }
    }
}

/// Snaps each cell centroid to its nearest node and fills the matrix of
/// road distances between those nodes. Rows are computed in parallel.
pub fn cell_cost_matrix(grid: &GridIndex, net: &RoadNetwork, router: &(impl Router + Sync)) -> CostMatrix {
    let index = NodeIndex::new(net);
    let anchors: Vec<NodeId> =
        grid.cells().iter().map(|c| index.nearest(&c.centroid).expect("non-empty network").0).collect();
    cost_matrix_between(&anchors, router)
}

/// Same matrix from one full search per row. Much cheaper than pairwise
/// queries once there are more than a few dozen anchors.
pub fn cost_matrix_on(net: &RoadNetwork, anchors: &[NodeId]) -> CostMatrix {
    let rows = crate::par::map(anchors, |&a| {
        let dist = crate::routing::dijkstra_all(net, a);
        anchors.iter().map(|&b| dist[b as usize]).collect::<Vec<_>>()
    });
    CostMatrix::from_rows(rows)
}

pub fn cost_matrix_between(anchors: &[NodeId], router: &(impl Router + Sync)) -> CostMatrix {
    let n = anchors.len();
    let rows = crate::par::map_range(n, |i| {
        (0..n).map(|j| if i == j { Some(0) } else { router.distance(anchors[i], anchors[j]) }).collect::<Vec<_>>()
    });
    CostMatrix::from_rows(rows)
}
