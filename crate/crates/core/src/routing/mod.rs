//! Exact shortest paths over a [`RoadNetwork`](crate::geo::RoadNetwork):
//! contraction hierarchies for production queries, plain Dijkstra variants
//! as oracles and as the small-graph fallback.

mod ch;
mod dijkstra;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use ch::{ContractedGraph, Shortcut};
pub use dijkstra::{dijkstra_all, dijkstra_path, BidirectionalDijkstra};

use crate::error::{Error, Result};
use crate::geo::{NodeId, RoadNetwork};

/// A path over the base network.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub nodes: Vec<NodeId>,
    pub length_mm: u64,
    /// Filled by [`Route::with_speed`].
    pub duration_s: Option<f64>,
}

impl Route {
    pub fn length_m(&self) -> f64 {
        self.length_mm as f64 / 1000.0
    }

    pub fn with_speed(mut self, speed_kmh: f64) -> Result<Self> {
        self.duration_s = Some(travel_time(self.length_m(), speed_kmh)?);
        Ok(self)
    }

    /// Cumulative distance (mm) at each node of the path.
    pub fn cumulative_mm(&self, net: &RoadNetwork) -> Vec<u64> {
        let mut acc = 0;
        let mut out = Vec::with_capacity(self.nodes.len());
        out.push(0);
        for w in self.nodes.windows(2) {
            acc += net.edge_length(w[0], w[1]).expect("route follows network edges");
            out.push(acc);
        }
        out
    }
}

/// Shortest-path service. Implementations must be exact.
pub trait Router {
    /// Shortest distance in millimeters, `None` when `t` is unreachable.
    fn distance(&self, s: NodeId, t: NodeId) -> Option<u64>;
    fn route(&self, s: NodeId, t: NodeId) -> Option<Route>;
}

/// Seconds needed to cover `length_m` meters at `speed_kmh`.
pub fn travel_time(length_m: f64, speed_kmh: f64) -> Result<f64> {
    if !(speed_kmh > 0.0) {
        return Err(Error::NonPositiveSpeed(speed_kmh));
    }
    Ok(length_m / (speed_kmh * 1000.0 / 3600.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RoutingBackend {
    /// Contraction hierarchies from 1000 nodes up, plain bidirectional
    /// Dijkstra below.
    #[default]
    Auto,
    Ch,
    Dijkstra,
}

/// Graph size below which [`RoutingBackend::Auto`] skips preprocessing.
pub const SMALL_GRAPH_NODES: usize = 1000;

/// The router used by simulations.
#[derive(Debug, Clone)]
pub enum RoutingService {
    Ch(ContractedGraph),
    Dijkstra(BidirectionalDijkstra),
}

impl RoutingService {
    pub fn new(net: Arc<RoadNetwork>, backend: RoutingBackend, cache_dir: Option<&Path>) -> Result<Self> {
        let use_ch = match backend {
            RoutingBackend::Ch => true,
            RoutingBackend::Dijkstra => false,
            RoutingBackend::Auto => net.node_count() >= SMALL_GRAPH_NODES,
        };
        if !use_ch {
            return Ok(Self::Dijkstra(BidirectionalDijkstra::new(net)));
        }
        let cg = match cache_dir {
            Some(dir) => ContractedGraph::load_or_build(&net, dir)?,
            None => ContractedGraph::preprocess(&net),
        };
        Ok(Self::Ch(cg))
    }
}

impl Router for RoutingService {
    fn distance(&self, s: NodeId, t: NodeId) -> Option<u64> {
        match self {
            Self::Ch(c) => c.distance(s, t),
            Self::Dijkstra(d) => d.distance(s, t),
        }
    }

    fn route(&self, s: NodeId, t: NodeId) -> Option<Route> {
        match self {
            Self::Ch(c) => c.route(s, t),
            Self::Dijkstra(d) => d.route(s, t),
        }
    }
}

impl<R: Router + ?Sized> Router for &R {
    fn distance(&self, s: NodeId, t: NodeId) -> Option<u64> {
        (**self).distance(s, t)
    }

    fn route(&self, s: NodeId, t: NodeId) -> Option<Route> {
        (**self).route(s, t)
    }
}
