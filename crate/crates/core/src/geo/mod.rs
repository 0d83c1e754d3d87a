//! Road network loading, node lookup and the hexagonal cell partition.

mod hexgrid;
mod location;
mod network;
mod osm;
mod spatial;

pub use hexgrid::{
    build_grid, cell_cost_matrix, cost_matrix_between, cost_matrix_on, CostMatrix, GridIndex, HexCell,
    DEFAULT_HEX_EDGE_M,
};
pub use location::{BoundingBox, LocalProjection, Location, EARTH_RADIUS_M};
pub use network::{meters_to_mm, Edge, NodeId, RoadNetwork};
pub use osm::{load_network, write_xml, HighwayFilter};
pub use spatial::{nearest_node, nearest_node_brute, Candidate, NodeIndex, PointGrid};
