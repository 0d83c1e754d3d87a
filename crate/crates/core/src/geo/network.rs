use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::location::{BoundingBox, Location};
use crate::error::{Error, Result};

/// Dense node index into a [`RoadNetwork`]. Indices follow ascending source
/// (OSM) id order, so tie-breaks on index agree with tie-breaks on id.
pub type NodeId = u32;

const FORMAT_HEADER: &str = "# bikesim-network v1";

/// Directed road graph with lengths in integer millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    source_ids: Vec<i64>,
    coords: Vec<Location>,
    first_out: Vec<u32>,
    head: Vec<NodeId>,
    length_mm: Vec<u64>,
}

/// One directed edge of a [`RoadNetwork`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub length_mm: u64,
}

pub fn meters_to_mm(m: f64) -> u64 {
    (m * 1000.0).round().max(1.0) as u64
}

impl RoadNetwork {
    /// Builds a network from raw nodes and edges and keeps only the largest
    /// strongly connected component. Parallel edges collapse to the shortest;
    /// self loops are dropped. Edges referencing unknown nodes are ignored.
    pub fn build(nodes: Vec<(i64, Location)>, edges: Vec<(i64, i64, u64)>) -> Result<Self> {
        let raw = Self::build_unpruned(nodes, edges);
        if raw.node_count() == 0 {
            return Err(Error::EmptyNetwork(""));
        }
        let keep = raw.largest_scc();
        let pruned = raw.restrict(&keep);
        if pruned.edge_count() == 0 && pruned.node_count() > 1 {
            return Err(Error::EmptyNetwork(" after pruning"));
        }
        Ok(pruned)
    }

    /// Same as [`RoadNetwork::build`] without component pruning.
    pub fn build_unpruned(mut nodes: Vec<(i64, Location)>, edges: Vec<(i64, i64, u64)>) -> Self {
        nodes.sort_by_key(|(id, _)| *id);
        nodes.dedup_by_key(|(id, _)| *id);
        let index: HashMap<i64, NodeId> = nodes.iter().enumerate().map(|(i, (id, _))| (*id, i as NodeId)).collect();
        let mut dense: Vec<(NodeId, NodeId, u64)> = edges
            .into_iter()
            .filter_map(|(a, b, len)| {
                let (a, b) = (*index.get(&a)?, *index.get(&b)?);
                (a != b).then_some((a, b, len.max(1)))
            })
            .collect();
        dense.sort_unstable();
        dense.dedup_by_key(|(a, b, _)| (*a, *b));
        let (source_ids, coords) = nodes.into_iter().unzip();
        Self::from_sorted(source_ids, coords, &dense)
    }

    fn from_sorted(source_ids: Vec<i64>, coords: Vec<Location>, edges: &[(NodeId, NodeId, u64)]) -> Self {
        let n = coords.len();
        let mut first_out = vec![0u32; n + 1];
        for &(a, _, _) in edges {
            first_out[a as usize + 1] += 1;
        }
        for i in 0..n {
            first_out[i + 1] += first_out[i];
        }
        Self {
            source_ids,
            coords,
            first_out,
            head: edges.iter().map(|e| e.1).collect(),
            length_mm: edges.iter().map(|e| e.2).collect(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.coords.len()
    }

    pub fn edge_count(&self) -> usize {
        self.head.len()
    }

    pub fn location(&self, node: NodeId) -> Location {
        self.coords[node as usize]
    }

    pub fn locations(&self) -> &[Location] {
        &self.coords
    }

    pub fn source_id(&self, node: NodeId) -> i64 {
        self.source_ids[node as usize]
    }

    pub fn out_edges(&self, node: NodeId) -> impl Iterator<Item = (NodeId, u64)> + '_ {
        let range = self.first_out[node as usize] as usize..self.first_out[node as usize + 1] as usize;
        self.head[range.clone()].iter().copied().zip(self.length_mm[range].iter().copied())
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        (0..self.node_count() as NodeId)
            .flat_map(move |from| self.out_edges(from).map(move |(to, length_mm)| Edge { from, to, length_mm }))
    }

    pub fn edge_length(&self, from: NodeId, to: NodeId) -> Option<u64> {
        self.out_edges(from).find(|(h, _)| *h == to).map(|(_, l)| l)
    }

    pub fn bbox(&self) -> Option<BoundingBox> {
        BoundingBox::covering(&self.coords)
    }

    /// Reverse adjacency as (first_in, tail, length) CSR arrays.
    pub fn reverse_csr(&self) -> (Vec<u32>, Vec<NodeId>, Vec<u64>) {
        let mut rev: Vec<(NodeId, NodeId, u64)> = self.edges().map(|e| (e.to, e.from, e.length_mm)).collect();
        rev.sort_unstable();
        let n = self.node_count();
        let mut first_in = vec![0u32; n + 1];
        for &(a, _, _) in &rev {
            first_in[a as usize + 1] += 1;
        }
        for i in 0..n {
            first_in[i + 1] += first_in[i];
        }
        (first_in, rev.iter().map(|e| e.1).collect(), rev.iter().map(|e| e.2).collect())
    }

    /// Node membership mask of the largest strongly connected component
    /// (ties go to the component holding the smallest node index).
    fn largest_scc(&self) -> Vec<bool> {
        let comp = self.scc_labels();
        let mut size: HashMap<u32, (usize, NodeId)> = HashMap::new();
        for (v, &c) in comp.iter().enumerate() {
            let e = size.entry(c).or_insert((0, v as NodeId));
            e.0 += 1;
        }
        let best = size.iter().max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1))).map(|(c, _)| *c);
        comp.iter().map(|c| Some(*c) == best).collect()
    }

    /// Iterative Tarjan; returns a component label per node.
    pub fn scc_labels(&self) -> Vec<u32> {
        let n = self.node_count();
        const UNSET: u32 = u32::MAX;
        let mut index = vec![UNSET; n];
        let mut low = vec![0u32; n];
        let mut on_stack = vec![false; n];
        let mut comp = vec![UNSET; n];
        let mut stack: Vec<NodeId> = Vec::new();
        let mut next_index = 0u32;
        let mut next_comp = 0u32;
        // (node, next edge offset)
        let mut call: Vec<(NodeId, u32)> = Vec::new();
        for root in 0..n as NodeId {
            if index[root as usize] != UNSET {
                continue;
            }
            call.push((root, self.first_out[root as usize]));
            index[root as usize] = next_index;
            low[root as usize] = next_index;
            next_index += 1;
            stack.push(root);
            on_stack[root as usize] = true;
            while let Some(&mut (v, ref mut pos)) = call.last_mut() {
                let end = self.first_out[v as usize + 1];
                if *pos < end {
                    let w = self.head[*pos as usize];
                    *pos += 1;
                    if index[w as usize] == UNSET {
                        index[w as usize] = next_index;
                        low[w as usize] = next_index;
                        next_index += 1;
                        stack.push(w);
                        on_stack[w as usize] = true;
                        call.push((w, self.first_out[w as usize]));
                    } else if on_stack[w as usize] {
                        low[v as usize] = low[v as usize].min(index[w as usize]);
                    }
                } else {
                    call.pop();
                    if let Some(&(parent, _)) = call.last() {
                        low[parent as usize] = low[parent as usize].min(low[v as usize]);
                    }
                    if low[v as usize] == index[v as usize] {
                        while let Some(w) = stack.pop() {
                            on_stack[w as usize] = false;
                            comp[w as usize] = next_comp;
                            if w == v {
                                break;
                            }
                        }
                        next_comp += 1;
                    }
                }
            }
        }
        comp
    }

    fn restrict(&self, keep: &[bool]) -> Self {
        let mut remap = vec![u32::MAX; self.node_count()];
        let mut ids = Vec::new();
        let mut coords = Vec::new();
        for v in 0..self.node_count() {
            if keep[v] {
                remap[v] = ids.len() as u32;
                ids.push(self.source_ids[v]);
                coords.push(self.coords[v]);
            }
        }
        let edges: Vec<(NodeId, NodeId, u64)> = self
            .edges()
            .filter(|e| keep[e.from as usize] && keep[e.to as usize])
            .map(|e| (remap[e.from as usize], remap[e.to as usize], e.length_mm))
            .collect();
        Self::from_sorted(ids, coords, &edges)
    }

    /// Line-oriented text form; identical networks serialize to identical bytes.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(64 * (self.node_count() + self.edge_count()));
        let _ = writeln!(s, "{FORMAT_HEADER}");
        let _ = writeln!(s, "nodes {}", self.node_count());
        for (id, p) in self.source_ids.iter().zip(&self.coords) {
            let _ = writeln!(s, "{id} {} {}", p.lon, p.lat);
        }
        let _ = writeln!(s, "edges {}", self.edge_count());
        for e in self.edges() {
            let _ = writeln!(s, "{} {} {}", e.from, e.to, e.length_mm);
        }
        s
    }

    pub fn from_text(reader: impl BufRead) -> Result<Self> {
        let bad = |m: &str| Error::NetworkFormat(m.to_string());
        let mut lines = reader.lines();
        let mut next = || -> Result<String> {
            lines.next().ok_or_else(|| bad("unexpected end of file"))?.map_err(|e| Error::NetworkFormat(e.to_string()))
        };
        if next()? != FORMAT_HEADER {
            return Err(bad("missing header"));
        }
        let count = |line: String, key: &str| -> Result<usize> {
            line.strip_prefix(key)
                .and_then(|r| r.trim().parse().ok())
                .ok_or_else(|| Error::NetworkFormat(format!("expected `{key} <n>`")))
        };
        let n = count(next()?, "nodes")?;
        let mut ids = Vec::with_capacity(n);
        let mut coords = Vec::with_capacity(n);
        for _ in 0..n {
            let line = next()?;
            let mut it = line.split_ascii_whitespace();
            let id: i64 = it.next().and_then(|x| x.parse().ok()).ok_or_else(|| bad("node id"))?;
            let lon: f64 = it.next().and_then(|x| x.parse().ok()).ok_or_else(|| bad("node lon"))?;
            let lat: f64 = it.next().and_then(|x| x.parse().ok()).ok_or_else(|| bad("node lat"))?;
            ids.push(id);
            coords.push(Location::new(lon, lat)?);
        }
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("node ids not strictly ascending"));
        }
        let m = count(next()?, "edges")?;
        let mut edges = Vec::with_capacity(m);
        for _ in 0..m {
            let line = next()?;
            let v: Vec<u64> = line.split_ascii_whitespace().filter_map(|x| x.parse().ok()).collect();
            match v[..] {
                [a, b, len] if (a as usize) < n && (b as usize) < n && len > 0 => {
                    edges.push((a as NodeId, b as NodeId, len))
                }
                _ => return Err(bad("edge line")),
            }
        }
        if edges.windows(2).any(|w| (w[0].0, w[0].1) >= (w[1].0, w[1].1)) {
            return Err(bad("edges not sorted"));
        }
        Ok(Self::from_sorted(ids, coords, &edges))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_text().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(std::io::BufReader::new(f))
    }

    /// Hex SHA-256 of the text form.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loc(x: f64, y: f64) -> Location {
        Location { lon: x, lat: y }
    }

    #[test]
    fn keeps_largest_scc() {
        // 0<->1<->2 cycle plus 3 reachable one-way only.
        let nodes = vec![(10, loc(0.0, 0.0)), (11, loc(0.001, 0.0)), (12, loc(0.002, 0.0)), (13, loc(0.003, 0.0))];
        let edges = vec![(10, 11, 100), (11, 10, 100), (11, 12, 100), (12, 11, 100), (12, 13, 100)];
        let net = RoadNetwork::build(nodes, edges).unwrap();
        assert_eq!(net.node_count(), 3);
        assert_eq!(net.edge_count(), 4);
        assert_eq!(net.source_id(2), 12);
    }

    #[test]
    fn parallel_edges_keep_shortest() {
        let nodes = vec![(1, loc(0.0, 0.0)), (2, loc(0.0, 0.001))];
        let edges = vec![(1, 2, 500), (1, 2, 300), (2, 1, 400), (1, 1, 5)];
        let net = RoadNetwork::build(nodes, edges).unwrap();
        assert_eq!(net.edge_length(0, 1), Some(300));
        assert_eq!(net.edge_count(), 2);
    }

    #[test]
    fn text_round_trip_is_stable() {
        let nodes = vec![(5, loc(-71.1, 42.3)), (7, loc(-71.0999, 42.3001)), (9, loc(-71.0998, 42.3))];
        let edges = vec![(5, 7, 12_345), (7, 5, 12_345), (7, 9, 1), (9, 7, 2), (9, 5, 77)];
        let net = RoadNetwork::build(nodes, edges).unwrap();
        let text = net.to_text();
        let back = RoadNetwork::from_text(text.as_bytes()).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.to_text(), text);
        assert_eq!(back.content_hash(), net.content_hash());
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(RoadNetwork::build(vec![], vec![]), Err(Error::EmptyNetwork(_))));
    }

    #[test]
    fn scc_labels_on_two_cycles() {
        let nodes = (0..4).map(|i| (i, loc(i as f64 * 0.001, 0.0))).collect();
        let edges = vec![(0, 1, 1), (1, 0, 1), (2, 3, 1), (3, 2, 1), (1, 2, 1)];
        let net = RoadNetwork::build_unpruned(nodes, edges);
        let c = net.scc_labels();
        assert_eq!(c[0], c[1]);
        assert_eq!(c[2], c[3]);
        assert_ne!(c[0], c[2]);
        // Equal sizes: component with node 0 wins.
        let pruned = RoadNetwork::build(
            (0..4).map(|i| (i, loc(i as f64 * 0.001, 0.0))).collect(),
            vec![(0, 1, 1), (1, 0, 1), (2, 3, 1), (3, 2, 1), (1, 2, 1)],
        )
        .unwrap();
        assert_eq!(pruned.source_id(0), 0);
        assert_eq!(pruned.node_count(), 2);
    }
}
