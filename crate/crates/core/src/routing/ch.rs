//! Contraction hierarchies.
//!
//! Nodes are contracted in order of a lazily updated priority
//! `edge_difference + deleted_neighbors`, ties broken by node id. Each
//! contraction inserts a shortcut `u -> w` (bridging `v`) unless a bounded
//! witness search finds a path of equal or shorter length avoiding `v`.
//! An incomplete witness search only ever adds superfluous shortcuts, so
//! query results stay exact.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dijkstra::{Labels, NO_NODE, SCRATCH};
use super::{Route, Router};
use crate::error::{Error, Result};
use crate::geo::{NodeId, RoadNetwork};

const WITNESS_SETTLE_LIMIT: usize = 400;

/// A shortcut edge: `from -> to` replacing `from -> bridged -> to`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortcut {
    pub from: NodeId,
    pub to: NodeId,
    pub length_mm: u64,
    pub bridged: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct UpEdge {
    node: NodeId,
    length_mm: u64,
    /// Bridged node for shortcuts, `NO_NODE` for base edges.
    mid: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Csr {
    first: Vec<u32>,
    edges: Vec<UpEdge>,
}

impl Csr {
    fn from_lists(lists: Vec<Vec<UpEdge>>) -> Self {
        let mut first = Vec::with_capacity(lists.len() + 1);
        first.push(0);
        let mut edges = Vec::new();
        for mut l in lists {
            l.sort_by_key(|e| (e.node, e.length_mm));
            edges.extend(l);
            first.push(edges.len() as u32);
        }
        Self { first, edges }
    }

    fn of(&self, v: NodeId) -> &[UpEdge] {
        &self.edges[self.first[v as usize] as usize..self.first[v as usize + 1] as usize]
    }
}

/// Network augmented with shortcuts and a contraction level per node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractedGraph {
    network_hash: String,
    /// `level[v]` in `1..=|V|`; contraction order.
    level: Vec<u32>,
    /// Edges to higher-level nodes, keyed by tail.
    up: Csr,
    /// Edges from higher-level nodes, keyed by head.
    down: Csr,
}

#[derive(Debug, Clone, Copy)]
struct DynEdge {
    node: NodeId,
    length_mm: u64,
    mid: u32,
}

struct Contractor {
    out: Vec<Vec<DynEdge>>,
    inc: Vec<Vec<DynEdge>>,
    contracted: Vec<bool>,
    deleted_neighbors: Vec<u32>,
    // Witness search state.
    dist: Vec<u64>,
    stamp: Vec<u32>,
    generation: u32,
}

impl Contractor {
    fn new(net: &RoadNetwork) -> Self {
        let n = net.node_count();
        let mut out = vec![Vec::new(); n];
        let mut inc = vec![Vec::new(); n];
        for e in net.edges() {
            out[e.from as usize].push(DynEdge { node: e.to, length_mm: e.length_mm, mid: NO_NODE });
            inc[e.to as usize].push(DynEdge { node: e.from, length_mm: e.length_mm, mid: NO_NODE });
        }
        Self {
            out,
            inc,
            contracted: vec![false; n],
            deleted_neighbors: vec![0; n],
            dist: vec![0; n],
            stamp: vec![0; n],
            generation: 0,
        }
    }

    /// Bounded Dijkstra from `src` avoiding `skip`; fills `dist` for settled
    /// and reached nodes up to `limit`.
    fn witness_search(&mut self, src: NodeId, skip: NodeId, limit: u64) {
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.generation = 1;
        }
        let g = self.generation;
        self.stamp[src as usize] = g;
        self.dist[src as usize] = 0;
        let mut heap = BinaryHeap::from([Reverse((0u64, src))]);
        let mut settled = 0;
        while let Some(Reverse((d, u))) = heap.pop() {
            if self.dist[u as usize] < d {
                continue;
            }
            settled += 1;
            if d > limit || settled > WITNESS_SETTLE_LIMIT {
                break;
            }
            for e in &self.out[u as usize] {
                if e.node == skip || self.contracted[e.node as usize] {
                    continue;
                }
                let nd = d + e.length_mm;
                let w = e.node as usize;
                if self.stamp[w] != g || nd < self.dist[w] {
                    self.stamp[w] = g;
                    self.dist[w] = nd;
                    heap.push(Reverse((nd, e.node)));
                }
            }
        }
    }

    fn witness(&self, w: NodeId) -> Option<u64> {
        (self.stamp[w as usize] == self.generation).then(|| self.dist[w as usize])
    }

    fn live(&self, list: &[DynEdge], v: NodeId) -> Vec<DynEdge> {
        list.iter().filter(|e| e.node != v && !self.contracted[e.node as usize]).copied().collect()
    }

    /// Shortcuts that contracting `v` would need.
    fn needed_shortcuts(&mut self, v: NodeId) -> Vec<Shortcut> {
        let ins = self.live(&self.inc[v as usize], v);
        let outs = self.live(&self.out[v as usize], v);
        let mut result = Vec::new();
        if ins.is_empty() || outs.is_empty() {
            return result;
        }
        let max_out = outs.iter().map(|e| e.length_mm).max().unwrap_or(0);
        for u in &ins {
            self.witness_search(u.node, v, u.length_mm + max_out);
            for w in &outs {
                if w.node == u.node {
                    continue;
                }
                let via = u.length_mm + w.length_mm;
                if self.witness(w.node).is_some_and(|d| d <= via) {
                    continue;
                }
                result.push(Shortcut { from: u.node, to: w.node, length_mm: via, bridged: v });
            }
        }
        result
    }

    fn priority(&mut self, v: NodeId) -> i64 {
        let sc = self.needed_shortcuts(v).len() as i64;
        let removed = (self.live(&self.inc[v as usize], v).len() + self.live(&self.out[v as usize], v).len()) as i64;
        sc - removed + self.deleted_neighbors[v as usize] as i64
    }

    fn add_edge(list: &mut Vec<DynEdge>, node: NodeId, length_mm: u64, mid: u32) {
        match list.iter_mut().find(|e| e.node == node) {
            Some(e) if e.length_mm <= length_mm => {}
            Some(e) => {
                e.length_mm = length_mm;
                e.mid = mid;
            }
            None => list.push(DynEdge { node, length_mm, mid }),
        }
    }

    /// Contracts `v`, returning its remaining up/down edges.
    fn contract(&mut self, v: NodeId) -> (Vec<UpEdge>, Vec<UpEdge>) {
        for s in self.needed_shortcuts(v) {
            Self::add_edge(&mut self.out[s.from as usize], s.to, s.length_mm, s.bridged);
            Self::add_edge(&mut self.inc[s.to as usize], s.from, s.length_mm, s.bridged);
        }
        let to_up = |e: &DynEdge| UpEdge { node: e.node, length_mm: e.length_mm, mid: e.mid };
        let ups: Vec<UpEdge> = self.live(&self.out[v as usize], v).iter().map(to_up).collect();
        let downs: Vec<UpEdge> = self.live(&self.inc[v as usize], v).iter().map(to_up).collect();
        self.contracted[v as usize] = true;
        let mut neighbors: Vec<NodeId> = ups.iter().chain(&downs).map(|e| e.node).collect();
        neighbors.sort_unstable();
        neighbors.dedup();
        for u in neighbors {
            self.deleted_neighbors[u as usize] += 1;
            // Drop edges into the contracted node to keep adjacency short.
            self.out[u as usize].retain(|e| e.node != v);
            self.inc[u as usize].retain(|e| e.node != v);
        }
        self.out[v as usize] = Vec::new();
        self.inc[v as usize] = Vec::new();
        (ups, downs)
    }
}

struct Parts {
    level: Vec<u32>,
    ups: Vec<Vec<UpEdge>>,
    downs: Vec<Vec<UpEdge>>,
    next_level: u32,
}

impl Parts {
    fn new(n: usize) -> Self {
        Self { level: vec![0; n], ups: vec![Vec::new(); n], downs: vec![Vec::new(); n], next_level: 1 }
    }

    fn take(&mut self, c: &mut Contractor, v: NodeId) {
        let (u, d) = c.contract(v);
        self.ups[v as usize] = u;
        self.downs[v as usize] = d;
        self.level[v as usize] = self.next_level;
        self.next_level += 1;
    }

    fn finish(self, net: &RoadNetwork) -> ContractedGraph {
        log::debug!("contracted {} nodes", net.node_count());
        ContractedGraph {
            network_hash: net.content_hash(),
            level: self.level,
            up: Csr::from_lists(self.ups),
            down: Csr::from_lists(self.downs),
        }
    }
}

impl ContractedGraph {
    /// Deterministic: the same network always yields the same hierarchy.
    pub fn preprocess(net: &RoadNetwork) -> Self {
        let n = net.node_count();
        let mut c = Contractor::new(net);
        let mut heap: BinaryHeap<Reverse<(i64, NodeId)>> =
            (0..n as NodeId).map(|v| Reverse((c.priority(v), v))).collect();
        let mut parts = Parts::new(n);
        while let Some(Reverse((_, v))) = heap.pop() {
            if c.contracted[v as usize] {
                continue;
            }
            let p = c.priority(v);
            if let Some(&Reverse((top, top_v))) = heap.peek() {
                if (p, v) > (top, top_v) {
                    heap.push(Reverse((p, v)));
                    continue;
                }
            }
            parts.take(&mut c, v);
        }
        parts.finish(net)
    }

    /// Contracts nodes in the given order (a permutation of all node ids).
    pub fn preprocess_in_order(net: &RoadNetwork, order: &[NodeId]) -> Self {
        let mut c = Contractor::new(net);
        let mut parts = Parts::new(net.node_count());
        for &v in order {
            assert!(!c.contracted[v as usize], "node {v} repeated in order");
            parts.take(&mut c, v);
        }
        assert_eq!(parts.next_level as usize, net.node_count() + 1, "order is not a permutation");
        parts.finish(net)
    }

    pub fn node_count(&self) -> usize {
        self.level.len()
    }

    pub fn level(&self, v: NodeId) -> u32 {
        self.level[v as usize]
    }

    pub fn network_hash(&self) -> &str {
        &self.network_hash
    }

    /// Every shortcut in the hierarchy, sorted by (from, to).
    pub fn shortcuts(&self) -> Vec<Shortcut> {
        let mut out = Vec::new();
        for v in 0..self.node_count() as NodeId {
            for e in self.up.of(v).iter().filter(|e| e.mid != NO_NODE) {
                out.push(Shortcut { from: v, to: e.node, length_mm: e.length_mm, bridged: e.mid });
            }
            for e in self.down.of(v).iter().filter(|e| e.mid != NO_NODE) {
                out.push(Shortcut { from: e.node, to: v, length_mm: e.length_mm, bridged: e.mid });
            }
        }
        out.sort_by_key(|s| (s.from, s.to));
        out
    }

    fn search(&self, s: NodeId, t: NodeId, fwd: &mut Labels, bwd: &mut Labels) -> Option<(u64, NodeId)> {
        let n = self.node_count();
        fwd.reset(n);
        bwd.reset(n);
        fwd.set(s, 0, NO_NODE, NO_NODE);
        bwd.set(t, 0, NO_NODE, NO_NODE);
        let mut qf = BinaryHeap::from([Reverse((0u64, s))]);
        let mut qb = BinaryHeap::from([Reverse((0u64, t))]);
        let mut best: Option<(u64, NodeId)> = None;
        let improves =
            |best: &Option<(u64, NodeId)>, d: u64, v: NodeId| best.is_none_or(|(bd, bv)| d < bd || (d == bd && v < bv));
        // Each direction runs until its queue minimum reaches the best
        // meeting distance found so far.
        loop {
            let tf = qf.peek().map(|r| r.0 .0).filter(|&d| best.is_none_or(|(b, _)| d <= b));
            let tb = qb.peek().map(|r| r.0 .0).filter(|&d| best.is_none_or(|(b, _)| d <= b));
            let forward = match (tf, tb) {
                (None, None) => break,
                (Some(a), Some(b)) => a <= b,
                (Some(_), None) => true,
                (None, Some(_)) => false,
            };
            let (queue, mine, other, graph) =
                if forward { (&mut qf, &mut *fwd, &*bwd, &self.up) } else { (&mut qb, &mut *bwd, &*fwd, &self.down) };
            let Reverse((d, u)) = queue.pop().expect("peeked");
            if mine.get(u).is_some_and(|x| d > x) {
                continue;
            }
            if let Some(o) = other.get(u) {
                if improves(&best, d + o, u) {
                    best = Some((d + o, u));
                }
            }
            for e in graph.of(u) {
                let nd = d + e.length_mm;
                if mine.get(e.node).is_none_or(|x| nd < x) {
                    mine.set(e.node, nd, u, e.mid);
                    queue.push(Reverse((nd, e.node)));
                }
            }
        }
        best
    }

    /// Appends the base-edge expansion of `a -> b` (excluding `a`) to `out`.
    fn unpack(&self, a: NodeId, b: NodeId, mid: u32, out: &mut Vec<NodeId>) {
        if mid == NO_NODE {
            out.push(b);
            return;
        }
        // Both halves hang off the bridged node, which has the lowest level.
        let first = self.down.of(mid).iter().find(|e| e.node == a).expect("shortcut half a->mid");
        let second = self.up.of(mid).iter().find(|e| e.node == b).expect("shortcut half mid->b");
        self.unpack(a, mid, first.mid, out);
        self.unpack(mid, b, second.mid, out);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        bincode::serialize_into(std::io::BufWriter::new(f), self)
            .map_err(|e| Error::NetworkFormat(format!("writing {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        bincode::deserialize_from(std::io::BufReader::new(f))
            .map_err(|e| Error::NetworkFormat(format!("reading {}: {e}", path.display())))
    }

    /// Loads `ch-<network hash>.bin` from `dir`, building and storing it on a miss.
    pub fn load_or_build(net: &RoadNetwork, dir: &Path) -> Result<Self> {
        let hash = net.content_hash();
        let path = dir.join(format!("ch-{}.bin", &hash[..16]));
        if path.exists() {
            match Self::load(&path) {
                Ok(cg) if cg.network_hash == hash => return Ok(cg),
                Ok(_) => log::warn!("{} belongs to another network; rebuilding", path.display()),
                Err(e) => log::warn!("ignoring unreadable cache {}: {e}", path.display()),
            }
        }
        let cg = Self::preprocess(net);
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        cg.save(&path)?;
        Ok(cg)
    }
}

impl Router for ContractedGraph {
    fn distance(&self, s: NodeId, t: NodeId) -> Option<u64> {
        if s == t {
            return Some(0);
        }
        SCRATCH.with(|sc| {
            let (f, b) = &mut *sc.borrow_mut();
            self.search(s, t, f, b).map(|(d, _)| d)
        })
    }

    fn route(&self, s: NodeId, t: NodeId) -> Option<Route> {
        if s == t {
            return Some(Route { nodes: vec![s], length_mm: 0, duration_s: None });
        }
        SCRATCH.with(|sc| {
            let (f, b) = &mut *sc.borrow_mut();
            let (length_mm, meet) = self.search(s, t, f, b)?;
            // Collect CH edges s..meet and meet..t, then expand.
            let mut head = Vec::new();
            let mut v = meet;
            while v != s {
                let (p, mid) = f.parent(v);
                head.push((p, v, mid));
                v = p;
            }
            head.reverse();
            let mut v = meet;
            while v != t {
                let (p, mid) = b.parent(v);
                head.push((v, p, mid));
                v = p;
            }
            let mut nodes = vec![s];
            for (a, c, mid) in head {
                self.unpack(a, c, mid, &mut nodes);
            }
            Some(Route { nodes, length_mm, duration_s: None })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Location;
    use crate::routing::dijkstra_all;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn graph(n: i64, edges: &[(i64, i64, u64)]) -> RoadNetwork {
        let nodes = (0..n).map(|i| (i, Location { lon: i as f64 * 0.001, lat: 0.0 })).collect();
        RoadNetwork::build(nodes, edges.to_vec()).unwrap()
    }

    #[test]
    fn two_nodes_no_shortcuts() {
        let net = graph(2, &[(0, 1, 10), (1, 0, 10)]);
        let cg = ContractedGraph::preprocess(&net);
        assert!(cg.shortcuts().is_empty());
        assert_eq!(cg.distance(0, 1), Some(10));
    }

    #[test]
    fn line_contracting_middle_adds_both_shortcuts() {
        let net = graph(3, &[(0, 1, 100), (1, 0, 100), (1, 2, 200), (2, 1, 200)]);
        let cg = ContractedGraph::preprocess_in_order(&net, &[1, 0, 2]);
        assert_eq!(cg.level(1), 1);
        let sc = cg.shortcuts();
        assert_eq!(
            sc,
            vec![
                Shortcut { from: 0, to: 2, length_mm: 300, bridged: 1 },
                Shortcut { from: 2, to: 0, length_mm: 300, bridged: 1 },
            ]
        );
        let r = cg.route(0, 2).unwrap();
        assert_eq!(r.nodes, vec![0, 1, 2]);
        assert_eq!(r.length_mm, 300);
        assert_eq!(cg.route(1, 1).unwrap().nodes, vec![1]);
    }

    #[test]
    fn levels_are_a_permutation() {
        let net = graph(5, &[(0, 1, 1), (1, 2, 1), (2, 3, 1), (3, 4, 1), (4, 0, 1)]);
        let cg = ContractedGraph::preprocess(&net);
        let mut lv: Vec<u32> = (0..5).map(|v| cg.level(v)).collect();
        lv.sort_unstable();
        assert_eq!(lv, vec![1, 2, 3, 4, 5]);
    }

    fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> RoadNetwork {
        // Grid-like planar points, each connected to a few nearby nodes,
        // plus a ring so the graph is strongly connected.
        let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen::<f64>() * 0.05, rng.gen::<f64>() * 0.05)).collect();
        let nodes = pts.iter().enumerate().map(|(i, &(x, y))| (i as i64, Location { lon: x, lat: y })).collect();
        let mut edges = Vec::new();
        for i in 0..n {
            let j = (i + 1) % n;
            edges.push((i as i64, j as i64, rng.gen_range(1..5000u64)));
            for _ in 0..2 {
                let k = rng.gen_range(0..n);
                let len = rng.gen_range(1..5000u64);
                edges.push((i as i64, k as i64, len));
                if rng.gen_bool(0.7) {
                    edges.push((k as i64, i as i64, len));
                }
            }
        }
        RoadNetwork::build(nodes, edges).unwrap()
    }

    #[test]
    fn matches_dijkstra_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..5 {
            let n = rng.gen_range(20..80);
            let net = random_graph(&mut rng, n);
            let cg = ContractedGraph::preprocess(&net);
            for s in 0..net.node_count() as NodeId {
                let truth = dijkstra_all(&net, s);
                for t in 0..net.node_count() as NodeId {
                    assert_eq!(cg.distance(s, t), truth[t as usize], "{s}->{t}");
                    let r = cg.route(s, t).unwrap();
                    assert_eq!(r.nodes.first(), Some(&s));
                    assert_eq!(r.nodes.last(), Some(&t));
                    let sum: u64 = r.nodes.windows(2).map(|w| net.edge_length(w[0], w[1]).unwrap()).sum();
                    assert_eq!(sum, r.length_mm);
                }
            }
        }
    }

    #[test]
    fn shortcut_lengths_equal_bridged_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = random_graph(&mut rng, 60);
        let cg = ContractedGraph::preprocess(&net);
        for s in cg.shortcuts() {
            let r = cg.route(s.from, s.to).unwrap();
            // The query may find something shorter than the shortcut, never longer.
            assert!(r.length_mm <= s.length_mm);
            let mut path = vec![s.from];
            cg.unpack(s.from, s.to, s.bridged, &mut path);
            let sum: u64 = path.windows(2).map(|w| net.edge_length(w[0], w[1]).unwrap()).sum();
            assert_eq!(sum, s.length_mm);
        }
    }

    #[test]
    fn preprocessing_is_deterministic_and_cacheable() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = random_graph(&mut rng, 70);
        let a = ContractedGraph::preprocess(&net);
        let b = ContractedGraph::preprocess(&net);
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        let c = ContractedGraph::load_or_build(&net, dir.path()).unwrap();
        let d = ContractedGraph::load_or_build(&net, dir.path()).unwrap();
        assert_eq!(a, c);
        assert_eq!(c, d);
    }
}
