use std::cell::RefCell;
use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::Arc;

use super::{Route, Router};
use crate::geo::{NodeId, RoadNetwork};

pub(crate) const NO_NODE: u32 = u32::MAX;

/// Tentative labels for one search direction, reset in O(1) by bumping a
/// generation stamp.
#[derive(Debug, Default)]
pub(crate) struct Labels {
    stamp: Vec<u32>,
    dist: Vec<u64>,
    parent: Vec<u32>,
    via: Vec<u32>,
    generation: u32,
}

impl Labels {
    pub(crate) fn reset(&mut self, n: usize) {
        if self.stamp.len() < n {
            self.stamp.resize(n, 0);
            self.dist.resize(n, 0);
            self.parent.resize(n, NO_NODE);
            self.via.resize(n, NO_NODE);
        }
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.generation = 1;
        }
    }

    pub(crate) fn get(&self, v: NodeId) -> Option<u64> {
        (self.stamp[v as usize] == self.generation).then(|| self.dist[v as usize])
    }

    pub(crate) fn set(&mut self, v: NodeId, d: u64, parent: u32, via: u32) {
        let i = v as usize;
        self.stamp[i] = self.generation;
        self.dist[i] = d;
        self.parent[i] = parent;
        self.via[i] = via;
    }

    pub(crate) fn parent(&self, v: NodeId) -> (u32, u32) {
        (self.parent[v as usize], self.via[v as usize])
    }
}

thread_local! {
    pub(crate) static SCRATCH: RefCell<(Labels, Labels)> = RefCell::new(Default::default());
}

/// One-to-all Dijkstra over the base network. The reference oracle for
/// every faster query path.
pub fn dijkstra_all(net: &RoadNetwork, s: NodeId) -> Vec<Option<u64>> {
    let mut dist = vec![None; net.node_count()];
    let mut heap = BinaryHeap::new();
    dist[s as usize] = Some(0);
    heap.push(Reverse((0u64, s)));
    while let Some(Reverse((d, u))) = heap.pop() {
        if dist[u as usize].is_some_and(|x| d > x) {
            continue;
        }
        for (w, len) in net.out_edges(u) {
            let nd = d + len;
            if dist[w as usize].is_none_or(|x| nd < x) {
                dist[w as usize] = Some(nd);
                heap.push(Reverse((nd, w)));
            }
        }
    }
    dist
}

/// Single-pair Dijkstra with path reconstruction.
pub fn dijkstra_path(net: &RoadNetwork, s: NodeId, t: NodeId) -> Option<Route> {
    let n = net.node_count();
    let mut dist: Vec<Option<u64>> = vec![None; n];
    let mut parent = vec![NO_NODE; n];
    let mut heap = BinaryHeap::new();
    dist[s as usize] = Some(0);
    heap.push(Reverse((0u64, s)));
    while let Some(Reverse((d, u))) = heap.pop() {
        if dist[u as usize].is_some_and(|x| d > x) {
            continue;
        }
        if u == t {
            break;
        }
        for (w, len) in net.out_edges(u) {
            let nd = d + len;
            if dist[w as usize].is_none_or(|x| nd < x) {
                dist[w as usize] = Some(nd);
                parent[w as usize] = u;
                heap.push(Reverse((nd, w)));
            }
        }
    }
    let length_mm = dist[t as usize]?;
    let mut nodes = vec![t];
    let mut v = t;
    while v != s {
        v = parent[v as usize];
        nodes.push(v);
    }
    nodes.reverse();
    Some(Route { nodes, length_mm, duration_s: None })
}

/// Bidirectional Dijkstra on the unprocessed network.
#[derive(Debug, Clone)]
pub struct BidirectionalDijkstra {
    net: Arc<RoadNetwork>,
    first_in: Vec<u32>,
    tail: Vec<NodeId>,
    in_len: Vec<u64>,
}

impl BidirectionalDijkstra {
    pub fn new(net: Arc<RoadNetwork>) -> Self {
        let (first_in, tail, in_len) = net.reverse_csr();
        Self { net, first_in, tail, in_len }
    }

    pub fn network(&self) -> &Arc<RoadNetwork> {
        &self.net
    }

    fn in_edges(&self, v: NodeId) -> impl Iterator<Item = (NodeId, u64)> + '_ {
        let r = self.first_in[v as usize] as usize..self.first_in[v as usize + 1] as usize;
        self.tail[r.clone()].iter().copied().zip(self.in_len[r].iter().copied())
    }

    fn search(&self, s: NodeId, t: NodeId, fwd: &mut Labels, bwd: &mut Labels) -> Option<(u64, NodeId)> {
        let n = self.net.node_count();
        fwd.reset(n);
        bwd.reset(n);
        fwd.set(s, 0, NO_NODE, NO_NODE);
        bwd.set(t, 0, NO_NODE, NO_NODE);
        let mut qf = BinaryHeap::from([Reverse((0u64, s))]);
        let mut qb = BinaryHeap::from([Reverse((0u64, t))]);
        let mut best: Option<(u64, NodeId)> = if s == t { Some((0, s)) } else { None };
        loop {
            let tf = qf.peek().map(|r| r.0 .0);
            let tb = qb.peek().map(|r| r.0 .0);
            let forward = match (tf, tb) {
                (None, None) => break,
                (Some(a), Some(b)) => {
                    if best.is_some_and(|(bd, _)| a + b >= bd) {
                        break;
                    }
                    a <= b
                }
                (Some(a), None) => {
                    if best.is_some_and(|(bd, _)| a >= bd) {
                        break;
                    }
                    true
                }
                (None, Some(b)) => {
                    if best.is_some_and(|(bd, _)| b >= bd) {
                        break;
                    }
                    false
                }
            };
            let (queue, mine, other) = if forward { (&mut qf, &mut *fwd, &*bwd) } else { (&mut qb, &mut *bwd, &*fwd) };
            let Reverse((d, u)) = queue.pop().expect("peeked");
            if mine.get(u).is_some_and(|x| d > x) {
                continue;
            }
            if let Some(o) = other.get(u) {
                let total = d + o;
                if best.is_none_or(|(bd, bu)| total < bd || (total == bd && u < bu)) {
                    best = Some((total, u));
                }
            }
            let mut relax = |w: NodeId, len: u64| {
                let nd = d + len;
                if mine.get(w).is_none_or(|x| nd < x) {
                    mine.set(w, nd, u, NO_NODE);
                    queue.push(Reverse((nd, w)));
                }
            };
            if forward {
                self.net.out_edges(u).for_each(|(w, l)| relax(w, l));
            } else {
                self.in_edges(u).for_each(|(w, l)| relax(w, l));
            }
        }
        best
    }
}

impl Router for BidirectionalDijkstra {
    fn distance(&self, s: NodeId, t: NodeId) -> Option<u64> {
        SCRATCH.with(|sc| {
            let (f, b) = &mut *sc.borrow_mut();
            self.search(s, t, f, b).map(|(d, _)| d)
        })
    }

    fn route(&self, s: NodeId, t: NodeId) -> Option<Route> {
        SCRATCH.with(|sc| {
            let (f, b) = &mut *sc.borrow_mut();
            let (length_mm, meet) = self.search(s, t, f, b)?;
            let mut nodes = vec![meet];
            let mut v = meet;
            while v != s {
                v = f.parent(v).0;
                nodes.push(v);
            }
            nodes.reverse();
            let mut v = meet;
            while v != t {
                v = b.parent(v).0;
                nodes.push(v);
            }
            Some(Route { nodes, length_mm, duration_s: None })
        })
    }
}
