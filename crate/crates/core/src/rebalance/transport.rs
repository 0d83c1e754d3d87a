use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::geo::CostMatrix;

/// Integer solution of the unbalanced transportation problem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportPlan {
    pub n: usize,
    /// Nonzero flows `(from, to, bikes)`, sorted by `(from, to)`.
    pub flows: Vec<(usize, usize, u32)>,
    /// Unmet demand per cell.
    pub slack: Vec<u32>,
    /// `Σ C·T + Σ λ·S` in millimeters.
    pub objective: u64,
}

impl TransportPlan {
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.flows.iter().find(|&&(a, b, _)| a == i && b == j).map_or(0, |f| f.2)
    }

    pub fn row_sum(&self, i: usize) -> u32 {
        self.flows.iter().filter(|f| f.0 == i).map(|f| f.2).sum()
    }

    pub fn inflow(&self, j: usize) -> u32 {
        self.flows.iter().filter(|f| f.1 == j).map(|f| f.2).sum()
    }

    /// Flows between distinct cells, i.e. actual bike moves.
    pub fn moves(&self) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
        self.flows.iter().copied().filter(|f| f.0 != f.1)
    }

    /// Checks both constraint families and recomputes the objective.
    pub fn verify(&self, b: &[u32], d: &[u32], c: &CostMatrix, lambda: &[u64]) -> std::result::Result<(), String> {
        let mut cost = 0u64;
        for &(i, j, t) in &self.flows {
            let cij = c.get(i, j).ok_or_else(|| format!("flow on infinite arc {i}->{j}"))?;
            cost += cij * t as u64;
        }
        for i in 0..self.n {
            if self.row_sum(i) > b[i] {
                return Err(format!("row {i} ships {} > supply {}", self.row_sum(i), b[i]));
            }
            if self.inflow(i) + self.slack[i] < d[i] {
                return Err(format!(
                    "cell {i} receives {} + slack {} < demand {}",
                    self.inflow(i),
                    self.slack[i],
                    d[i]
                ));
            }
            cost += lambda[i] * self.slack[i] as u64;
        }
        if cost != self.objective {
            return Err(format!("objective {} != recomputed {cost}", self.objective));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Arc {
    to: usize,
    cap: i64,
    cost: i64,
}

struct FlowNet {
    arcs: Vec<Arc>,
    adj: Vec<Vec<usize>>,
}

impl FlowNet {
    fn new(n: usize) -> Self {
        Self { arcs: Vec::new(), adj: vec![Vec::new(); n] }
    }

    fn add(&mut self, from: usize, to: usize, cap: i64, cost: i64) -> usize {
        let id = self.arcs.len();
        self.arcs.push(Arc { to, cap, cost });
        self.arcs.push(Arc { to: from, cap: 0, cost: -cost });
        self.adj[from].push(id);
        self.adj[to].push(id + 1);
        id
    }

    /// Successive shortest paths with Johnson potentials. Arc costs are
    /// non-negative initially, so zero potentials are valid to start.
    /// Returns the shipped amount and its cost.
    fn min_cost_flow(&mut self, s: usize, t: usize, want: i64) -> (i64, i64) {
        let n = self.adj.len();
        let mut pot = vec![0i64; n];
        let (mut flow, mut cost) = (0i64, 0i64);
        while flow < want {
            let mut dist = vec![i64::MAX; n];
            let mut via = vec![usize::MAX; n];
            dist[s] = 0;
            let mut heap = BinaryHeap::from([Reverse((0i64, s))]);
            while let Some(Reverse((d, u))) = heap.pop() {
                if d > dist[u] {
                    continue;
                }
                for &a in &self.adj[u] {
                    let arc = self.arcs[a];
                    if arc.cap <= 0 {
                        continue;
                    }
                    let nd = d + arc.cost + pot[u] - pot[arc.to];
                    if nd < dist[arc.to] {
                        dist[arc.to] = nd;
                        via[arc.to] = a;
                        heap.push(Reverse((nd, arc.to)));
                    }
                }
            }
            if dist[t] == i64::MAX {
                break;
            }
            for v in 0..n {
                if dist[v] < i64::MAX {
                    pot[v] += dist[v];
                }
            }
            let mut push = want - flow;
            let mut v = t;
            while v != s {
                let a = via[v];
                push = push.min(self.arcs[a].cap);
                v = self.arcs[a ^ 1].to;
            }
            let mut v = t;
            while v != s {
                let a = via[v];
                self.arcs[a].cap -= push;
                self.arcs[a ^ 1].cap += push;
                cost += push * self.arcs[a].cost;
                v = self.arcs[a ^ 1].to;
            }
            flow += push;
        }
        (flow, cost)
    }
}

/// Solves `min Σ C_ij T_ij + Σ λ_j S_j` subject to `Σ_j T_ij ≤ B_i`,
/// `Σ_i T_ij + S_j ≥ D_j`, `T, S ≥ 0` as a min-cost flow with a virtual
/// slack source. Cells with infinite cost between them get no arc.
///
/// Among equal-cost optima the result is fixed by the arc insertion order,
/// so it is deterministic and unchanged when all costs are scaled by the
/// same positive factor.
pub fn solve_transportation(b: &[u32], d: &[u32], c: &CostMatrix, lambda: &[u64]) -> Result<TransportPlan> {
    let n = b.len();
    if d.len() != n || c.len() != n || lambda.len() != n {
        return Err(Error::Transport(format!(
            "dimension mismatch: |B|={n}, |D|={}, C is {}x{}, |λ|={}",
            d.len(),
            c.len(),
            c.len(),
            lambda.len()
        )));
    }
    if let Some(i) = (0..n).find(|&i| c.get(i, i) != Some(0)) {
        return Err(Error::Transport(format!("C[{i}][{i}] must be 0")));
    }
    let demand: i64 = d.iter().map(|&x| x as i64).sum();
    // 0 source, 1..=n supply, n+1..=2n demand, 2n+1 slack, 2n+2 sink.
    let (src, slack_node, sink) = (0, 2 * n + 1, 2 * n + 2);
    let mut g = FlowNet::new(2 * n + 3);
    for (i, &bi) in b.iter().enumerate() {
        g.add(src, 1 + i, bi as i64, 0);
    }
    g.add(src, slack_node, demand, 0);
    let mut cell_arcs = Vec::new();
    // Arcs out of empty supplies or into empty demands could never carry flow.
    for i in (0..n).filter(|&i| b[i] > 0) {
        for j in (0..n).filter(|&j| d[j] > 0) {
            if let Some(cij) = c.get(i, j) {
                let id = g.add(1 + i, 1 + n + j, b[i] as i64, cij as i64);
                cell_arcs.push((i, j, id));
            }
        }
    }
    let mut slack_arcs = Vec::with_capacity(n);
    for j in 0..n {
        slack_arcs.push(g.add(slack_node, 1 + n + j, d[j] as i64, lambda[j] as i64));
        g.add(1 + n + j, sink, d[j] as i64, 0);
    }
    let (flow, cost) = g.min_cost_flow(src, sink, demand);
    debug_assert_eq!(flow, demand, "slack source makes every demand satisfiable");
    let shipped = |id: usize| g.arcs[id ^ 1].cap as u32;
    let flows = cell_arcs.iter().filter(|a| shipped(a.2) > 0).map(|&(i, j, id)| (i, j, shipped(id))).collect();
    let slack = slack_arcs.iter().map(|&id| shipped(id)).collect();
    Ok(TransportPlan { n, flows, slack, objective: cost as u64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive search over all integer T with row sums ≤ B; slack is then
    /// forced to max(0, D - inflow).
    pub(crate) fn brute_force(b: &[u32], d: &[u32], c: &CostMatrix, lambda: &[u64]) -> u64 {
        fn rows(n: usize, budget: u32, row: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
            if row.len() == n {
                out.push(row.clone());
                return;
            }
            for x in 0..=budget {
                row.push(x);
                rows(n, budget - x, row, out);
                row.pop();
            }
        }
        let n = b.len();
        let options: Vec<Vec<Vec<u32>>> = (0..n)
            .map(|i| {
                let mut out = Vec::new();
                rows(n, b[i], &mut Vec::new(), &mut out);
                out.retain(|r| r.iter().enumerate().all(|(j, &x)| x == 0 || c.get(i, j).is_some()));
                out
            })
            .collect();
        #[allow(clippy::too_many_arguments)]
        fn go(
            i: usize,
            options: &[Vec<Vec<u32>>],
            c: &CostMatrix,
            d: &[u32],
            lambda: &[u64],
            inflow: &mut [u32],
            acc: u64,
            best: &mut u64,
        ) {
            let n = d.len();
            if i == n {
                let slack: u64 = (0..n).map(|j| lambda[j] * d[j].saturating_sub(inflow[j]) as u64).sum();
                *best = (*best).min(acc + slack);
                return;
            }
            for row in &options[i] {
                let mut add = 0;
                for j in 0..n {
                    inflow[j] += row[j];
                    add += row[j] as u64 * c.get(i, j).unwrap_or(0);
                }
                go(i + 1, options, c, d, lambda, inflow, acc + add, best);
                for j in 0..n {
                    inflow[j] -= row[j];
                }
            }
        }
        let mut best = u64::MAX;
        go(0, &options, c, d, lambda, &mut vec![0; n], 0, &mut best);
        best
    }

    pub(crate) fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<u32>, Vec<u32>, CostMatrix, Vec<u64>) {
        let n = rng.gen_range(1..=4);
        let b: Vec<u32> = (0..n).map(|_| rng.gen_range(0..=3)).collect();
        let d: Vec<u32> = (0..n).map(|_| rng.gen_range(0..=3)).collect();
        let rows: Vec<Vec<Option<u64>>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            Some(0)
                        } else if rng.gen_bool(0.1) {
                            None
                        } else {
                            Some(rng.gen_range(1..=5) * 100)
                        }
                    })
                    .collect()
            })
            .collect();
        let c = CostMatrix::from_rows(rows);
        // Mostly the intended regime (slack as last resort), sometimes cheap slack.
        let lambda = if rng.gen_bool(0.7) {
            vec![10 * c.max_finite().max(1); n]
        } else {
            (0..n).map(|_| rng.gen_range(1..=600)).collect()
        };
        (b, d, c, lambda)
    }

    #[test]
    fn single_cell_serves_locally() {
        let c = CostMatrix::from_rows(vec![vec![Some(0)]]);
        let p = solve_transportation(&[3], &[2], &c, &[1_000]).unwrap();
        assert_eq!(p.flows, vec![(0, 0, 2)]);
        assert_eq!(p.slack, vec![0]);
        assert_eq!(p.objective, 0);
    }

    #[test]
    fn two_cells_single_cheap_flow() {
        let c = CostMatrix::from_rows(vec![vec![Some(0), Some(400)], vec![Some(400), Some(0)]]);
        let p = solve_transportation(&[0, 5], &[3, 0], &c, &[1_000_000, 1_000_000]).unwrap();
        assert_eq!(p.get(1, 0), 3);
        assert_eq!(p.objective, 1200);
        assert_eq!(p.slack, vec![0, 0]);
    }

    #[test]
    fn infinite_cost_forces_slack() {
        let c = CostMatrix::from_rows(vec![vec![Some(0), None], vec![None, Some(0)]]);
        let p = solve_transportation(&[0, 5], &[3, 0], &c, &[7, 7]).unwrap();
        assert!(p.flows.is_empty());
        assert_eq!(p.slack, vec![3, 0]);
        assert_eq!(p.objective, 21);
    }

    #[test]
    fn rejects_bad_dimensions_and_diagonal() {
        let c = CostMatrix::from_rows(vec![vec![Some(0)]]);
        assert!(solve_transportation(&[1, 2], &[1], &c, &[1]).is_err());
        let c = CostMatrix::from_rows(vec![vec![Some(5)]]);
        assert!(solve_transportation(&[1], &[1], &c, &[1]).is_err());
    }

    #[test]
    fn supply_covering_demand_costs_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let (b, _, c, lambda) = random_instance(&mut rng);
            let d: Vec<u32> = b.iter().map(|&x| rng.gen_range(0..=x)).collect();
            let p = solve_transportation(&b, &d, &c, &lambda).unwrap();
            assert_eq!(p.objective, 0);
            assert_eq!(p.moves().count(), 0);
        }
    }

    #[test]
    fn matches_exhaustive_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let (b, d, c, lambda) = random_instance(&mut rng);
            let p = solve_transportation(&b, &d, &c, &lambda).unwrap();
            p.verify(&b, &d, &c, &lambda).unwrap();
            assert_eq!(p.objective, brute_force(&b, &d, &c, &lambda), "B={b:?} D={d:?} C={c:?} λ={lambda:?}");
        }
    }

    #[test]
    fn scaling_costs_keeps_the_plan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let (b, d, c, lambda) = random_instance(&mut rng);
            let k = rng.gen_range(2..=1000);
            let p = solve_transportation(&b, &d, &c, &lambda).unwrap();
            let lk: Vec<u64> = lambda.iter().map(|x| x * k).collect();
            let q = solve_transportation(&b, &d, &c.scaled(k), &lk).unwrap();
            assert_eq!(p.flows, q.flows);
            assert_eq!(p.slack, q.slack);
            assert_eq!(p.objective * k, q.objective);
        }
    }
}
