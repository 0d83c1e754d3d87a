//! Property tests for the invariants every component must keep.

use std::io::Cursor;
use std::sync::{Arc, OnceLock};

use bikesim::demandio::{SyntheticCity, SyntheticSpec};
use bikesim::engine::{Agenda, EventQueue, LinearQueue};
use bikesim::geo::{build_grid, nearest_node_brute, CostMatrix, Location, NodeIndex, RoadNetwork};
use bikesim::metrics::{compute_kpis, read_log, Mode, Record, SharedBuffer};
use bikesim::modes::{ModeConfig, RebalancingScenario};
use bikesim::rebalance::solve_transportation;
use bikesim::routing::{dijkstra_all, ContractedGraph, Router, RoutingBackend, RoutingService};
use bikesim::runner::{Inputs, RunConfig, WindowConfig};
use proptest::prelude::*;

const CENTER: Location = Location { lon: -71.06, lat: 42.36 };

fn graph() -> impl Strategy<Value = RoadNetwork> {
    (3usize..40).prop_flat_map(|n| {
        let nodes = prop::collection::vec((0.0..std::f64::consts::TAU, 0.0..2000.0f64), n);
        let chords = prop::collection::vec((0..n, 0..n, 1.0..2.0f64), 0..3 * n);
        let stretch = prop::collection::vec(1.0..2.0f64, n);
        (nodes, chords, stretch).prop_map(move |(nodes, chords, stretch)| {
            let pts: Vec<Location> = nodes.iter().map(|&(b, d)| CENTER.destination(b, d)).collect();
            let len = |a: usize, b: usize, k: f64| (pts[a].haversine(&pts[b]) * 1000.0 * k) as u64 + 1;
            // The ring keeps the graph strongly connected.
            let mut edges: Vec<(i64, i64, u64)> =
                (0..n).map(|i| (i as i64, ((i + 1) % n) as i64, len(i, (i + 1) % n, stretch[i]))).collect();
            edges.extend(chords.iter().filter(|c| c.0 != c.1).map(|&(a, b, k)| (a as i64, b as i64, len(a, b, k))));
            let nodes = pts.into_iter().enumerate().map(|(i, p)| (i as i64, p)).collect();
            RoadNetwork::build(nodes, edges).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ch_matches_dijkstra(net in graph()) {
        let ch = ContractedGraph::preprocess(&net);
        let n = net.node_count() as u32;
        for s in 0..n {
            let truth = dijkstra_all(&net, s);
            for t in 0..n {
                prop_assert_eq!(ch.distance(s, t), truth[t as usize]);
            }
        }
    }

    #[test]
    fn routes_follow_edges_and_sum_to_distance(net in graph(), s in 0u32..3, t in 0u32..3) {
        let ch = ContractedGraph::preprocess(&net);
        let r = ch.route(s, t).unwrap();
        prop_assert_eq!(r.nodes.first().copied(), Some(s));
        prop_assert_eq!(r.nodes.last().copied(), Some(t));
        let sum: u64 = r.nodes.windows(2).map(|w| net.edge_length(w[0], w[1]).expect("route uses an edge")).sum();
        prop_assert_eq!(sum, r.length_mm);
        prop_assert_eq!(Some(r.length_mm), ch.distance(s, t));
    }

    #[test]
    fn network_text_round_trips(net in graph()) {
        let back = RoadNetwork::from_text(Cursor::new(net.to_text())).unwrap();
        prop_assert_eq!(back.content_hash(), net.content_hash());
    }

    #[test]
    fn node_index_finds_the_nearest(
        net in graph(),
        probes in prop::collection::vec((0.0..std::f64::consts::TAU, 0.0..3000.0f64), 1..20),
    ) {
        let index = NodeIndex::new(&net);
        for (b, d) in probes {
            let p = CENTER.destination(b, d);
            let (_, got) = index.nearest(&p).unwrap();
            let (_, want) = nearest_node_brute(net.locations(), &p).unwrap();
            prop_assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn every_node_lies_in_its_cell(net in graph(), edge_m in 100.0..800.0f64) {
        let grid = build_grid(&net, edge_m).unwrap();
        for v in 0..net.node_count() as u32 {
            let c = grid.node_cell(v);
            prop_assert_eq!(grid.cell_of(&net.location(v)), Some(c));
            let d = grid.cells()[c as usize].centroid.haversine(&net.location(v));
            prop_assert!(d <= edge_m * 1.01, "node {v} is {d} m from its centroid");
        }
    }

    #[test]
    fn destination_inverts_haversine(bearing in 0.0..std::f64::consts::TAU, d in 0.0..50_000.0f64) {
        let p = CENTER.destination(bearing, d);
        prop_assert!((CENTER.haversine(&p) - d).abs() < 1e-6 * d.max(1.0));
    }

    #[test]
    fn agenda_matches_reference(ops in prop::collection::vec((0u8..4, 0u64..500), 1..200)) {
        let mut fast = EventQueue::new();
        let mut slow = LinearQueue::new();
        let mut handles = Vec::new();
        for (k, (op, x)) in ops.into_iter().enumerate() {
            match op {
                0 | 1 => {
                    let h = fast.schedule(x, k);
                    prop_assert_eq!(h, slow.schedule(x, k));
                    handles.push(h);
                }
                2 if !handles.is_empty() => {
                    let h = handles[x as usize % handles.len()];
                    prop_assert_eq!(fast.cancel(h), slow.cancel(h));
                }
                _ => {
                    let until = fast.now() + x;
                    let a = fast.pop_until(until);
                    prop_assert_eq!(&a, &slow.pop_until(until));
                    if let Some(e) = a {
                        prop_assert!(e.time <= until);
                    }
                }
            }
            prop_assert_eq!(fast.len(), slow.len());
            prop_assert_eq!(fast.peek_time(), slow.peek_time());
            prop_assert_eq!(fast.now(), slow.now());
        }
    }

    #[test]
    fn transport_plans_are_feasible_and_no_worse_than_doing_nothing(
        (b, d, costs, lambda) in (1usize..7).prop_flat_map(|n| (
            prop::collection::vec(0u32..6, n),
            prop::collection::vec(0u32..6, n),
            prop::collection::vec(prop::option::weighted(0.85, 1u64..10_000), n * n),
            prop::collection::vec(0u64..12_000, n),
        ))
    ) {
        let n = b.len();
        let c = CostMatrix::from_fn(n, |i, j| if i == j { Some(0) } else { costs[i * n + j] });
        let plan = solve_transportation(&b, &d, &c, &lambda).unwrap();
        prop_assert_eq!(plan.verify(&b, &d, &c, &lambda), Ok(()));
        let idle: u64 = d.iter().zip(&lambda).map(|(&x, &l)| x as u64 * l).sum();
        prop_assert!(plan.objective <= idle);
        // Raising every penalty can only raise the optimum.
        let dearer: Vec<u64> = lambda.iter().map(|l| l + 1).collect();
        prop_assert!(solve_transportation(&b, &d, &c, &dearer).unwrap().objective >= plan.objective);
    }
}

// ---------------------------------------------------------------- whole runs

fn town() -> &'static Inputs {
    static T: OnceLock<Inputs> = OnceLock::new();
    T.get_or_init(|| {
        let spec = SyntheticSpec {
            grid: 12,
            stations: 14,
            trips_per_day: 160.0,
            days: 1,
            history_weeks: 1,
            ..Default::default()
        };
        let city = SyntheticCity::generate(&spec).unwrap();
        let net = Arc::new(city.network.clone());
        let router = RoutingService::new(net.clone(), RoutingBackend::Auto, None).unwrap();
        let fmt = |t: chrono::NaiveDateTime| t.format("%Y-%m-%d %H:%M:%S").to_string();
        let window = WindowConfig { start: fmt(city.window.0), end: fmt(city.window.1) };
        Inputs::from_parts(
            net,
            Arc::new(router),
            &city.stations,
            city.request_file(1, 300.0).unwrap(),
            &window,
            200.0,
            None,
        )
        .unwrap()
    })
}

fn variant() -> impl Strategy<Value = (Mode, RebalancingScenario)> {
    prop_oneof![
        Just((Mode::Station, RebalancingScenario::None)),
        Just((Mode::Dockless, RebalancingScenario::None)),
        Just((Mode::Autonomous, RebalancingScenario::None)),
        Just((Mode::Autonomous, RebalancingScenario::Ideal)),
        Just((Mode::Autonomous, RebalancingScenario::Predictive)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn runs_conserve_and_replay(
        (mode, rebalancing) in variant(),
        fleet in 0u32..120,
        seed in 0..=i64::MAX as u64,
        walk in 50.0..800.0f64,
        speed in 2.0..20.0f64,
        autonomy in 5.0..80.0f64,
        claim in any::<bool>(),
    ) {
        let mut cfg = RunConfig { seed, ..Default::default() };
        cfg.sim = ModeConfig { fleet_size: fleet, rebalancing, ..ModeConfig::nominal(mode) };
        cfg.sim.walk_radius_m = walk;
        cfg.sim.autonomous_speed_kmh = speed;
        cfg.sim.battery.autonomy_km = autonomy;
        cfg.sim.prediction.claim_en_route = claim;
        if mode == Mode::Station {
            cfg.sim.fleet_size = fleet.min(100);
        }
        cfg.output.timeline_bin_s = 0;
        let buf = SharedBuffer::default();
        let r = town().simulate(&cfg, Some(Box::new(buf.clone()))).unwrap().report;
        let log = buf.bytes();

        prop_assert!(r.demand > 100, "demand {}", r.demand);
        prop_assert_eq!(r.served + r.unserved, r.demand);
        prop_assert_eq!(r.vkt_mm_by_class.iter().sum::<u64>(), r.vkt_mm);
        prop_assert_eq!(r.occupancy_violations, 0);
        for b in &r.bikes {
            prop_assert_eq!(b.time_ms.iter().sum::<u64>(), r.horizon_ms);
        }
        if rebalancing == RebalancingScenario::Ideal && r.served > 0 {
            prop_assert_eq!(r.avg_wait_min, Some(0.0));
        }
        let mut last = 0;
        let mut ordered = true;
        read_log(&log[..], |_, e| {
            ordered &= e.time_ms >= last;
            last = e.time_ms;
            if let Record::Move { soc: Some(s), .. } = e.record {
                ordered &= (-1e-9..=1.0 + 1e-9).contains(&s);
            }
        })
        .unwrap();
        prop_assert!(ordered, "log out of order or charge outside [0, 1]");
        prop_assert_eq!(compute_kpis(&log[..]).unwrap(), r);
    }
}
