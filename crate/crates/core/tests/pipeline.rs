//! End-to-end: prepared files on disk, a config file, a run and a replay of its log.

use std::fs;
use std::io::BufReader;

use bikesim::demandio::{SyntheticCity, SyntheticSpec};
use bikesim::geo::HighwayFilter;
use bikesim::metrics::{compute_kpis, timeline, Mode};
use bikesim::modes::{ModeConfig, RebalancingScenario};
use bikesim::runner::{self, load_any_network, prepare_synthetic, RunConfig, KPI_FILE, LOG_FILE, TIMELINE_FILE};

fn spec() -> SyntheticSpec {
    SyntheticSpec { grid: 14, stations: 16, trips_per_day: 220.0, days: 2, history_weeks: 1, ..Default::default() }
}

#[test]
fn prepared_directory_runs_and_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let prepared = prepare_synthetic(&spec(), 300.0, &tmp.path().join("data")).unwrap();
    assert!(prepared.window_requests > 0 && prepared.window_requests < prepared.requests);

    for (mode, reb, fleet) in [
        (Mode::Station, RebalancingScenario::None, 120),
        (Mode::Dockless, RebalancingScenario::None, 120),
        (Mode::Autonomous, RebalancingScenario::Predictive, 40),
    ] {
        let mut cfg = RunConfig::load(&prepared.config).unwrap();
        cfg.sim = ModeConfig { fleet_size: fleet, rebalancing: reb, ..ModeConfig::nominal(mode) };
        cfg.out = tmp.path().join(format!("{}-{reb:?}", mode.as_str()));
        let outcome = runner::run(&cfg).unwrap();
        assert_eq!(outcome.report.demand as usize, prepared.window_requests);

        let log = || BufReader::new(fs::File::open(cfg.out.join(LOG_FILE)).unwrap());
        let replayed = compute_kpis(log()).unwrap();
        assert_eq!(replayed, outcome.report);
        assert_eq!(fs::read_to_string(cfg.out.join(KPI_FILE)).unwrap(), replayed.to_kv());
        let bins = timeline(log(), cfg.output.timeline_bin_s * 1000).unwrap();
        assert_eq!(fs::read_to_string(cfg.out.join(TIMELINE_FILE)).unwrap(), bins.to_csv());
    }
}

#[test]
fn osm_extract_matches_the_generated_network() {
    let tmp = tempfile::tempdir().unwrap();
    let city = SyntheticCity::generate(&spec()).unwrap();
    let path = tmp.path().join("city.osm");
    fs::write(&path, &city.osm_xml).unwrap();
    let bbox = city.network.bbox().unwrap();
    let text = format!("{},{},{},{}", bbox.west - 0.01, bbox.south - 0.01, bbox.east + 0.01, bbox.north + 0.01);
    let net = load_any_network(&path, Some(&text), &HighwayFilter::default()).unwrap();
    assert_eq!(net.node_count(), city.network.node_count());
    assert_eq!(net.edge_count(), city.network.edge_count());
    assert!(load_any_network(&path, None, &HighwayFilter::default()).is_err(), "an extract needs a bounding box");
    let none = HighwayFilter { allow: Some(vec!["cycleway".into()]), ..Default::default() };
    assert!(load_any_network(&path, Some(&text), &none).is_err(), "nothing left after filtering");
}
