use toml::Value;

use super::{RunConfig, SweepSpec};
use crate::error::{Error, Result};
use crate::metrics::Mode;
use crate::modes::{ModeConfig, RebalancingScenario};

pub const PRESETS: &[&str] = &[
    "sb-nominal",
    "dl-nominal",
    "au-nominal-nr",
    "au-nominal-ir",
    "au-nominal-pr",
    "same-fleet-2000",
    "same-fleet-3000",
    "level-of-service-99",
    "appendix-sweeps",
];

/// Fleet-size search for a target share of served trips.
#[derive(Debug, Clone, PartialEq)]
pub struct LosSpec {
    pub base: RunConfig,
    pub variants: Vec<String>,
    pub target_pct: f64,
    pub seeds: Vec<u64>,
    pub min_fleet: u32,
    pub max_fleet: u32,
    /// The search stops once the bracket is this narrow.
    pub resolution: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Preset {
    Run(RunConfig),
    Sweep(SweepSpec),
    Sweeps(Vec<SweepSpec>),
    LevelOfService(LosSpec),
}

const VARIANTS: [&str; 5] = ["station", "dockless", "autonomous-nr", "autonomous-ir", "autonomous-pr"];

fn run(mode: Mode, rebalancing: RebalancingScenario, out: &str) -> RunConfig {
    RunConfig { out: out.into(), sim: ModeConfig { rebalancing, ..ModeConfig::nominal(mode) }, ..Default::default() }
}

fn ints(v: impl IntoIterator<Item = i64>) -> Vec<Value> {
    v.into_iter().map(Value::Integer).collect()
}

fn floats(v: &[f64]) -> Vec<Value> {
    v.iter().map(|&x| Value::Float(x)).collect()
}

fn same_fleet(fleet: u32) -> SweepSpec {
    let name = format!("same-fleet-{fleet}");
    SweepSpec {
        base: RunConfig { out: format!("runs/{name}").into(), ..Default::default() },
        name,
        axis: "variant".into(),
        values: VARIANTS.iter().map(|v| Value::String(v.to_string())).collect(),
        fleet_sizes: vec![fleet],
        seeds: vec![],
    }
}

/// Parameter grids of the appendix: every axis is crossed with all fleet
/// sizes of its system, the other parameters staying nominal.
fn appendix() -> Vec<SweepSpec> {
    let walk_radius = ints([100, 300, 500, 750, 1000, 1500]);
    let walking = ints(3..=8);
    let riding = ints([5, 8, 10, 12, 15, 20]);
    let sb_fleets: Vec<u32> = (1000..=5500).step_by(500).collect();
    let dl_fleets: Vec<u32> = (2000..=11000).step_by(1000).collect();
    let au_fleets = vec![300, 500, 600, 700, 800, 1000, 1500, 2000, 2500, 3000];

    let mut out = Vec::new();
    let mut add = |prefix: &str, base: &RunConfig, fleets: &[u32], axis: &str, values: Vec<Value>| {
        let name = format!("{prefix}-{}", axis.replace(['.', '_'], "-"));
        out.push(SweepSpec {
            base: RunConfig { out: format!("runs/appendix/{name}").into(), ..base.clone() },
            name,
            axis: axis.into(),
            values,
            fleet_sizes: fleets.to_vec(),
            seeds: vec![],
        });
    };

    let sb = run(Mode::Station, RebalancingScenario::None, "");
    add("sb", &sb, &sb_fleets, "walk_radius_m", walk_radius.clone());
    add("sb", &sb, &sb_fleets, "walking_speed_kmh", walking.clone());
    add("sb", &sb, &sb_fleets, "riding_speed_kmh", riding.clone());
    add("sb", &sb, &sb_fleets, "beta", floats(&[0.0, 0.5, 0.8, 0.9, 0.98, 1.0]));
    add("sb", &sb, &sb_fleets, "min_bikes_docks", ints(0..=5));

    let dl = run(Mode::Dockless, RebalancingScenario::None, "");
    add("dl", &dl, &dl_fleets, "walk_radius_m", walk_radius);
    add("dl", &dl, &dl_fleets, "walking_speed_kmh", walking);
    add("dl", &dl, &dl_fleets, "riding_speed_kmh", riding.clone());

    for (tag, reb) in [
        ("au-nr", RebalancingScenario::None),
        ("au-ir", RebalancingScenario::Ideal),
        ("au-pr", RebalancingScenario::Predictive),
    ] {
        let au = run(Mode::Autonomous, reb, "");
        add(tag, &au, &au_fleets, "autonomous_radius_m", ints((500..=3000).step_by(500)));
        add(tag, &au, &au_fleets, "autonomous_speed_kmh", floats(&[1.0, 2.5, 5.0, 10.0, 15.0, 20.0]));
        add(tag, &au, &au_fleets, "riding_speed_kmh", riding.clone());
        add(tag, &au, &au_fleets, "battery.min_level", floats(&[0.05, 0.10, 0.15, 0.20, 0.25, 0.30]));
        add(tag, &au, &au_fleets, "battery.autonomy_km", ints((30..=130).step_by(20)));
        add(tag, &au, &au_fleets, "battery.recharge_time_h", floats(&[0.5, 1.0, 2.0, 4.0, 6.0, 8.0]));
    }
    out
}

/// Looks up a named experiment. Data paths are the defaults written by
/// `prepare`; callers usually rebase them.
pub fn preset(name: &str) -> Result<Preset> {
    Ok(match name {
        "sb-nominal" => Preset::Run(run(Mode::Station, RebalancingScenario::None, "runs/sb-nominal")),
        "dl-nominal" => Preset::Run(run(Mode::Dockless, RebalancingScenario::None, "runs/dl-nominal")),
        "au-nominal-nr" => Preset::Run(run(Mode::Autonomous, RebalancingScenario::None, "runs/au-nominal-nr")),
        "au-nominal-ir" => Preset::Run(run(Mode::Autonomous, RebalancingScenario::Ideal, "runs/au-nominal-ir")),
        "au-nominal-pr" => Preset::Run(run(Mode::Autonomous, RebalancingScenario::Predictive, "runs/au-nominal-pr")),
        "same-fleet-2000" => Preset::Sweep(same_fleet(2000)),
        "same-fleet-3000" => Preset::Sweep(same_fleet(3000)),
        "level-of-service-99" => Preset::LevelOfService(LosSpec {
            base: RunConfig { out: "runs/level-of-service-99".into(), ..Default::default() },
            variants: VARIANTS.iter().map(|v| v.to_string()).collect(),
            target_pct: 99.0,
            seeds: vec![1, 2, 3],
            min_fleet: 100,
            max_fleet: 12_000,
            resolution: 50,
        }),
        "appendix-sweeps" => Preset::Sweeps(appendix()),
        _ => return Err(Error::UnknownPreset { name: name.into(), available: PRESETS.join(", ") }),
    })
}
