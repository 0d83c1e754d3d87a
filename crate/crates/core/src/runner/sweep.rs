use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::Value;

use super::{run_with, Inputs, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::{KpiReport, Mode};
use crate::modes::{ModeConfig, RebalancingScenario};

/// Sets one parameter of `cfg`, addressed by its dotted config key
/// (`fleet_size`, `battery.min_level`, ...). The pseudo-key `variant` picks
/// the mode and rebalancing scenario together: `station`, `dockless`,
/// `autonomous-nr`, `autonomous-ir`, `autonomous-pr`.
pub fn set_param(cfg: &mut ModeConfig, key: &str, value: &Value) -> Result<()> {
    if key == "variant" {
        let v = value.as_str().ok_or_else(|| Error::Config(format!("variant must be a string, got {value}")))?;
        let (mode, rebalancing) = parse_variant(v)?;
        cfg.mode = mode;
        cfg.rebalancing = rebalancing;
        return Ok(());
    }
    let mut root = Value::try_from(&*cfg).map_err(|e| Error::Config(e.to_string()))?;
    let parts: Vec<&str> = key.split('.').collect();
    let (last, path) = parts.split_last().ok_or_else(|| Error::Config("empty parameter name".into()))?;
    let mut table = root.as_table_mut().expect("config is a table");
    for p in path {
        table = table
            .get_mut(*p)
            .and_then(Value::as_table_mut)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{key}`")))?;
    }
    let value = match (table.get(*last), value) {
        (Some(Value::Integer(_)), Value::Float(f)) if f.fract() == 0.0 => Value::Integer(*f as i64),
        _ => value.clone(),
    };
    table.insert(last.to_string(), value);
    *cfg =
        root.try_into().map_err(|e: toml::de::Error| Error::Config(format!("parameter `{key}`: {}", e.message())))?;
    Ok(())
}

fn parse_variant(v: &str) -> Result<(Mode, RebalancingScenario)> {
    Ok(match v {
        "station" | "sb" => (Mode::Station, RebalancingScenario::None),
        "dockless" | "dl" => (Mode::Dockless, RebalancingScenario::None),
        "autonomous-nr" | "au-nr" => (Mode::Autonomous, RebalancingScenario::None),
        "autonomous-ir" | "au-ir" => (Mode::Autonomous, RebalancingScenario::Ideal),
        "autonomous-pr" | "au-pr" => (Mode::Autonomous, RebalancingScenario::Predictive),
        _ => {
            return Err(Error::Config(format!(
                "unknown variant `{v}` (station, dockless, autonomous-nr, autonomous-ir, autonomous-pr)"
            )))
        }
    })
}

fn label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepAxes {
    #[serde(default)]
    name: String,
    axis: String,
    values: Vec<Value>,
    #[serde(default)]
    fleet_sizes: Vec<u32>,
    #[serde(default)]
    seeds: Vec<u64>,
}

/// Whether a config text carries a `[sweep]` table.
pub fn is_sweep(text: &str) -> bool {
    text.parse::<toml::Table>().is_ok_and(|t| t.contains_key("sweep"))
}

/// One parameter varied over `values`, crossed with fleet sizes and seeds.
/// Empty `fleet_sizes` / `seeds` mean the base config's.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub name: String,
    pub base: RunConfig,
    pub axis: String,
    pub values: Vec<Value>,
    pub fleet_sizes: Vec<u32>,
    pub seeds: Vec<u64>,
}

/// One cell of the cartesian product.
#[derive(Debug, Clone, PartialEq)]
struct Cell {
    value: Value,
    fleet: Option<u32>,
    seed: u64,
}

impl SweepSpec {
    /// Parses a run config with an extra `[sweep]` table.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let axes = table.remove("sweep").ok_or_else(|| Error::Config("missing [sweep] table".into()))?;
        let axes: SweepAxes =
            axes.try_into().map_err(|e: toml::de::Error| Error::Config(format!("[sweep]: {}", e.message())))?;
        let base: RunConfig =
            Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        let spec = Self {
            name: axes.name,
            base,
            axis: axes.axis,
            values: axes.values,
            fleet_sizes: axes.fleet_sizes,
            seeds: axes.seeds,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        let axes = SweepAxes {
            name: self.name.clone(),
            axis: self.axis.clone(),
            values: self.values.clone(),
            fleet_sizes: self.fleet_sizes.clone(),
            seeds: self.seeds.clone(),
        };
        let mut table = Value::try_from(&self.base).expect("run config serializes");
        table.as_table_mut().expect("table").insert("sweep".into(), Value::try_from(axes).expect("axes serialize"));
        toml::to_string(&table).expect("sweep serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = Self::from_toml(&text)?;
        spec.base.resolve_paths(path.parent().unwrap_or(Path::new("")));
        spec.base.apply_env()?;
        Ok(spec)
    }

    /// Checks that the axis names a real parameter and every value applies.
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config(format!("sweep over `{}` has no values", self.axis)));
        }
        if self.axis == "fleet_size" && !self.fleet_sizes.is_empty() {
            return Err(Error::Config("axis fleet_size conflicts with fleet_sizes".into()));
        }
        for v in &self.values {
            let mut c = self.base.sim.clone();
            set_param(&mut c, &self.axis, v)?;
        }
        Ok(())
    }

    fn cells(&self) -> Vec<Cell> {
        let fleets: Vec<Option<u32>> =
            if self.fleet_sizes.is_empty() { vec![None] } else { self.fleet_sizes.iter().map(|&f| Some(f)).collect() };
        let seeds = if self.seeds.is_empty() { vec![self.base.seed] } else { self.seeds.clone() };
        let mut out = Vec::new();
        for v in &self.values {
            for &fleet in &fleets {
                for &seed in &seeds {
                    out.push(Cell { value: v.clone(), fleet, seed });
                }
            }
        }
        out
    }

    /// Number of runs in the cartesian product.
    pub fn len(&self) -> usize {
        self.values.len() * self.fleet_sizes.len().max(1) * self.seeds.len().max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn config_for(&self, index: usize, cell: &Cell) -> Result<RunConfig> {
        let mut cfg = self.base.clone();
        set_param(&mut cfg.sim, &self.axis, &cell.value)?;
        if let Some(f) = cell.fleet {
            cfg.sim.fleet_size = f;
        }
        cfg.seed = cell.seed;
        let dir = format!("{index:05}_{}_f{}_s{}", sanitize(&label(&cell.value)), cfg.sim.fleet_size, cell.seed);
        cfg.out = self.base.out.join("runs").join(dir);
        Ok(cfg)
    }
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: String,
    pub fleet_size: u32,
    pub seed: u64,
    pub report: KpiReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepFailure {
    pub value: String,
    pub fleet_size: u32,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub axis: String,
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
}

pub const MATRIX_FILE: &str = "matrix.csv";
pub const FAILURES_FILE: &str = "failures.csv";

impl SweepResult {
    /// One line per successful run: axis value, fleet, seed, then every KPI.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let Some(first) = self.rows.first() else {
            return format!("{},fleet_size,seed\n", self.axis);
        };
        let names: Vec<String> = first.report.fields().into_iter().map(|(k, _)| k).collect();
        let _ = writeln!(s, "{},fleet_size,seed,{}", self.axis, names.join(","));
        for r in &self.rows {
            let vals: Vec<String> = r.report.fields().into_iter().map(|(_, v)| v).collect();
            let _ = writeln!(s, "{},{},{},{}", r.value, r.fleet_size, r.seed, vals.join(","));
        }
        s
    }

    pub fn failures_csv(&self) -> String {
        let mut s = format!("{},fleet_size,seed,error\n", self.axis);
        for f in &self.failures {
            let _ = writeln!(s, "{},{},{},\"{}\"", f.value, f.fleet_size, f.seed, f.error.replace('"', "'"));
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [(MATRIX_FILE, self.to_csv()), (FAILURES_FILE, self.failures_csv())] {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

/// Runs every combination of the sweep on `threads` workers (0 = all
/// cores). Each run is single-threaded and independent, so results do not
/// depend on the worker count. With `output.write_log` set, every run also
/// writes its own artifacts under `<out>/runs/`. A failing run is recorded
/// and the sweep continues.
pub fn sweep(spec: &SweepSpec, inputs: &Inputs, threads: usize) -> Result<SweepResult> {
    spec.validate()?;
    let cells = spec.cells();
    log::info!("sweep `{}` over {}: {} runs", spec.name, spec.axis, cells.len());
    let indexed: Vec<(usize, Cell)> = cells.into_iter().enumerate().collect();
    let results = crate::par::map_with_threads(&indexed, threads, |(i, cell)| {
        let res = spec.config_for(*i, cell).and_then(|cfg| {
            let report =
                if cfg.output.write_log { run_with(inputs, &cfg)?.report } else { inputs.simulate(&cfg, None)?.report };
            Ok((cfg.sim.fleet_size, report))
        });
        (cell.clone(), res)
    });
    let mut out = SweepResult { axis: spec.axis.clone(), rows: Vec::new(), failures: Vec::new() };
    for (cell, res) in results {
        let fleet_size = cell.fleet.unwrap_or(spec.base.sim.fleet_size);
        match res {
            Ok((fleet_size, report)) => {
                out.rows.push(SweepRow { value: label(&cell.value), fleet_size, seed: cell.seed, report })
            }
            Err(e) => {
                log::warn!(
                    "run {}={} fleet {fleet_size} seed {} failed: {e}",
                    spec.axis,
                    label(&cell.value),
                    cell.seed
                );
                out.failures.push(SweepFailure {
                    value: label(&cell.value),
                    fleet_size,
                    seed: cell.seed,
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

/// Result of the fleet-size search for one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct LosOutcome {
    pub variant: String,
    /// Smallest fleet found meeting the target; `None` if even the upper
    /// bound falls short.
    pub fleet_size: Option<u32>,
    /// Mean served percentage at that fleet.
    pub served_pct: Option<f64>,
    /// Every `(fleet, mean served %)` evaluated, in order.
    pub evaluations: Vec<(u32, f64)>,
}

/// Bisection over fleet size for the smallest fleet whose seed-averaged
/// served share reaches `spec.target_pct`, assuming served share grows with
/// the fleet. Station fleets are capped by the free-dock rule.
pub fn level_of_service(spec: &super::LosSpec, inputs: &Inputs, threads: usize) -> Result<Vec<LosOutcome>> {
    let seeds = if spec.seeds.is_empty() { vec![spec.base.seed] } else { spec.seeds.clone() };
    let mut outcomes = Vec::new();
    for variant in &spec.variants {
        let mut base = spec.base.clone();
        set_param(&mut base.sim, "variant", &Value::String(variant.clone()))?;
        let mut hi = spec.max_fleet;
        if base.sim.mode == Mode::Station {
            let cap: u64 = inputs.base.stations.iter().map(|s| s.capacity as u64).sum();
            let limit = cap.saturating_sub(base.sim.min_bikes_docks.max(1) as u64);
            hi = hi.min(limit.min(u32::MAX as u64) as u32);
        }
        let mut lo = spec.min_fleet.min(hi);
        let mut evaluations = Vec::new();
        let mut eval = |fleet: u32| -> Result<f64> {
            let cfgs: Vec<RunConfig> = seeds
                .iter()
                .map(|&seed| RunConfig {
                    seed,
                    sim: ModeConfig { fleet_size: fleet, ..base.sim.clone() },
                    ..base.clone()
                })
                .collect();
            let served = crate::par::map_with_threads(&cfgs, threads, |c| {
                inputs.simulate(c, None).map(|o| o.report.served_pct.unwrap_or(100.0))
            });
            let served = served.into_iter().collect::<Result<Vec<f64>>>()?;
            let mean = served.iter().sum::<f64>() / served.len() as f64;
            log::info!("level of service: {variant} fleet {fleet} -> {mean:.3}% served");
            evaluations.push((fleet, mean));
            Ok(mean)
        };
        let at_hi = eval(hi)?;
        let found = if at_hi < spec.target_pct {
            None
        } else {
            let mut best = (hi, at_hi);
            let at_lo = eval(lo)?;
            if at_lo >= spec.target_pct {
                best = (lo, at_lo);
            } else {
                while hi - lo > spec.resolution.max(1) {
                    let mid = lo + (hi - lo) / 2;
                    let m = eval(mid)?;
                    if m >= spec.target_pct {
                        hi = mid;
                        best = (mid, m);
                    } else {
                        lo = mid;
                    }
                }
            }
            Some(best)
        };
        outcomes.push(LosOutcome {
            variant: variant.clone(),
            fleet_size: found.map(|b| b.0),
            served_pct: found.map(|b| b.1),
            evaluations,
        });
    }
    Ok(outcomes)
}
