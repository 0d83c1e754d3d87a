//! `bikesim`: prepare inputs, run single simulations, sweeps and presets,
//! and recompute reports from event logs.
//!
//! Exit status: 0 on success, 1 for configuration errors, 2 for runtime
//! errors.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bikesim::demandio::{parse_time, StationColumns, SyntheticSpec, TripColumns};
use bikesim::geo::HighwayFilter;
use bikesim::metrics::{compute_kpis, timeline};
use bikesim::runner::{
    is_sweep, level_of_service, prepare_bluebikes, prepare_synthetic, preset, run_with, sweep, BluebikesSource,
    DataConfig, Inputs, LosOutcome, LosSpec, Preset, RunConfig, SweepSpec, WindowConfig, CONFIG_FILE, PRESETS,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bikesim", version, about = "Discrete-event simulator for shared bicycle fleets")]
struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build canonical network, station and request files.
    Prepare(PrepareArgs),
    /// Run one simulation.
    Run(RunArgs),
    /// Run a parameter sweep (or a level-of-service search).
    Sweep(SweepArgs),
    /// Print a preset configuration.
    Preset(PresetArgs),
    /// Recompute KPIs from an event log.
    Report(ReportArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Generate a synthetic city instead of reading raw data.
    #[arg(long)]
    synthetic: bool,
    /// OSM extract (.osm / .pbf) or canonical network file.
    #[arg(long, required_unless_present = "synthetic")]
    network: Option<PathBuf>,
    /// Clip box `west,south,east,north`; defaults to the stations plus a margin.
    #[arg(long)]
    bbox: Option<String>,
    /// Bluebikes station list.
    #[arg(long, required_unless_present = "synthetic")]
    stations: Option<PathBuf>,
    /// Bluebikes monthly trip exports (repeatable).
    #[arg(long = "trips", required_unless_present = "synthetic")]
    trips: Vec<PathBuf>,
    #[arg(long, default_value = "2019-10-07 00:00:00")]
    start: String,
    #[arg(long, default_value = "2019-10-14 00:00:00")]
    end: String,
    /// Weeks of trips kept before the window for the demand baseline.
    #[arg(long, default_value_t = 4)]
    history_weeks: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 300.0)]
    scatter_radius_m: f64,
    /// Keep only these `highway` values (comma-separated); default all
    #[arg(long, value_delimiter = ',')]
    highway_allow: Vec<String>,
    /// Drop these `highway` values [default: motorway,motorway_link]
    #[arg(long, value_delimiter = ',')]
    highway_deny: Option<Vec<String>>,
    /// Synthetic city: intersections per side.
    #[arg(long, default_value_t = 36)]
    grid: usize,
    /// Synthetic city: number of stations.
    #[arg(long, default_value_t = 60)]
    station_count: usize,
    /// Synthetic city: mean trips per day.
    #[arg(long, default_value_t = 1200.0)]
    trips_per_day: f64,
    /// Synthetic city: simulated days.
    #[arg(long, default_value_t = 7)]
    days: u32,
}

/// Where a run's configuration comes from, plus overrides.
#[derive(Args)]
struct Source {
    /// Config file.
    config: Option<PathBuf>,
    /// Named preset (see `bikesim preset --list`).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Prepared data directory; its config.toml supplies [data] and [window].
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    src: Source,
    #[arg(long)]
    fleet: Option<u32>,
    /// Print the key-value KPI file instead of the table.
    #[arg(long)]
    kv: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    src: Source,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Report the number of runs and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct PresetArgs {
    name: Option<String>,
    #[arg(long)]
    list: bool,
    /// Write to this file (or directory, for preset groups) instead of stdout.
    #[arg(long)]
    write: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    log: PathBuf,
    #[arg(long)]
    kv: bool,
    /// Also write a timeline CSV with this bin width in seconds.
    #[arg(long, requires = "timeline_out")]
    timeline_bin_s: Option<u64>,
    #[arg(long)]
    timeline_out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log_level))
        .format_timestamp(None)
        .init();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let config = e.chain().any(|c| {
        matches!(
            c.downcast_ref::<bikesim::Error>(),
            Some(
                bikesim::Error::Config(_)
                    | bikesim::Error::UnknownPreset { .. }
                    | bikesim::Error::InvalidBbox(_)
                    | bikesim::Error::InvalidLocation { .. }
                    | bikesim::Error::NonPositiveSpeed(_)
            )
        ) || c.downcast_ref::<ConfigError>().is_some()
    });
    if config {
        1
    } else {
        2
    }
}

#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Prepare(a) => cmd_prepare(a),
        Cmd::Run(a) => cmd_run(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Preset(a) => cmd_preset(a),
        Cmd::Report(a) => cmd_report(a),
    }
}

fn cmd_prepare(a: PrepareArgs) -> Result<()> {
    let p = if a.synthetic {
        let spec = SyntheticSpec {
            seed: a.seed,
            grid: a.grid,
            stations: a.station_count,
            trips_per_day: a.trips_per_day,
            days: a.days,
            history_weeks: a.history_weeks,
            ..Default::default()
        };
        prepare_synthetic(&spec, a.scatter_radius_m, &a.out)?
    } else {
        let time = |s: &str| parse_time(s).ok_or_else(|| config_err(format!("bad time `{s}`")));
        let src = BluebikesSource {
            network: a.network.expect("required by clap"),
            bbox: a.bbox,
            highways: HighwayFilter {
                allow: (!a.highway_allow.is_empty()).then_some(a.highway_allow),
                deny: a.highway_deny.unwrap_or_else(|| HighwayFilter::default().deny),
            },
            stations: a.stations.expect("required by clap"),
            station_columns: StationColumns::default(),
            trips: a.trips,
            trip_columns: TripColumns::default(),
            window: (time(&a.start)?, time(&a.end)?),
            history_weeks: a.history_weeks,
            seed: a.seed,
            scatter_radius_m: a.scatter_radius_m,
        };
        prepare_bluebikes(&src, &a.out)?
    };
    println!(
        "prepared {}: {} nodes, {} stations, {} requests ({} in the window)\nconfig: {}",
        p.dir.display(),
        p.nodes,
        p.stations,
        p.requests,
        p.window_requests,
        p.config.display()
    );
    Ok(())
}

/// Copies [data] and [window] from a prepared directory's config.
fn apply_data_dir(cfg: &mut RunConfig, dir: &Path) -> Result<()> {
    let prepared = RunConfig::load(&dir.join(CONFIG_FILE))
        .map_err(|e| config_err(format!("prepared data in {}: {e}", dir.display())))?;
    cfg.data = prepared.data;
    cfg.window = prepared.window;
    Ok(())
}

fn apply_overrides(cfg: &mut RunConfig, src: &Source) -> Result<()> {
    if let Some(d) = &src.data {
        apply_data_dir(cfg, d)?;
    }
    if let Some(s) = src.seed {
        cfg.seed = s;
    }
    if let Some(o) = &src.out {
        cfg.out = o.clone();
    }
    Ok(())
}

fn resolve(src: &Source) -> Result<Preset> {
    let p = match (&src.config, &src.preset) {
        (Some(path), None) => {
            let text = fs::read_to_string(path).map_err(|e| config_err(format!("reading {}: {e}", path.display())))?;
            let base = path.parent().unwrap_or(Path::new(""));
            if is_sweep(&text) {
                Preset::Sweep(SweepSpec::load(path)?)
            } else {
                let mut c = RunConfig::from_toml(&text)?;
                c.resolve_paths(base);
                c.apply_env()?;
                Preset::Run(c)
            }
        }
        (None, Some(name)) => {
            let mut p = preset(name)?;
            // Presets carry relative defaults; the environment still applies.
            match &mut p {
                Preset::Run(c) => c.apply_env()?,
                Preset::Sweep(s) => s.base.apply_env()?,
                Preset::Sweeps(v) => v.iter_mut().try_for_each(|s| s.base.apply_env())?,
                Preset::LevelOfService(l) => l.base.apply_env()?,
            }
            p
        }
        _ => return Err(config_err("give a config file or --preset")),
    };
    Ok(p)
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let Preset::Run(mut cfg) = resolve(&a.src)? else {
        bail!(config_err("this configuration is a sweep; use `bikesim sweep`"));
    };
    apply_overrides(&mut cfg, &a.src)?;
    if let Some(f) = a.fleet {
        cfg.sim.fleet_size = f;
    }
    cfg.validate()?;
    let inputs = Inputs::load(&cfg.data, &cfg.window)?;
    let out = run_with(&inputs, &cfg)?;
    print!("{}", if a.kv { out.report.to_kv() } else { out.report.to_table() });
    log::info!("{} events; artifacts in {}", out.events, cfg.out.display());
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    match resolve(&a.src)? {
        Preset::Run(_) => {
            Err(config_err("this configuration is a single run; add a [sweep] table or use `bikesim run`"))
        }
        Preset::Sweep(mut s) => {
            apply_overrides(&mut s.base, &a.src)?;
            run_sweeps(vec![s], false, a.threads, a.dry_run)
        }
        Preset::Sweeps(mut v) => {
            for s in &mut v {
                let out = s.base.out.clone();
                apply_overrides(&mut s.base, &a.src)?;
                if let Some(root) = &a.src.out {
                    s.base.out = root.join(out.file_name().unwrap_or_default());
                }
            }
            run_sweeps(v, true, a.threads, a.dry_run)
        }
        Preset::LevelOfService(mut l) => {
            apply_overrides(&mut l.base, &a.src)?;
            run_los(&l, a.threads, a.dry_run)
        }
    }
}

fn run_sweeps(specs: Vec<SweepSpec>, group: bool, threads: usize, dry_run: bool) -> Result<()> {
    let total: usize = specs.iter().map(SweepSpec::len).sum();
    for s in &specs {
        s.validate()?;
        println!(
            "{}: {} = {} values x {} fleets x {} seeds = {} runs",
            s.name,
            s.axis,
            s.values.len(),
            s.fleet_sizes.len().max(1),
            s.seeds.len().max(1),
            s.len()
        );
    }
    if group {
        println!("total: {total} runs");
    }
    if dry_run {
        return Ok(());
    }
    // Specs sharing data load it once.
    let mut cache: Vec<((DataConfig, WindowConfig), Inputs)> = Vec::new();
    for s in &specs {
        s.base.validate()?;
        let key = (s.base.data.clone(), s.base.window.clone());
        let idx = match cache.iter().position(|(k, _)| *k == key) {
            Some(i) => i,
            None => {
                cache.push((key, Inputs::load(&s.base.data, &s.base.window)?));
                cache.len() - 1
            }
        };
        let res = sweep(s, &cache[idx].1, threads)?;
        res.write(&s.base.out)?;
        println!("{}: {} rows, {} failures -> {}", s.name, res.rows.len(), res.failures.len(), s.base.out.display());
    }
    Ok(())
}

fn run_los(l: &LosSpec, threads: usize, dry_run: bool) -> Result<()> {
    println!(
        "level of service {}%: variants {}, fleets {}..={}, seeds {:?}",
        l.target_pct,
        l.variants.join(", "),
        l.min_fleet,
        l.max_fleet,
        l.seeds
    );
    if dry_run {
        return Ok(());
    }
    l.base.validate()?;
    let inputs = Inputs::load(&l.base.data, &l.base.window)?;
    let outcomes = level_of_service(l, &inputs, threads)?;
    let csv = los_csv(&outcomes);
    fs::create_dir_all(&l.base.out)?;
    let path = l.base.out.join("level_of_service.csv");
    fs::write(&path, &csv).with_context(|| format!("writing {}", path.display()))?;
    print!("{csv}");
    Ok(())
}

fn los_csv(outcomes: &[LosOutcome]) -> String {
    let mut s = String::from("variant,fleet_size,served_pct,evaluations\n");
    for o in outcomes {
        let evals: Vec<String> = o.evaluations.iter().map(|(f, p)| format!("{f}:{p:.3}")).collect();
        s.push_str(&format!(
            "{},{},{},{}\n",
            o.variant,
            o.fleet_size.map_or("-".into(), |f| f.to_string()),
            o.served_pct.map_or("-".into(), |p| format!("{p:.4}")),
            evals.join(" ")
        ));
    }
    s
}

fn cmd_preset(a: PresetArgs) -> Result<()> {
    let name = match (a.list, a.name) {
        (true, _) | (false, None) => {
            for p in PRESETS {
                println!("{p}");
            }
            return Ok(());
        }
        (false, Some(n)) => n,
    };
    let emit = |path: Option<&Path>, text: String| -> Result<()> {
        match path {
            Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    };
    match preset(&name)? {
        Preset::Run(c) => emit(a.write.as_deref(), c.to_toml()),
        Preset::Sweep(s) => emit(a.write.as_deref(), s.to_toml()),
        Preset::Sweeps(v) => match &a.write {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                for s in &v {
                    emit(Some(&dir.join(format!("{}.toml", s.name))), s.to_toml())?;
                }
                println!("wrote {} sweep files to {}", v.len(), dir.display());
                Ok(())
            }
            None => {
                for s in &v {
                    println!("{}: {} x {} fleets ({} runs)", s.name, s.axis, s.fleet_sizes.len(), s.len());
                }
                println!("total: {} runs", v.iter().map(SweepSpec::len).sum::<usize>());
                Ok(())
            }
        },
        Preset::LevelOfService(l) => {
            let text = format!(
                "# level-of-service search: smallest fleet with mean served >= {}% over seeds {:?}\n# variants: {}\n# fleets {}..={}, resolution {}\n{}",
                l.target_pct,
                l.seeds,
                l.variants.join(", "),
                l.min_fleet,
                l.max_fleet,
                l.resolution,
                l.base.to_toml()
            );
            emit(a.write.as_deref(), text)
        }
    }
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let open = || -> Result<BufReader<fs::File>> {
        Ok(BufReader::new(fs::File::open(&a.log).with_context(|| format!("opening {}", a.log.display()))?))
    };
    let report = compute_kpis(open()?)?;
    print!("{}", if a.kv { report.to_kv() } else { report.to_table() });
    if let (Some(bin), Some(out)) = (a.timeline_bin_s, &a.timeline_out) {
        if bin == 0 {
            return Err(config_err("timeline bin must be > 0"));
        }
        let t = timeline(open()?, bin * 1000)?;
        fs::write(out, t.to_csv()).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}
