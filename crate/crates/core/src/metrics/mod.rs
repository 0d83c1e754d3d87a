//! Append-only event log and the KPIs derived from it.
//!
//! Log format, one record per line, fields separated by single spaces:
//!
//! ```text
//! # bikesim-log v1
//! # mode autonomous
//! # fleet 1000
//! # seed 1
//! # config 3f2a...
//! # window <t0_ms> <t1_ms>
//! # station <index> <capacity> <docked>
//! <time_ms> <seq> <KIND> <agent> [key=value ...]
//! ...
//! <time_ms> <seq> RUN_END 0
//! ```
//!
//! Kinds: `REQUEST`, `SERVED`, `UNSERVED`, `STATE`, `MOVE`, `OCC`,
//! `REBALANCED`, `PLUGGED`, `CHARGED`, `STRANDED`, `RETRY_CAP`, `TICK`,
//! `RUN_END`. Durations are milliseconds, distances millimeters, and state
//! of charge is printed in shortest round-trip form so a parsed log
//! reproduces the online values bit for bit.

mod kpi;
mod timeline;

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use kpi::{BikeTotals, KpiBuilder, KpiReport};
pub use timeline::{Timeline, TimelineBuilder, TimelineRow};

use crate::error::{Error, Result};

/// Service concept of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Station,
    Dockless,
    Autonomous,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Station => "station",
            Mode::Dockless => "dockless",
            Mode::Autonomous => "autonomous",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "station" | "sb" => Ok(Mode::Station),
            "dockless" | "dl" => Ok(Mode::Dockless),
            "autonomous" | "au" => Ok(Mode::Autonomous),
            _ => Err(Error::Config(format!("unknown mode `{s}` (station, dockless, autonomous)"))),
        }
    }
}

macro_rules! tag_enum {
    ($(#[$m:meta])* $name:ident { $($var:ident = $s:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name { $($var),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$var),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$var => $s),+ }
            }

            pub fn index(self) -> usize {
                self as usize
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($name::$var),)+
                    _ => Err(Error::Log(format!("unknown {} `{s}`", stringify!($name)))),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

tag_enum!(
    /// Why a request was abandoned.
    UnservedReason {
        NoWalkableStations = "no_walkable_stations",
        NoBikes = "no_bikes",
        NoAssignableBike = "no_assignable_bike",
        RetryCap = "retry_cap",
    }
);

tag_enum!(
    /// Odometer class of a movement.
    OdoClass { InUse = "in_use", Pickup = "pickup", Rebalancing = "rebalancing", Charge = "charge" }
);

tag_enum!(
    /// What a bike is doing; time splits integrate these.
    Activity {
        Idle = "idle",
        Pickup = "pickup",
        InUse = "in_use",
        Rebalancing = "rebalancing",
        ToCharger = "to_charger",
        Charging = "charging",
        Stranded = "stranded",
    }
);

#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Request { user: u32 },
    Served { user: u32, bike: u32, walk_origin_ms: u64, wait_ms: u64, ride_ms: u64, walk_dest_ms: u64 },
    Unserved { user: u32, reason: UnservedReason },
    State { bike: u32, activity: Activity },
    Move { bike: u32, class: OdoClass, mm: u64, soc: Option<f64> },
    Occupancy { station: u32, docked: u32 },
    Rebalanced { bike: u32, from: u32, to: u32 },
    Plugged { bike: u32, station: u32, soc: f64 },
    Charged { bike: u32 },
    Stranded { bike: u32 },
    RetryCap { user: u32 },
    Tick { moves: u32 },
    RunEnd,
}

fn soc_str(soc: Option<f64>) -> String {
    soc.map_or_else(|| "-".to_string(), |s| format!("{s}"))
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Record::Request { user } => write!(f, "REQUEST {user}"),
            Record::Served { user, bike, walk_origin_ms, wait_ms, ride_ms, walk_dest_ms } => write!(
                f,
                "SERVED {user} bike={bike} walk_origin={walk_origin_ms} wait={wait_ms} ride={ride_ms} walk_dest={walk_dest_ms}"
            ),
            Record::Unserved { user, reason } => write!(f, "UNSERVED {user} reason={reason}"),
            Record::State { bike, activity } => write!(f, "STATE {bike} activity={activity}"),
            Record::Move { bike, class, mm, soc } => write!(f, "MOVE {bike} class={class} mm={mm} soc={}", soc_str(*soc)),
            Record::Occupancy { station, docked } => write!(f, "OCC {station} docked={docked}"),
            Record::Rebalanced { bike, from, to } => write!(f, "REBALANCED {bike} from={from} to={to}"),
            Record::Plugged { bike, station, soc } => write!(f, "PLUGGED {bike} station={station} soc={}", soc_str(Some(*soc))),
            Record::Charged { bike } => write!(f, "CHARGED {bike}"),
            Record::Stranded { bike } => write!(f, "STRANDED {bike}"),
            Record::RetryCap { user } => write!(f, "RETRY_CAP {user}"),
            Record::Tick { moves } => write!(f, "TICK 0 moves={moves}"),
            Record::RunEnd => write!(f, "RUN_END 0"),
        }
    }
}

fn parse_record(kind: &str, agent: u32, kv: &HashMap<&str, &str>) -> Result<Record> {
    let get = |k: &str| kv.get(k).copied().ok_or_else(|| Error::Log(format!("{kind}: missing `{k}`")));
    let num = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| Error::Log(format!("{kind}: bad `{k}`"))) };
    let id = |k: &str| -> Result<u32> { get(k)?.parse().map_err(|_| Error::Log(format!("{kind}: bad `{k}`"))) };
    let soc = |k: &str| -> Result<Option<f64>> {
        match get(k)? {
            "-" => Ok(None),
            s => s.parse().map(Some).map_err(|_| Error::Log(format!("{kind}: bad `{k}`"))),
        }
    };
    Ok(match kind {
        "REQUEST" => Record::Request { user: agent },
        "SERVED" => Record::Served {
            user: agent,
            bike: id("bike")?,
            walk_origin_ms: num("walk_origin")?,
            wait_ms: num("wait")?,
            ride_ms: num("ride")?,
            walk_dest_ms: num("walk_dest")?,
        },
        "UNSERVED" => Record::Unserved { user: agent, reason: get("reason")?.parse()? },
        "STATE" => Record::State { bike: agent, activity: get("activity")?.parse()? },
        "MOVE" => Record::Move { bike: agent, class: get("class")?.parse()?, mm: num("mm")?, soc: soc("soc")? },
        "OCC" => Record::Occupancy { station: agent, docked: id("docked")? },
        "REBALANCED" => Record::Rebalanced { bike: agent, from: id("from")?, to: id("to")? },
        "PLUGGED" => Record::Plugged {
            bike: agent,
            station: id("station")?,
            soc: soc("soc")?.ok_or_else(|| Error::Log("PLUGGED: soc required".into()))?,
        },
        "CHARGED" => Record::Charged { bike: agent },
        "STRANDED" => Record::Stranded { bike: agent },
        "RETRY_CAP" => Record::RetryCap { user: agent },
        "TICK" => Record::Tick { moves: id("moves")? },
        "RUN_END" => Record::RunEnd,
        other => return Err(Error::Log(format!("unknown record kind `{other}`"))),
    })
}

/// Run-level metadata written as the log header.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunMeta {
    pub mode: Mode,
    pub fleet: u32,
    pub seed: u64,
    pub config_hash: String,
    pub t0_ms: u64,
    pub t1_ms: u64,
    /// `(capacity, initially docked)` per station; empty outside station mode.
    pub stations: Vec<(u32, u32)>,
}

impl RunMeta {
    pub fn days(&self) -> f64 {
        (self.t1_ms - self.t0_ms) as f64 / 86_400_000.0
    }

    fn header(&self) -> String {
        let mut s = format!(
            "# bikesim-log v1\n# mode {}\n# fleet {}\n# seed {}\n# config {}\n# window {} {}\n",
            self.mode.as_str(),
            self.fleet,
            self.seed,
            self.config_hash,
            self.t0_ms,
            self.t1_ms
        );
        for (i, (cap, docked)) in self.stations.iter().enumerate() {
            s.push_str(&format!("# station {i} {cap} {docked}\n"));
        }
        s
    }

    fn apply_header_line(&mut self, line: &str) -> Result<()> {
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Log(format!("bad header line `{line}`"));
        let n = |i: usize| -> Result<u64> { f.get(i).ok_or_else(bad)?.parse().map_err(|_| bad()) };
        match f.first().copied() {
            Some("mode") => self.mode = f.get(1).ok_or_else(bad)?.parse()?,
            Some("fleet") => self.fleet = n(1)? as u32,
            Some("seed") => self.seed = n(1)?,
            Some("config") => self.config_hash = f.get(1).unwrap_or(&"").to_string(),
            Some("window") => {
                self.t0_ms = n(1)?;
                self.t1_ms = n(2)?;
            }
            Some("station") => {
                if n(1)? as usize != self.stations.len() {
                    return Err(bad());
                }
                self.stations.push((n(2)? as u32, n(3)? as u32));
            }
            _ => {}
        }
        Ok(())
    }
}

/// One parsed log line.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub time_ms: u64,
    pub seq: u64,
    pub record: Record,
}

/// Consumers of the record stream.
pub trait RecordSink {
    fn accept(&mut self, e: &Entry);
}

/// Append-only log: writes each record and feeds the online KPI builder.
pub struct EventLog {
    out: Box<dyn Write + Send>,
    seq: u64,
    last_ms: u64,
    kpi: KpiBuilder,
    timeline: Option<TimelineBuilder>,
    ended: bool,
}

impl EventLog {
    pub fn new(meta: RunMeta, mut out: Box<dyn Write + Send>, timeline_bin_ms: Option<u64>) -> Result<Self> {
        out.write_all(meta.header().as_bytes()).map_err(|e| Error::Log(e.to_string()))?;
        let last_ms = meta.t0_ms;
        let timeline = timeline_bin_ms.map(|b| TimelineBuilder::new(&meta, b));
        Ok(Self { out, seq: 0, last_ms, kpi: KpiBuilder::new(meta), timeline, ended: false })
    }

    /// Appends a record; times must never decrease.
    pub fn record(&mut self, time_ms: u64, record: Record) -> Result<()> {
        if time_ms < self.last_ms {
            return Err(Error::Log(format!("out-of-order record at {time_ms} ms after {} ms: {record}", self.last_ms)));
        }
        if self.ended {
            return Err(Error::Log("record after RUN_END".into()));
        }
        writeln!(self.out, "{time_ms} {} {record}", self.seq).map_err(|e| Error::Log(e.to_string()))?;
        self.ended = record == Record::RunEnd;
        let e = Entry { time_ms, seq: self.seq, record };
        self.kpi.accept(&e);
        if let Some(t) = &mut self.timeline {
            t.accept(&e);
        }
        self.seq += 1;
        self.last_ms = time_ms;
        Ok(())
    }

    pub fn len(&self) -> u64 {
        self.seq
    }

    pub fn is_empty(&self) -> bool {
        self.seq == 0
    }

    pub fn kpis(&self) -> &KpiBuilder {
        &self.kpi
    }

    /// Writes `RUN_END` at `end_ms`, flushes, and returns the report and timeline.
    pub fn finish(mut self, end_ms: u64) -> Result<(KpiReport, Option<Timeline>)> {
        self.record(end_ms, Record::RunEnd)?;
        self.out.flush().map_err(|e| Error::Log(e.to_string()))?;
        let report = self.kpi.report()?;
        let timeline = self.timeline.map(|t| t.finish());
        Ok((report, timeline))
    }
}

/// Streams a persisted log: header first, then every entry to `sink`.
pub fn read_log(reader: impl BufRead, mut sink: impl FnMut(&RunMeta, &Entry)) -> Result<RunMeta> {
    let mut meta = RunMeta::default();
    let mut header_done = false;
    let mut last: Option<(u64, u64)> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Log(e.to_string()))?;
        if let Some(h) = line.strip_prefix('#') {
            if header_done {
                return Err(Error::Log(format!("line {}: header after records", i + 1)));
            }
            meta.apply_header_line(h.trim())?;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        header_done = true;
        let mut it = line.split(' ');
        let bad = |what: &str| Error::Log(format!("line {}: bad {what}", i + 1));
        let time_ms: u64 = it.next().and_then(|x| x.parse().ok()).ok_or_else(|| bad("time"))?;
        let seq: u64 = it.next().and_then(|x| x.parse().ok()).ok_or_else(|| bad("seq"))?;
        let kind = it.next().ok_or_else(|| bad("kind"))?;
        let agent: u32 = it.next().and_then(|x| x.parse().ok()).ok_or_else(|| bad("agent"))?;
        let kv: HashMap<&str, &str> = it.filter_map(|p| p.split_once('=')).collect();
        if last.is_some_and(|l| (time_ms, seq) <= l) {
            return Err(bad("ordering"));
        }
        last = Some((time_ms, seq));
        let record = parse_record(kind, agent, &kv)?;
        sink(&meta, &Entry { time_ms, seq, record });
    }
    Ok(meta)
}

/// Recomputes the KPI report from a persisted log.
pub fn compute_kpis(reader: impl BufRead) -> Result<KpiReport> {
    let mut builder: Option<KpiBuilder> = None;
    read_log(reader, |meta, e| builder.get_or_insert_with(|| KpiBuilder::new(meta.clone())).accept(e))?;
    builder.ok_or(Error::TruncatedLog)?.report()
}

/// Recomputes the activity timeline from a persisted log.
pub fn timeline(reader: impl BufRead, bin_ms: u64) -> Result<Timeline> {
    if bin_ms == 0 {
        return Err(Error::Config("timeline bin must be positive".into()));
    }
    let mut builder: Option<TimelineBuilder> = None;
    let mut ended = false;
    read_log(reader, |meta, e| {
        ended |= e.record == Record::RunEnd;
        builder.get_or_insert_with(|| TimelineBuilder::new(meta, bin_ms)).accept(e)
    })?;
    if !ended {
        return Err(Error::TruncatedLog);
    }
    Ok(builder.ok_or(Error::TruncatedLog)?.finish())
}

/// A `Write` handle onto a shared in-memory buffer.
#[derive(Debug, Clone, Default)]
pub struct SharedBuffer(pub std::sync::Arc<std::sync::Mutex<Vec<u8>>>);

impl SharedBuffer {
    pub fn bytes(&self) -> Vec<u8> {
        self.0.lock().expect("buffer lock").clone()
    }
}

impl Write for SharedBuffer {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().expect("buffer lock").extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}
