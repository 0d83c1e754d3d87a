use std::f64::consts::TAU;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::NaiveDateTime;
use rand::Rng;

use super::TripRecord;
use crate::engine::substream;
use crate::error::{Error, Result};
use crate::geo::Location;

const HEADER: &str = "# bikesim-requests v1";
const EPOCH_FMT: &str = "%Y-%m-%dT%H:%M:%S";
const STREAM_ORIGIN: u64 = 0x6f72;
const STREAM_DEST: u64 = 0x6473;

/// A trip request as replayed by the simulator. `t_ms` counts from the
/// request file's epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Request {
    pub id: u32,
    pub t_ms: u64,
    pub origin: Location,
    pub destination: Location,
}

/// Requests plus the wall-clock instant their times are relative to.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestFile {
    pub epoch: NaiveDateTime,
    pub requests: Vec<Request>,
}

impl RequestFile {
    /// Milliseconds from the epoch to `t` (negative if before).
    pub fn offset_ms(&self, t: NaiveDateTime) -> i64 {
        (t - self.epoch).num_milliseconds()
    }
}

/// Uniform draw over the disk of `radius_m` around `center`.
fn scatter(center: &Location, radius_m: f64, rng: &mut impl Rng) -> Location {
    if radius_m <= 0.0 {
        return *center;
    }
    let r = radius_m * rng.gen::<f64>().sqrt();
    let bearing = rng.gen::<f64>() * TAU;
    center.destination(bearing, r)
}

/// Turns trips into requests: ids follow trip order, times count from
/// `epoch`, and origin/destination are displaced uniformly over a disk of
/// `radius_m` around their stations. Each trip draws from its own RNG
/// substream, so the result depends only on `(seed, trip index)`.
pub fn scatter_requests(trips: &[TripRecord], epoch: NaiveDateTime, seed: u64, radius_m: f64) -> Result<Vec<Request>> {
    if !(radius_m >= 0.0) {
        return Err(Error::Config(format!("scatter radius must be >= 0, got {radius_m}")));
    }
    trips
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let ms = (t.start_time - epoch).num_milliseconds();
            if ms < 0 {
                return Err(Error::Config(format!("trip {i} starts before the request epoch {epoch}")));
            }
            let origin = scatter(&t.start_station.1, radius_m, &mut substream(seed, STREAM_ORIGIN, i as u64));
            let destination = scatter(&t.end_station.1, radius_m, &mut substream(seed, STREAM_DEST, i as u64));
            Ok(Request { id: i as u32, t_ms: ms as u64, origin, destination })
        })
        .collect()
}

/// Writes the canonical request file: a header, the epoch, then one
/// `id,t,o_lon,o_lat,d_lon,d_lat` line per request with `t` in seconds.
pub fn write_requests(path: &Path, file: &RequestFile) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    let mut go = || -> std::io::Result<()> {
        writeln!(w, "{HEADER}")?;
        writeln!(w, "# epoch {}", file.epoch.format(EPOCH_FMT))?;
        writeln!(w, "id,t,o_lon,o_lat,d_lon,d_lat")?;
        for r in &file.requests {
            writeln!(
                w,
                "{},{}.{:03},{:.7},{:.7},{:.7},{:.7}",
                r.id,
                r.t_ms / 1000,
                r.t_ms % 1000,
                r.origin.lon,
                r.origin.lat,
                r.destination.lon,
                r.destination.lat
            )?;
        }
        w.flush()
    };
    go().map_err(|e| Error::io(path, e))
}

fn parse_ms(s: &str) -> Option<u64> {
    let (whole, frac) = s.split_once('.').unwrap_or((s, ""));
    if frac.len() > 3 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let frac_ms: u64 = if frac.is_empty() { 0 } else { format!("{frac:0<3}").parse().ok()? };
    Some(whole.parse::<u64>().ok()? * 1000 + frac_ms)
}

pub fn read_requests(path: &Path) -> Result<RequestFile> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut epoch = None;
    let mut requests = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = i + 1;
        let err = |msg: String| Error::RequestFormat { line: lineno, msg };
        let line = line.trim();
        if line.is_empty() || line.starts_with("id,") {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(e) = rest.trim().strip_prefix("epoch ") {
                epoch = Some(
                    NaiveDateTime::parse_from_str(e.trim(), EPOCH_FMT).map_err(|x| err(format!("bad epoch: {x}")))?,
                );
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(err(format!("expected 6 fields, got {}", f.len())));
        }
        let num = |k: usize| f[k].parse::<f64>().map_err(|_| err(format!("bad number `{}`", f[k])));
        let loc = |a: usize, b: usize| -> Result<Location> {
            Location::new(num(a)?, num(b)?).map_err(|e| err(e.to_string()))
        };
        requests.push(Request {
            id: f[0].parse().map_err(|_| err(format!("bad id `{}`", f[0])))?,
            t_ms: parse_ms(f[1]).ok_or_else(|| err(format!("bad time `{}`", f[1])))?,
            origin: loc(2, 3)?,
            destination: loc(4, 5)?,
        });
    }
    let epoch = epoch.ok_or(Error::RequestFormat { line: 0, msg: "missing `# epoch` header".into() })?;
    if requests.windows(2).any(|w| w[1].t_ms < w[0].t_ms) {
        requests.sort_by_key(|r| (r.t_ms, r.id));
    }
    Ok(RequestFile { epoch, requests })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demandio::parse_time;

    fn trips(n: usize) -> Vec<TripRecord> {
        let t0 = parse_time("2019-10-07 00:00:00").unwrap();
        (0..n)
            .map(|i| TripRecord {
                start_time: t0 + chrono::Duration::seconds(i as i64 * 37),
                start_station: ("a".into(), Location { lon: -71.06, lat: 42.36 }),
                end_station: ("b".into(), Location { lon: -71.08, lat: 42.35 }),
                duration_s: None,
            })
            .collect()
    }

    #[test]
    fn zero_radius_keeps_station_locations() {
        let tr = trips(5);
        let reqs = scatter_requests(&tr, tr[0].start_time, 3, 0.0).unwrap();
        assert!(reqs.iter().all(|r| r.origin == tr[0].start_station.1 && r.destination == tr[0].end_station.1));
        assert_eq!(reqs[2].t_ms, 74_000);
    }

    #[test]
    fn same_seed_same_requests() {
        let tr = trips(50);
        let a = scatter_requests(&tr, tr[0].start_time, 11, 300.0).unwrap();
        let b = scatter_requests(&tr, tr[0].start_time, 11, 300.0).unwrap();
        let c = scatter_requests(&tr, tr[0].start_time, 12, 300.0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_disk_statistics() {
        let tr = trips(10_000);
        let reqs = scatter_requests(&tr, tr[0].start_time, 5, 300.0).unwrap();
        let d: Vec<f64> = reqs.iter().map(|r| r.origin.haversine(&tr[0].start_station.1)).collect();
        let max = d.iter().cloned().fold(0.0, f64::max);
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        assert!(max <= 300.0 + 1e-6, "max {max}");
        // Uniform disk: mean radius 2r/3 = 200 m, sd r/sqrt(18) ≈ 70.7 m, so the
        // standard error over 10^4 draws is ≈ 0.71 m.
        assert!((mean - 200.0).abs() < 4.0, "mean {mean}");
    }

    #[test]
    fn file_round_trip() {
        let tr = trips(20);
        let requests = scatter_requests(&tr, tr[0].start_time, 1, 300.0).unwrap();
        let file = RequestFile { epoch: tr[0].start_time, requests };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_requests(&p, &file).unwrap();
        let back = read_requests(&p).unwrap();
        assert_eq!(back.epoch, file.epoch);
        assert_eq!(back.requests.len(), 20);
        for (a, b) in back.requests.iter().zip(&file.requests) {
            assert_eq!((a.id, a.t_ms), (b.id, b.t_ms));
            assert!(a.origin.haversine(&b.origin) < 0.02);
        }
        // Written twice, the file is byte-identical.
        let p2 = dir.path().join("r2.csv");
        write_requests(&p2, &back).unwrap();
        write_requests(&p, &back).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn malformed_lines_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        std::fs::write(&p, "# epoch 2019-10-07T00:00:00\n0,1.5,-71,42,-71,42\n1,x,-71,42,-71,42\n").unwrap();
        assert!(matches!(read_requests(&p), Err(Error::RequestFormat { line: 3, .. })));
        std::fs::write(&p, "0,1.5,-71,42,-71,42\n").unwrap();
        assert!(read_requests(&p).is_err());
        assert_eq!(parse_ms("12.5"), Some(12_500));
        assert_eq!(parse_ms("3"), Some(3_000));
        assert_eq!(parse_ms("1.2345"), None);
    }
}
