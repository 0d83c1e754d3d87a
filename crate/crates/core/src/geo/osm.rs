//! OpenStreetMap extract ingestion: `highway`-tagged ways become directed,
//! haversine-weighted edges between consecutive way nodes.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use quick_xml::events::{BytesStart, Event};
use serde::{Deserialize, Serialize};

use super::location::{BoundingBox, Location};
use super::network::{meters_to_mm, RoadNetwork};
use crate::error::{Error, Result};

/// Which `highway=*` values are admitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HighwayFilter {
    /// When set, only these values are accepted.
    pub allow: Option<Vec<String>>,
    pub deny: Vec<String>,
}

impl Default for HighwayFilter {
    fn default() -> Self {
        Self { allow: None, deny: vec!["motorway".into(), "motorway_link".into()] }
    }
}

impl HighwayFilter {
    pub fn accepts(&self, value: &str) -> bool {
        if self.deny.iter().any(|d| d == value) {
            return false;
        }
        match &self.allow {
            Some(list) => list.iter().any(|a| a == value),
            None => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    Both,
    Forward,
    Backward,
}

#[derive(Debug, Default)]
struct RawWay {
    refs: Vec<i64>,
    highway: Option<String>,
    oneway: Option<String>,
    oneway_bicycle: Option<String>,
    junction: Option<String>,
}

impl RawWay {
    fn direction(&self) -> Direction {
        if matches!(self.oneway_bicycle.as_deref(), Some("no")) {
            return Direction::Both;
        }
        match self.oneway.as_deref() {
            Some("yes" | "true" | "1") => Direction::Forward,
            Some("-1" | "reverse") => Direction::Backward,
            Some(_) => Direction::Both,
            None if matches!(self.junction.as_deref(), Some("roundabout" | "circular")) => Direction::Forward,
            None => Direction::Both,
        }
    }

    fn set_tag(&mut self, k: &str, v: String) {
        match k {
            "highway" => self.highway = Some(v),
            "oneway" => self.oneway = Some(v),
            "oneway:bicycle" => self.oneway_bicycle = Some(v),
            "junction" => self.junction = Some(v),
            _ => {}
        }
    }
}

#[derive(Debug, Default)]
struct RawExtract {
    nodes: HashMap<i64, Location>,
    ways: Vec<RawWay>,
}

/// Loads `highway` ways from an `.osm` (XML) or `.pbf` extract, clips them to
/// `bbox`, and returns the largest strongly connected component.
pub fn load_network(path: &Path, bbox: &BoundingBox, filter: &HighwayFilter) -> Result<RoadNetwork> {
    let raw = if is_pbf(path) { read_pbf(path, filter)? } else { read_xml(path, filter)? };
    let net = assemble(raw, bbox)?;
    log::info!("loaded {} nodes / {} edges from {}", net.node_count(), net.edge_count(), path.display());
    Ok(net)
}

fn is_pbf(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pbf"))
}

fn assemble(raw: RawExtract, bbox: &BoundingBox) -> Result<RoadNetwork> {
    let mut used: HashSet<i64> = HashSet::new();
    let mut edges = Vec::new();
    let inside = |id: &i64| raw.nodes.get(id).filter(|p| bbox.contains(p));
    for way in &raw.ways {
        let dir = way.direction();
        for r in &way.refs {
            if inside(r).is_some() {
                used.insert(*r);
            }
        }
        for pair in way.refs.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let (Some(pa), Some(pb)) = (inside(&a), inside(&b)) else {
                continue;
            };
            let len = meters_to_mm(pa.haversine(pb));
            if dir != Direction::Backward {
                edges.push((a, b, len));
            }
            if dir != Direction::Forward {
                edges.push((b, a, len));
            }
        }
    }
    if used.is_empty() {
        return Err(Error::BboxOutsideData);
    }
    let nodes = used.into_iter().map(|id| (id, raw.nodes[&id])).collect();
    RoadNetwork::build(nodes, edges)
}

fn attr(e: &BytesStart<'_>, key: &[u8]) -> Option<String> {
    e.attributes()
        .flatten()
        .find(|a| a.key.as_ref() == key)
        .and_then(|a| a.unescape_value().ok().map(|v| v.into_owned()))
}

fn read_xml(path: &Path, filter: &HighwayFilter) -> Result<RawExtract> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_xml(std::io::BufReader::new(file), filter).map_err(|msg| Error::Osm { path: path.into(), msg })
}

fn parse_xml(reader: impl BufRead, filter: &HighwayFilter) -> std::result::Result<RawExtract, String> {
    let mut xml = quick_xml::Reader::from_reader(reader);
    let mut buf = Vec::new();
    let mut out = RawExtract::default();
    let mut way: Option<RawWay> = None;
    let mut saw_root = false;
    loop {
        let ev = xml.read_event_into(&mut buf).map_err(|e| e.to_string())?;
        let (e, closes) = match &ev {
            Event::Start(e) => (Some(e), false),
            Event::Empty(e) => (Some(e), true),
            Event::End(e) if e.name().as_ref() == b"way" => {
                if let Some(w) = way.take() {
                    if w.highway.as_deref().is_some_and(|h| filter.accepts(h)) {
                        out.ways.push(w);
                    }
                }
                (None, false)
            }
            Event::Eof => break,
            _ => (None, false),
        };
        if let Some(e) = e {
            match e.name().as_ref() {
                b"osm" => saw_root = true,
                b"node" => {
                    let id = attr(e, b"id").and_then(|v| v.parse::<i64>().ok());
                    let lat = attr(e, b"lat").and_then(|v| v.parse::<f64>().ok());
                    let lon = attr(e, b"lon").and_then(|v| v.parse::<f64>().ok());
                    match (id, lat, lon) {
                        (Some(id), Some(lat), Some(lon)) => {
                            let p = Location::new(lon, lat).map_err(|e| e.to_string())?;
                            out.nodes.insert(id, p);
                        }
                        _ => return Err("node without id/lat/lon".into()),
                    }
                }
                b"way" => {
                    let w = RawWay::default();
                    if closes {
                        continue;
                    }
                    way = Some(w);
                }
                b"nd" => {
                    if let Some(w) = way.as_mut() {
                        let r = attr(e, b"ref").and_then(|v| v.parse().ok()).ok_or("nd without ref")?;
                        w.refs.push(r);
                    }
                }
                b"tag" => {
                    if let Some(w) = way.as_mut() {
                        if let (Some(k), Some(v)) = (attr(e, b"k"), attr(e, b"v")) {
                            w.set_tag(&k, v);
                        }
                    }
                }
                _ => {}
            }
        }
        buf.clear();
    }
    if !saw_root {
        return Err("missing <osm> root element".into());
    }
    Ok(out)
}

fn read_pbf(path: &Path, filter: &HighwayFilter) -> Result<RawExtract> {
    use osmpbf::{Element, ElementReader};
    let osm_err = |e: osmpbf::Error| Error::Osm { path: path.into(), msg: e.to_string() };
    let reader = ElementReader::from_path(path).map_err(osm_err)?;
    let mut out = RawExtract::default();
    let mut bad = None;
    reader
        .for_each(|el| match el {
            Element::Node(n) => match Location::new(n.lon(), n.lat()) {
                Ok(p) => {
                    out.nodes.insert(n.id(), p);
                }
                Err(e) => bad = Some(e),
            },
            Element::DenseNode(n) => match Location::new(n.lon(), n.lat()) {
                Ok(p) => {
                    out.nodes.insert(n.id(), p);
                }
                Err(e) => bad = Some(e),
            },
            Element::Way(w) => {
                let mut raw = RawWay { refs: w.refs().collect(), ..Default::default() };
                for (k, v) in w.tags() {
                    raw.set_tag(k, v.to_string());
                }
                if raw.highway.as_deref().is_some_and(|h| filter.accepts(h)) {
                    out.ways.push(raw);
                }
            }
            Element::Relation(_) => {}
        })
        .map_err(osm_err)?;
    match bad {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Renders nodes and two-way `highway=residential` ways as OSM XML. Used to
/// materialize synthetic networks so they go through the same loader.
pub fn write_xml(nodes: &[(i64, Location)], ways: &[(Vec<i64>, bool)]) -> String {
    use std::fmt::Write as _;
    let mut s =
        String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<osm version=\"0.6\" generator=\"bikesim\">\n");
    for (id, p) in nodes {
        let _ = writeln!(s, "  <node id=\"{id}\" lat=\"{}\" lon=\"{}\"/>", p.lat, p.lon);
    }
    for (i, (refs, oneway)) in ways.iter().enumerate() {
        let _ = writeln!(s, "  <way id=\"{}\">", i + 1);
        for r in refs {
            let _ = writeln!(s, "    <nd ref=\"{r}\"/>");
        }
        s.push_str("    <tag k=\"highway\" v=\"residential\"/>\n");
        if *oneway {
            s.push_str("    <tag k=\"oneway\" v=\"yes\"/>\n");
        }
        s.push_str("  </way>\n");
    }
    s.push_str("</osm>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    // ~100 m square near Boston.
    const SQUARE: &str = r#"<?xml version="1.0"?>
<osm version="0.6">
  <node id="1" lat="42.3600000" lon="-71.0600000"/>
  <node id="2" lat="42.3600000" lon="-71.0587833"/>
  <node id="3" lat="42.3608993" lon="-71.0587833"/>
  <node id="4" lat="42.3608993" lon="-71.0600000"/>
  <node id="5" lat="42.3700000" lon="-71.0700000"/>
  <way id="10">
    <nd ref="1"/><nd ref="2"/><nd ref="3"/><nd ref="4"/><nd ref="1"/>
    <tag k="highway" v="residential"/>
  </way>
  <way id="11">
    <nd ref="1"/><nd ref="5"/>
    <tag k="highway" v="motorway"/>
  </way>
  <way id="12">
    <nd ref="3"/><nd ref="5"/>
    <tag k="building" v="yes"/>
  </way>
</osm>
"#;

    fn parse(s: &str) -> RoadNetwork {
        let raw = parse_xml(s.as_bytes(), &HighwayFilter::default()).unwrap();
        assemble(raw, &BoundingBox::world()).unwrap()
    }

    #[test]
    fn square_fixture_has_four_nodes_eight_edges() {
        let net = parse(SQUARE);
        assert_eq!(net.node_count(), 4);
        assert_eq!(net.edge_count(), 8);
        for e in net.edges() {
            assert!((e.length_mm as f64 - 100_000.0).abs() < 500.0, "{e:?}");
        }
    }

    #[test]
    fn oneway_and_isolated_node_pruned() {
        let xml = r#"<osm>
  <node id="1" lat="0.0" lon="0.0"/>
  <node id="2" lat="0.0" lon="0.001"/>
  <node id="3" lat="0.001" lon="0.001"/>
  <node id="4" lat="0.002" lon="0.002"/>
  <way id="1"><nd ref="1"/><nd ref="2"/><nd ref="3"/><nd ref="1"/><tag k="highway" v="path"/></way>
  <way id="2"><nd ref="3"/><nd ref="4"/><tag k="highway" v="path"/><tag k="oneway" v="yes"/></way>
</osm>"#;
        let net = parse(xml);
        assert_eq!(net.node_count(), 3);
        assert!((0..3).all(|v| net.source_id(v) != 4));
    }

    #[test]
    fn oneway_directions() {
        let mk = |oneway: Option<&str>, bike: Option<&str>| RawWay {
            oneway: oneway.map(String::from),
            oneway_bicycle: bike.map(String::from),
            ..Default::default()
        };
        assert_eq!(mk(Some("yes"), None).direction(), Direction::Forward);
        assert_eq!(mk(Some("-1"), None).direction(), Direction::Backward);
        assert_eq!(mk(Some("yes"), Some("no")).direction(), Direction::Both);
        assert_eq!(mk(None, None).direction(), Direction::Both);
        let round = RawWay { junction: Some("roundabout".into()), ..Default::default() };
        assert_eq!(round.direction(), Direction::Forward);
    }

    #[test]
    fn bbox_outside_data() {
        let raw = parse_xml(SQUARE.as_bytes(), &HighwayFilter::default()).unwrap();
        let far = BoundingBox::new(10.0, 10.0, 11.0, 11.0).unwrap();
        assert!(matches!(assemble(raw, &far), Err(Error::BboxOutsideData)));
    }

    #[test]
    fn garbage_is_an_error() {
        assert!(parse_xml("not xml at all".as_bytes(), &HighwayFilter::default()).is_err());
    }

    #[test]
    fn filter_allowlist() {
        let f = HighwayFilter { allow: Some(vec!["cycleway".into()]), deny: vec![] };
        assert!(f.accepts("cycleway"));
        assert!(!f.accepts("primary"));
        assert!(!HighwayFilter::default().accepts("motorway_link"));
    }

    #[test]
    fn written_xml_round_trips() {
        let nodes = vec![(1, Location { lon: 0.0, lat: 0.0 }), (2, Location { lon: 0.001, lat: 0.0 })];
        let xml = write_xml(&nodes, &[(vec![1, 2], false)]);
        let net = parse(&xml);
        assert_eq!(net.node_count(), 2);
        assert_eq!(net.edge_count(), 2);
    }
}
