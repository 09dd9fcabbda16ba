//! Node and edge tables.
//!
//! `node_id,lat,lon` and `edge_id,start,end,oneway,road_type,length_m`,
//! comma-delimited with a header row.

use std::io::{Read, Write};
use std::path::Path;

use super::{EdgeId, GeoPoint, GraphError, NodeId, RoadEdge, RoadGraph, RoadNode, RoadType};

pub const NODE_HEADER: [&str; 3] = ["node_id", "lat", "lon"];
pub const EDGE_HEADER: [&str; 6] = ["edge_id", "start", "end", "oneway", "road_type", "length_m"];

fn parse_err(file: &str, line: u64, msg: impl Into<String>) -> GraphError {
    GraphError::Parse { file: file.to_string(), line, msg: msg.into() }
}

fn check_header(file: &str, rdr: &mut csv::Reader<impl Read>, want: &[&str]) -> Result<(), GraphError> {
    let got = rdr.headers().map_err(|e| parse_err(file, 1, e.to_string()))?;
    let got: Vec<&str> = got.iter().map(str::trim).collect();
    if got != want {
        return Err(parse_err(file, 1, format!("expected header {:?}, found {:?}", want, got)));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(file: &str, line: u64, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T, GraphError> {
    rec.get(i)
        .map(str::trim)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(file, line, format!("bad {name} {:?}", rec.get(i).unwrap_or(""))))
}

pub fn read_nodes(file: &str, input: impl Read) -> Result<Vec<RoadNode>, GraphError> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(input);
    check_header(file, &mut rdr, &NODE_HEADER)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| parse_err(file, line, e.to_string()))?;
        let id = NodeId(field(file, line, &rec, 0, "node_id")?);
        let point = GeoPoint::new(field(file, line, &rec, 1, "lat")?, field(file, line, &rec, 2, "lon")?)
            .map_err(|e| parse_err(file, line, e.to_string()))?;
        out.push(RoadNode { id, point });
    }
    Ok(out)
}

/// Reads an edge table. Rows whose start equals their end are accepted as
/// loops only when `allow_loops` is set.
pub fn read_edges(file: &str, input: impl Read, allow_loops: bool) -> Result<Vec<RoadEdge>, GraphError> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(input);
    check_header(file, &mut rdr, &EDGE_HEADER)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| parse_err(file, line, e.to_string()))?;
        let id = EdgeId(field(file, line, &rec, 0, "edge_id")?);
        let start = NodeId(field(file, line, &rec, 1, "start")?);
        let end = NodeId(field(file, line, &rec, 2, "end")?);
        let one_way = match rec.get(3).map(|s| s.trim().to_ascii_lowercase()).as_deref() {
            Some("true") => true,
            Some("false") => false,
            other => return Err(parse_err(file, line, format!("bad oneway {:?}", other.unwrap_or("")))),
        };
        let road_type: RoadType = rec
            .get(4)
            .unwrap_or("")
            .parse()
            .map_err(|e: GraphError| parse_err(file, line, e.to_string()))?;
        let length: f64 = field(file, line, &rec, 5, "length_m")?;
        let edge = if start == end && allow_loops {
            RoadEdge::new_loop(id, start, one_way, road_type, length)
        } else {
            RoadEdge::new(id, start, end, one_way, road_type, length)
        };
        out.push(edge.map_err(|e| parse_err(file, line, e.to_string()))?);
    }
    Ok(out)
}

pub fn write_nodes(out: impl Write, nodes: &[RoadNode]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(NODE_HEADER)?;
    for n in nodes {
        w.write_record([n.id.to_string(), n.point.lat().to_string(), n.point.lon().to_string()])?;
    }
    w.flush()
}

pub fn write_edges(out: impl Write, edges: &[RoadEdge]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EDGE_HEADER)?;
    for e in edges {
        w.write_record([
            e.id.to_string(),
            e.start.to_string(),
            e.end.to_string(),
            e.one_way.to_string(),
            e.road_type.name().to_string(),
            e.length_m.to_string(),
        ])?;
    }
    w.flush()
}

/// Loads and builds a graph from a node table and an edge table on disk.
pub fn load_graph(nodes: &Path, edges: &Path, allow_loops: bool) -> crate::Result<RoadGraph> {
    let n = read_nodes(&nodes.display().to_string(), std::fs::File::open(nodes)?)?;
    let e = read_edges(&edges.display().to_string(), std::fs::File::open(edges)?, allow_loops)?;
    Ok(RoadGraph::build(n, e)?)
}

pub fn save_graph(g: &RoadGraph, nodes: &Path, edges: &Path) -> std::io::Result<()> {
    write_nodes(std::fs::File::create(nodes)?, g.nodes())?;
    write_edges(std::fs::File::create(edges)?, g.edges())
}
