//! Typed record tables.
//!
//! Every parser checks the header, then parses row by row. Malformed rows
//! are collected with their line numbers; in strict mode the first one
//! aborts the parse.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::align::{nearest_station, Metric};
use crate::graph::{EdgeId, GeoPoint, NodeId, RoadGraph};

pub const ACCIDENT_HEADER: [&str; 4] = ["year", "month", "lat", "lon"];
pub const ACCIDENT_MATCHED_HEADER: [&str; 6] = ["year", "month", "lat", "lon", "matched_edge", "score"];
pub const WEATHER_HEADER: [&str; 9] = ["node_id", "year", "month", "tavg", "tmin", "tmax", "prcp", "wspd", "pres"];
pub const VOLUME_HEADER: [&str; 3] = ["edge_id", "year", "aadt"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccidentRecord {
    pub year: i32,
    pub month: u8,
    pub location: GeoPoint,
    pub matched_edge: Option<EdgeId>,
    /// Alignment score, present when the record came out of matching.
    pub score: Option<f64>,
}

/// One month of weather at a node. `None` marks a missing value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherObservation {
    pub node: NodeId,
    pub year: i32,
    pub month: u8,
    pub tavg: Option<f64>,
    pub tmin: Option<f64>,
    pub tmax: Option<f64>,
    pub prcp: Option<f64>,
    pub wspd: Option<f64>,
    pub pres: Option<f64>,
}

impl WeatherObservation {
    pub fn values(&self) -> [Option<f64>; 6] {
        [self.tavg, self.tmin, self.tmax, self.prcp, self.wspd, self.pres]
    }

    fn validate(&self) -> Result<(), String> {
        if let (Some(lo), Some(hi)) = (self.tmin, self.tmax) {
            if lo > hi {
                return Err(format!("tmin {lo} exceeds tmax {hi}"));
            }
        }
        if let Some(avg) = self.tavg {
            if self.tmin.is_some_and(|lo| avg < lo) || self.tmax.is_some_and(|hi| avg > hi) {
                return Err(format!("tavg {avg} outside [tmin, tmax]"));
            }
        }
        if self.prcp.is_some_and(|p| p < 0.0) {
            return Err("negative precipitation".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficVolumeRecord {
    pub edge: EdgeId,
    pub year: i32,
    pub aadt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualEmbedding {
    pub node: NodeId,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    pub line: u64,
    pub msg: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub errors: Vec<RowError>,
}

impl<T> Parsed<T> {
    /// Records if every row parsed, otherwise an error summarizing the
    /// collected row failures.
    pub fn into_clean(self, file: &str) -> Result<Vec<T>, IngestError> {
        match self.errors.first() {
            None => Ok(self.records),
            Some(e) => Err(IngestError::Rows {
                file: file.to_string(),
                count: self.errors.len(),
                first_line: e.line,
                first_msg: e.msg.clone(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    pub strict: bool,
    /// Inclusive year range; rows outside it are malformed.
    pub years: Option<(i32, i32)>,
}

impl ParseOptions {
    fn check_year(&self, y: i32) -> Result<(), String> {
        match self.years {
            Some((lo, hi)) if y < lo || y > hi => Err(format!("year {y} outside dataset range {lo}-{hi}")),
            _ => Ok(()),
        }
    }
}

fn parse_table<T>(
    file: &str,
    input: impl Read,
    opts: ParseOptions,
    check_header: impl FnOnce(&[&str]) -> Result<(), String>,
    mut row: impl FnMut(&csv::StringRecord) -> Result<T, String>,
) -> Result<Parsed<T>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let header = rdr.headers().map_err(|e| IngestError::Row { file: file.into(), line: 1, msg: e.to_string() })?.clone();
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    check_header(&found).map_err(|expected| IngestError::Header { file: file.into(), expected, found: found.join(",") })?;
    let width = found.len();
    let mut out = Parsed { records: Vec::new(), errors: Vec::new() };
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let res = rec.map_err(|e| e.to_string()).and_then(|r| {
            if r.len() != width {
                Err(format!("expected {width} fields, found {}", r.len()))
            } else {
                row(&r)
            }
        });
        match res {
            Ok(v) => out.records.push(v),
            Err(msg) if opts.strict => return Err(IngestError::Row { file: file.into(), line, msg }),
            Err(msg) => out.errors.push(RowError { line, msg }),
        }
    }
    Ok(out)
}

fn exact(want: &'static [&'static str]) -> impl FnOnce(&[&str]) -> Result<(), String> {
    move |found| if found == want { Ok(()) } else { Err(want.join(",")) }
}

fn req<T: std::str::FromStr>(r: &csv::StringRecord, i: usize, name: &str) -> Result<T, String> {
    let s = r.get(i).unwrap_or("").trim();
    s.parse().map_err(|_| format!("bad {name} {s:?}"))
}

fn finite(r: &csv::StringRecord, i: usize, name: &str) -> Result<f64, String> {
    let v: f64 = req(r, i, name)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite {name}"))
    }
}

fn opt_finite(r: &csv::StringRecord, i: usize, name: &str) -> Result<Option<f64>, String> {
    if r.get(i).unwrap_or("").trim().is_empty() {
        Ok(None)
    } else {
        finite(r, i, name).map(Some)
    }
}

fn month(r: &csv::StringRecord, i: usize) -> Result<u8, String> {
    let m: u8 = req(r, i, "month")?;
    if (1..=12).contains(&m) {
        Ok(m)
    } else {
        Err(format!("month {m} outside 1-12"))
    }
}

/// Accident table, either raw (`year,month,lat,lon`) or as written by
/// alignment with trailing `matched_edge,score` columns (empty when
/// unmatched).
pub fn parse_accidents(file: &str, input: impl Read, opts: ParseOptions) -> Result<Parsed<AccidentRecord>, IngestError> {
    let matched_flag = std::cell::Cell::new(false);
    let check = |found: &[&str]| {
        if found == ACCIDENT_HEADER {
            Ok(())
        } else if found == ACCIDENT_MATCHED_HEADER {
            matched_flag.set(true);
            Ok(())
        } else {
            Err(format!("{} or {}", ACCIDENT_HEADER.join(","), ACCIDENT_MATCHED_HEADER.join(",")))
        }
    };
    parse_table(file, input, opts, check, |r| {
        let year: i32 = req(r, 0, "year")?;
        opts.check_year(year)?;
        let month = month(r, 1)?;
        let location = GeoPoint::new(finite(r, 2, "lat")?, finite(r, 3, "lon")?).map_err(|e| e.to_string())?;
        let (matched_edge, score) = if matched_flag.get() {
            let e = r.get(4).unwrap_or("").trim();
            let edge = if e.is_empty() { None } else { Some(EdgeId(req(r, 4, "matched_edge")?)) };
            (edge, opt_finite(r, 5, "score")?)
        } else {
            (None, None)
        };
        Ok(AccidentRecord { year, month, location, matched_edge, score })
    })
}

pub fn parse_weather(file: &str, input: impl Read, opts: ParseOptions) -> Result<Parsed<WeatherObservation>, IngestError> {
    parse_table(file, input, opts, exact(&WEATHER_HEADER), |r| {
        let year: i32 = req(r, 1, "year")?;
        opts.check_year(year)?;
        let obs = WeatherObservation {
            node: NodeId(req(r, 0, "node_id")?),
            year,
            month: month(r, 2)?,
            tavg: opt_finite(r, 3, "tavg")?,
            tmin: opt_finite(r, 4, "tmin")?,
            tmax: opt_finite(r, 5, "tmax")?,
            prcp: opt_finite(r, 6, "prcp")?,
            wspd: opt_finite(r, 7, "wspd")?,
            pres: opt_finite(r, 8, "pres")?,
        };
        obs.validate()?;
        Ok(obs)
    })
}

pub fn parse_volume(file: &str, input: impl Read, opts: ParseOptions) -> Result<Parsed<TrafficVolumeRecord>, IngestError> {
    parse_table(file, input, opts, exact(&VOLUME_HEADER), |r| {
        let year: i32 = req(r, 1, "year")?;
        opts.check_year(year)?;
        let aadt = finite(r, 2, "aadt")?;
        if aadt < 0.0 {
            return Err(format!("negative aadt {aadt}"));
        }
        Ok(TrafficVolumeRecord { edge: EdgeId(req(r, 0, "edge_id")?), year, aadt })
    })
}

/// Embedding table with header `node_id,v0,...,v{D-1}`.
pub fn parse_embeddings(file: &str, input: impl Read, opts: ParseOptions) -> Result<Parsed<VisualEmbedding>, IngestError> {
    let check = |found: &[&str]| {
        let ok = found.first() == Some(&"node_id") && found[1..].iter().enumerate().all(|(i, h)| *h == format!("v{i}"));
        if ok {
            Ok(())
        } else {
            Err("node_id,v0,...,v{D-1}".to_string())
        }
    };
    parse_table(file, input, opts, check, |r| {
        let node = NodeId(req(r, 0, "node_id")?);
        let vector = (1..r.len()).map(|i| finite(r, i, &format!("v{}", i - 1))).collect::<Result<_, _>>()?;
        Ok(VisualEmbedding { node, vector })
    })
}

fn open(path: &Path) -> crate::Result<(String, std::fs::File)> {
    Ok((path.display().to_string(), std::fs::File::open(path)?))
}

/// Reads a file and fails on any malformed row.
pub fn read_accidents(path: &Path, opts: ParseOptions) -> crate::Result<Vec<AccidentRecord>> {
    let (name, f) = open(path)?;
    Ok(parse_accidents(&name, f, opts)?.into_clean(&name)?)
}

pub fn read_weather(path: &Path, opts: ParseOptions) -> crate::Result<Vec<WeatherObservation>> {
    let (name, f) = open(path)?;
    Ok(parse_weather(&name, f, opts)?.into_clean(&name)?)
}

pub fn read_volume(path: &Path, opts: ParseOptions) -> crate::Result<Vec<TrafficVolumeRecord>> {
    let (name, f) = open(path)?;
    Ok(parse_volume(&name, f, opts)?.into_clean(&name)?)
}

pub fn read_embeddings(path: &Path, opts: ParseOptions) -> crate::Result<Vec<VisualEmbedding>> {
    let (name, f) = open(path)?;
    Ok(parse_embeddings(&name, f, opts)?.into_clean(&name)?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes accidents; with `matched` set, the alignment columns are added.
pub fn write_accidents(out: impl Write, recs: &[AccidentRecord], matched: bool) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if matched {
        w.write_record(ACCIDENT_MATCHED_HEADER)?;
    } else {
        w.write_record(ACCIDENT_HEADER)?;
    }
    for r in recs {
        let mut row = vec![r.year.to_string(), r.month.to_string(), r.location.lat().to_string(), r.location.lon().to_string()];
        if matched {
            row.push(r.matched_edge.map(|e| e.to_string()).unwrap_or_default());
            row.push(opt(r.score));
        }
        w.write_record(&row)?;
    }
    w.flush()
}

pub fn write_weather(out: impl Write, recs: &[WeatherObservation]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(WEATHER_HEADER)?;
    for r in recs {
        let mut row = vec![r.node.to_string(), r.year.to_string(), r.month.to_string()];
        row.extend(r.values().into_iter().map(opt));
        w.write_record(&row)?;
    }
    w.flush()
}

pub fn write_volume(out: impl Write, recs: &[TrafficVolumeRecord]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(VOLUME_HEADER)?;
    for r in recs {
        w.write_record([r.edge.to_string(), r.year.to_string(), r.aadt.to_string()])?;
    }
    w.flush()
}

pub fn write_embeddings(out: impl Write, recs: &[VisualEmbedding]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = recs.first().map_or(0, |r| r.vector.len());
    let mut header = vec!["node_id".to_string()];
    header.extend((0..d).map(|i| format!("v{i}")));
    w.write_record(&header)?;
    for r in recs {
        let mut row = vec![r.node.to_string()];
        row.extend(r.vector.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()
}

/// Copies station observations onto graph nodes through the nearest
/// station. `station_obs` uses the `node` field as the station id.
pub fn weather_from_stations(
    g: &RoadGraph,
    stations: &[(NodeId, GeoPoint)],
    station_obs: &[WeatherObservation],
    metric: Metric,
) -> crate::Result<Vec<WeatherObservation>> {
    let points: Vec<GeoPoint> = stations.iter().map(|s| s.1).collect();
    let mut by_station: HashMap<NodeId, Vec<&WeatherObservation>> = HashMap::new();
    for o in station_obs {
        by_station.entry(o.node).or_default().push(o);
    }
    let mut out = Vec::new();
    for n in g.nodes() {
        let k = nearest_station(n.point, &points, metric)?;
        for o in by_station.get(&stations[k].0).into_iter().flatten() {
            out.push(WeatherObservation { node: n.id, ..**o });
        }
    }
    Ok(out)
}
