//! Per-month feature and label tensors over a fixed graph.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::layout::*;
use super::{AccidentRecord, IngestError, TrafficVolumeRecord, VisualEmbedding, WeatherObservation};
use crate::graph::{betweenness_scores, EdgeId, RoadGraph};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: i32,
    pub month: u8,
}

impl YearMonth {
    pub fn new(year: i32, month: u8) -> Result<Self, IngestError> {
        if !(1..=12).contains(&month) {
            return Err(IngestError::BadRange(format!("month {month} outside 1-12")));
        }
        Ok(YearMonth { year, month })
    }

    pub fn next(self) -> Self {
        if self.month == 12 {
            YearMonth { year: self.year + 1, month: 1 }
        } else {
            YearMonth { year: self.year, month: self.month + 1 }
        }
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || IngestError::BadRange(format!("expected YYYY-MM, got {s:?}"));
        let (y, m) = s.trim().split_once('-').ok_or_else(bad)?;
        YearMonth::new(y.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?)
    }
}

/// Inclusive range of calendar months.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonthRange {
    pub start: YearMonth,
    pub end: YearMonth,
}

impl MonthRange {
    pub fn new(start: YearMonth, end: YearMonth) -> Result<Self, IngestError> {
        if start > end {
            return Err(IngestError::BadRange(format!("{start} is after {end}")));
        }
        Ok(MonthRange { start, end })
    }

    /// Whole years `first..=last`.
    pub fn years(first: i32, last: i32) -> Result<Self, IngestError> {
        MonthRange::new(YearMonth::new(first, 1)?, YearMonth::new(last, 12)?)
    }

    pub fn contains(&self, ym: YearMonth) -> bool {
        self.start <= ym && ym <= self.end
    }

    pub fn months(&self) -> Vec<YearMonth> {
        let mut out = vec![self.start];
        while *out.last().unwrap() < self.end {
            out.push(out.last().unwrap().next());
        }
        out
    }
}

impl FromStr for MonthRange {
    type Err = IngestError;

    /// `YYYY-MM..YYYY-MM`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s.split_once("..").ok_or_else(|| IngestError::BadRange(format!("expected YYYY-MM..YYYY-MM, got {s:?}")))?;
        MonthRange::new(a.parse()?, b.parse()?)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeatherPolicy {
    /// Zero-fill missing values and set the companion flag.
    #[default]
    Mask,
    /// Fail when any node-month lacks a complete observation.
    Reject,
}

impl FromStr for WeatherPolicy {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mask" => Ok(WeatherPolicy::Mask),
            "reject" => Ok(WeatherPolicy::Reject),
            _ => Err(IngestError::BadRange(format!("unknown weather policy {s:?} (expected mask or reject)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotOptions {
    pub weather_policy: WeatherPolicy,
    /// Betweenness over `length_m` instead of hop counts.
    pub weighted_betweenness: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlySnapshot {
    pub year: i32,
    /// `None` for a yearly aggregate.
    pub month: Option<u8>,
    pub node_features: Tensor,
    pub visual_features: Tensor,
    pub edge_features: Tensor,
    pub labels_count: Vec<u32>,
    pub labels_binary: Vec<u8>,
}

impl MonthlySnapshot {
    pub fn key(&self) -> (i32, u8) {
        (self.year, self.month.unwrap_or(0))
    }

    pub fn name(&self) -> String {
        match self.month {
            Some(m) => format!("{}-{:02}", self.year, m),
            None => format!("{}", self.year),
        }
    }

    pub fn edge_count(&self) -> usize {
        self.labels_count.len()
    }

    pub fn positive_rate(&self) -> f64 {
        let n = self.labels_binary.len().max(1);
        self.labels_binary.iter().filter(|&&b| b == 1).count() as f64 / n as f64
    }

    pub fn check_graph(&self, g: &RoadGraph) -> Result<(), IngestError> {
        let dims = [
            ("node feature rows", g.node_count(), self.node_features.rows()),
            ("visual feature rows", g.node_count(), self.visual_features.rows()),
            ("edge feature rows", g.edge_count(), self.edge_features.rows()),
            ("label rows", g.edge_count(), self.labels_count.len()),
            ("node feature columns", D_NODE, self.node_features.cols()),
            ("edge feature columns", D_EDGE, self.edge_features.cols()),
        ];
        for (what, expected, found) in dims {
            if expected != found {
                return Err(IngestError::Dimension { what: format!("snapshot {} {what}", self.name()), expected, found });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, IngestError> {
        serde_json::to_string(self).map_err(|e| IngestError::Json(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        let s: MonthlySnapshot = serde_json::from_str(text).map_err(|e| IngestError::Json(e.to_string()))?;
        let consistent = s.labels_count.len() == s.labels_binary.len()
            && s.labels_count.iter().zip(&s.labels_binary).all(|(&c, &b)| b == u8::from(c > 0));
        if !consistent {
            return Err(IngestError::Json(format!("snapshot {}: binary labels disagree with counts", s.name())));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub snapshots: usize,
    pub accidents_used: usize,
    pub unmatched: usize,
    pub unknown_edge: usize,
    pub out_of_range: usize,
    pub nodes_without_embedding: usize,
    pub visual_dim: usize,
    /// Node-months with at least one missing weather value.
    pub weather_missing_node_months: usize,
    pub weather_rows_ignored: usize,
    pub volume_rows_ignored: usize,
    pub volume_coverage: f64,
}

/// Fraction of graph edges with at least one volume record.
pub fn volume_coverage(g: &RoadGraph, volume: &[TrafficVolumeRecord]) -> f64 {
    if g.edge_count() == 0 {
        return 0.0;
    }
    let ids: HashSet<EdgeId> = g.edges().iter().map(|e| e.id).collect();
    let covered: HashSet<EdgeId> = volume.iter().map(|v| v.edge).filter(|e| ids.contains(e)).collect();
    covered.len() as f64 / g.edge_count() as f64
}

/// One snapshot per calendar month of `range`, labels counted from
/// accidents already matched to edges.
pub fn build_monthly_snapshots(
    g: &RoadGraph,
    accidents: &[AccidentRecord],
    weather: &[WeatherObservation],
    volume: &[TrafficVolumeRecord],
    embeddings: &[VisualEmbedding],
    range: MonthRange,
    opts: SnapshotOptions,
) -> Result<(Vec<MonthlySnapshot>, BuildReport), IngestError> {
    let (n, m) = (g.node_count(), g.edge_count());
    let mut report = BuildReport::default();
    let edge_pos: HashMap<EdgeId, usize> = g.edges().iter().enumerate().map(|(k, e)| (e.id, k)).collect();

    // static node columns
    let betw = betweenness_scores(g, opts.weighted_betweenness);
    let mut node_static = Tensor::zeros(n, D_NODE);
    for (v, node) in g.nodes().iter().enumerate() {
        let d = g.degree_at(v);
        let row = node_static.row_mut(v);
        row[NODE_LAT] = node.point.lat();
        row[NODE_LON] = node.point.lon();
        row[NODE_IN_DEG] = d.in_degree as f64;
        row[NODE_OUT_DEG] = d.out_degree as f64;
        row[NODE_BETWEENNESS] = betw[v];
    }

    // visual matrix
    let visual_dim = embeddings.first().map_or(0, |e| e.vector.len());
    report.visual_dim = visual_dim;
    let mut visual = Tensor::zeros(n, visual_dim);
    let mut seen = vec![false; n];
    for e in embeddings {
        if e.vector.len() != visual_dim {
            return Err(IngestError::Dimension { what: format!("embedding of node {}", e.node), expected: visual_dim, found: e.vector.len() });
        }
        let Some(v) = g.node_index(e.node) else { continue };
        if seen[v] {
            return Err(IngestError::Duplicate(format!("embedding for node {}", e.node)));
        }
        seen[v] = true;
        visual.row_mut(v).copy_from_slice(&e.vector);
    }
    report.nodes_without_embedding = seen.iter().filter(|s| !**s).count();

    // static edge columns
    let mut edge_static = Tensor::zeros(m, D_EDGE);
    for (k, e) in g.edges().iter().enumerate() {
        let row = edge_static.row_mut(k);
        row[EDGE_LENGTH] = e.length_m;
        row[EDGE_ROAD_TYPE + e.road_type.index()] = 1.0;
        row[EDGE_ONE_WAY] = f64::from(u8::from(e.one_way));
    }

    let mut weather_at: HashMap<(usize, YearMonth), &WeatherObservation> = HashMap::new();
    for w in weather {
        let Some(v) = g.node_index(w.node) else {
            report.weather_rows_ignored += 1;
            continue;
        };
        let ym = YearMonth { year: w.year, month: w.month };
        if weather_at.insert((v, ym), w).is_some() {
            return Err(IngestError::Duplicate(format!("weather for node {} in {ym}", w.node)));
        }
    }
    let mut aadt_at: HashMap<(usize, i32), f64> = HashMap::new();
    for r in volume {
        let Some(&k) = edge_pos.get(&r.edge) else {
            report.volume_rows_ignored += 1;
            continue;
        };
        if aadt_at.insert((k, r.year), r.aadt).is_some() {
            return Err(IngestError::Duplicate(format!("volume for edge {} in {}", r.edge, r.year)));
        }
    }
    report.volume_coverage = volume_coverage(g, volume);

    let months = range.months();
    let month_pos: HashMap<YearMonth, usize> = months.iter().enumerate().map(|(i, &ym)| (ym, i)).collect();
    let mut counts = vec![vec![0u32; m]; months.len()];
    for a in accidents {
        let Some(edge) = a.matched_edge else {
            report.unmatched += 1;
            continue;
        };
        let Some(&k) = edge_pos.get(&edge) else {
            report.unknown_edge += 1;
            continue;
        };
        match month_pos.get(&YearMonth { year: a.year, month: a.month }) {
            Some(&i) => {
                counts[i][k] += 1;
                report.accidents_used += 1;
            }
            None => report.out_of_range += 1,
        }
    }

    let mut out = Vec::with_capacity(months.len());
    for (i, ym) in months.iter().enumerate() {
        let mut nodes = node_static.clone();
        for v in 0..n {
            let obs = weather_at.get(&(v, *ym)).map(|w| w.values()).unwrap_or([None; 6]);
            if obs.iter().any(Option::is_none) {
                if opts.weather_policy == WeatherPolicy::Reject {
                    return Err(IngestError::WeatherMissing { node: g.nodes()[v].id.0, year: ym.year, month: ym.month });
                }
                report.weather_missing_node_months += 1;
            }
            let row = nodes.row_mut(v);
            for (j, val) in obs.iter().enumerate() {
                row[NODE_WEATHER + j] = val.unwrap_or(0.0);
                row[NODE_WEATHER_MASK + j] = if val.is_some() { 0.0 } else { 1.0 };
            }
        }
        let mut edges = edge_static.clone();
        for k in 0..m {
            let row = edges.row_mut(k);
            match aadt_at.get(&(k, ym.year)) {
                Some(&a) => row[EDGE_AADT] = a,
                None => row[EDGE_AADT_MASK] = 1.0,
            }
        }
        let labels_count = std::mem::take(&mut counts[i]);
        let labels_binary = labels_count.iter().map(|&c| u8::from(c > 0)).collect();
        out.push(MonthlySnapshot {
            year: ym.year,
            month: Some(ym.month),
            node_features: nodes,
            visual_features: visual.clone(),
            edge_features: edges,
            labels_count,
            labels_binary,
        });
    }
    report.snapshots = out.len();
    Ok((out, report))
}

/// Collapses monthly snapshots into one per year. Counts are summed;
/// weather cells average the months where they were observed and stay
/// flagged missing only if no month had them.
pub fn aggregate_yearly(monthly: &[MonthlySnapshot]) -> Vec<MonthlySnapshot> {
    let mut out: Vec<MonthlySnapshot> = Vec::new();
    let mut seen: Vec<Vec<f64>> = Vec::new();
    for s in monthly {
        if out.last().is_none_or(|y| y.year != s.year) {
            let mut first = s.clone();
            first.month = None;
            for v in 0..first.node_features.rows() {
                first.node_features.row_mut(v)[NODE_WEATHER..D_NODE].fill(0.0);
            }
            first.labels_count.fill(0);
            out.push(first);
            seen.push(vec![0.0; s.node_features.rows() * 6]);
        }
        let y = out.last_mut().unwrap();
        let cnt = seen.last_mut().unwrap();
        for v in 0..s.node_features.rows() {
            let src = s.node_features.row(v);
            let dst = y.node_features.row_mut(v);
            for j in 0..6 {
                if src[NODE_WEATHER_MASK + j] == 0.0 {
                    dst[NODE_WEATHER + j] += src[NODE_WEATHER + j];
                    cnt[v * 6 + j] += 1.0;
                }
            }
        }
        for (a, b) in y.labels_count.iter_mut().zip(&s.labels_count) {
            *a += b;
        }
    }
    for (y, cnt) in out.iter_mut().zip(&seen) {
        for v in 0..y.node_features.rows() {
            let row = y.node_features.row_mut(v);
            for j in 0..6 {
                let c = cnt[v * 6 + j];
                if c > 0.0 {
                    row[NODE_WEATHER + j] /= c;
                } else {
                    row[NODE_WEATHER_MASK + j] = 1.0;
                }
            }
        }
        y.labels_binary = y.labels_count.iter().map(|&c| u8::from(c > 0)).collect();
    }
    out
}

fn file_name(s: &MonthlySnapshot) -> String {
    format!("snapshot_{}.json", s.name())
}

pub fn save_snapshots(dir: &Path, snaps: &[MonthlySnapshot]) -> crate::Result<()> {
    std::fs::create_dir_all(dir)?;
    for s in snaps {
        std::fs::write(dir.join(file_name(s)), s.to_json()?)?;
    }
    Ok(())
}

/// Loads every `snapshot_*.json` in `dir`, ordered chronologically.
pub fn load_snapshots(dir: &Path) -> crate::Result<Vec<MonthlySnapshot>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("snapshot_") && name.ends_with(".json") {
            out.push(MonthlySnapshot::from_json(&std::fs::read_to_string(&path)?)?);
        }
    }
    out.sort_by_key(MonthlySnapshot::key);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::{edge, node};
    use crate::graph::{GeoPoint, NodeId};

    fn small() -> RoadGraph {
        RoadGraph::build(vec![node(1, 39.0, -75.0), node(2, 39.01, -75.0), node(3, 39.02, -75.0)], vec![edge(10, 1, 2, 100.0), edge(11, 2, 3, 120.0)]).unwrap()
    }

    fn acc(year: i32, month: u8, e: Option<u64>) -> AccidentRecord {
        AccidentRecord { year, month, location: GeoPoint::new(39.0, -75.0).unwrap(), matched_edge: e.map(EdgeId), score: Some(0.0) }
    }

    #[test]
    fn counts_and_report() {
        let g = small();
        let accs = vec![acc(2020, 1, Some(10)), acc(2020, 1, Some(10)), acc(2020, 1, Some(10)), acc(2020, 2, Some(11)), acc(2020, 2, None), acc(2020, 2, Some(99)), acc(2021, 1, Some(10))];
        let range = "2020-01..2020-03".parse().unwrap();
        let (snaps, rep) = build_monthly_snapshots(&g, &accs, &[], &[], &[], range, SnapshotOptions::default()).unwrap();
        assert_eq!(snaps.len(), 3);
        assert_eq!(snaps[0].labels_count, vec![3, 0]);
        assert_eq!(snaps[0].labels_binary, vec![1, 0]);
        assert_eq!(snaps[2].labels_count, vec![0, 0]);
        assert_eq!((rep.accidents_used, rep.unmatched, rep.unknown_edge, rep.out_of_range), (4, 1, 1, 1));
        assert_eq!(snaps[0].node_features.get(0, NODE_WEATHER_MASK), 1.0);
        assert_eq!(snaps[0].edge_features.get(1, EDGE_AADT_MASK), 1.0);
        assert_eq!(rep.nodes_without_embedding, 3);
    }

    #[test]
    fn reject_policy_fails_on_gap() {
        let g = small();
        let range = MonthRange::years(2020, 2020).unwrap();
        let opts = SnapshotOptions { weather_policy: WeatherPolicy::Reject, ..Default::default() };
        assert!(matches!(build_monthly_snapshots(&g, &[], &[], &[], &[], range, opts), Err(IngestError::WeatherMissing { .. })));
    }

    #[test]
    fn json_roundtrip_exact() {
        let g = small();
        let emb = vec![VisualEmbedding { node: NodeId(2), vector: vec![0.1 + 0.2, -1e-17] }];
        let range = MonthRange::years(2020, 2020).unwrap();
        let (snaps, _) = build_monthly_snapshots(&g, &[acc(2020, 5, Some(11))], &[], &[], &emb, range, SnapshotOptions::default()).unwrap();
        for s in &snaps {
            assert_eq!(&MonthlySnapshot::from_json(&s.to_json().unwrap()).unwrap(), s);
        }
        let yearly = aggregate_yearly(&snaps);
        assert_eq!(yearly.len(), 1);
        assert_eq!(yearly[0].labels_count, vec![0, 1]);
        assert_eq!(yearly[0].month, None);
    }

    #[test]
    fn range_parsing() {
        let r: MonthRange = "2019-11..2020-02".parse().unwrap();
        assert_eq!(r.months().len(), 4);
        assert!("2020-02..2019-11".parse::<MonthRange>().is_err());
        assert!("2020-13..2021-01".parse::<MonthRange>().is_err());
    }
}
