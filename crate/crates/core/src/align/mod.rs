//! Geospatial matching of accident points to edges and of nodes to weather
//! stations.
//!
//! An accident at `c` is assigned to the edge `(a, b)` maximizing
//! `D(a, b) - (D(a, c) + D(b, c))`. The score is never positive and is zero
//! when `c` lies metrically between the endpoints. Ties go to the lowest
//! edge id.

mod index;

use serde::{Deserialize, Serialize};

pub use index::EdgeIndex;

use crate::graph::{EdgeId, GeoPoint, RoadGraph};
use crate::par::Exec;

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, thiserror::Error)]
pub enum AlignError {
    #[error("cannot match against a graph with no edges")]
    EmptyGraph,
    #[error("station list is empty")]
    NoStations,
    #[error("unknown metric {0:?} (expected euclidean_deg or haversine_m)")]
    UnknownMetric(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Degrees, longitude scaled by the cosine of the mean latitude.
    #[default]
    EuclideanDeg,
    /// Great-circle meters.
    HaversineM,
}

impl Metric {
    pub fn distance(self, a: GeoPoint, b: GeoPoint) -> f64 {
        match self {
            Metric::EuclideanDeg => euclidean_deg(a, b),
            Metric::HaversineM => haversine_m(a, b),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::EuclideanDeg => "euclidean_deg",
            Metric::HaversineM => "haversine_m",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = AlignError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euclidean_deg" | "euclidean" => Ok(Metric::EuclideanDeg),
            "haversine_m" | "haversine" => Ok(Metric::HaversineM),
            _ => Err(AlignError::UnknownMetric(s.to_string())),
        }
    }
}

/// Equirectangular-corrected planar distance in degrees.
pub fn euclidean_deg(a: GeoPoint, b: GeoPoint) -> f64 {
    let dlat = a.lat() - b.lat();
    let mean = (0.5 * (a.lat() + b.lat())).to_radians();
    let dlon = (a.lon() - b.lon()) * mean.cos();
    (dlat * dlat + dlon * dlon).sqrt()
}

/// Great-circle distance on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let (p1, p2) = (a.lat().to_radians(), b.lat().to_radians());
    let dp = p2 - p1;
    let dl = (b.lon() - a.lon()).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Score of assigning `c` to the edge with endpoints `a`, `b`.
///
/// Positive values can only come from rounding or from the latitude
/// correction of [`euclidean_deg`], which is not exactly a metric; they are
/// clamped to zero.
pub fn edge_score(metric: Metric, a: GeoPoint, b: GeoPoint, c: GeoPoint) -> f64 {
    let raw = metric.distance(a, b) - (metric.distance(a, c) + metric.distance(b, c));
    raw.min(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeMatch {
    pub edge: EdgeId,
    /// Position of the edge in graph order.
    pub position: usize,
    pub score: f64,
}

/// `true` if `(score, id)` beats the incumbent under max-score,
/// lowest-id ordering.
pub(crate) fn better(score: f64, id: EdgeId, best: Option<&EdgeMatch>) -> bool {
    match best {
        None => true,
        Some(b) => score > b.score || (score == b.score && id < b.edge),
    }
}

/// Exhaustive matching over every edge.
pub fn match_accident_full_scan(c: GeoPoint, g: &RoadGraph, metric: Metric) -> Result<EdgeMatch, AlignError> {
    let mut best: Option<EdgeMatch> = None;
    for k in 0..g.edge_count() {
        let (a, b) = g.endpoints(k);
        let score = edge_score(metric, g.nodes()[a].point, g.nodes()[b].point, c);
        let id = g.edges()[k].id;
        if better(score, id, best.as_ref()) {
            best = Some(EdgeMatch { edge: id, position: k, score });
        }
    }
    best.ok_or(AlignError::EmptyGraph)
}

/// Matches one accident point, building a throwaway index. Use
/// [`EdgeIndex`] directly when matching many points.
pub fn match_accident_to_edge(c: GeoPoint, g: &RoadGraph, metric: Metric) -> Result<EdgeMatch, AlignError> {
    EdgeIndex::build(g, metric)?.best_edge(c)
}

/// Matches every point, preserving input order.
pub fn match_all(points: &[GeoPoint], g: &RoadGraph, metric: Metric, exec: Exec) -> Result<Vec<EdgeMatch>, AlignError> {
    let index = EdgeIndex::build(g, metric)?;
    exec.map_slice(points, |&p| index.best_edge(p)).into_iter().collect()
}

/// Index of the nearest station, lowest index on ties.
pub fn nearest_station(p: GeoPoint, stations: &[GeoPoint], metric: Metric) -> Result<usize, AlignError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in stations.iter().enumerate() {
        let d = metric.distance(p, s);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i).ok_or(AlignError::NoStations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{NodeId, RoadEdge, RoadNode, RoadType};

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn euclidean_examples() {
        assert_eq!(euclidean_deg(pt(10.0, 20.0), pt(10.0, 20.0)), 0.0);
        assert!((euclidean_deg(pt(0.0, 0.0), pt(0.0, 1.0)) - 1.0).abs() < 1e-15);
        assert!((euclidean_deg(pt(60.0, 0.0), pt(60.0, 1.0)) - 0.5).abs() < 1e-12);
        let (a, b) = (pt(38.2, -75.1), pt(39.7, -74.3));
        assert_eq!(euclidean_deg(a, b), euclidean_deg(b, a));
    }

    #[test]
    fn haversine_examples() {
        assert_eq!(haversine_m(pt(42.0, -71.0), pt(42.0, -71.0)), 0.0);
        let d = haversine_m(pt(0.0, 0.0), pt(0.0, 180.0));
        assert!((d - std::f64::consts::PI * EARTH_RADIUS_M).abs() / d < 1e-6);
        let d2 = haversine_m(pt(45.0, 10.0), pt(-45.0, -170.0));
        assert!((d2 - std::f64::consts::PI * EARTH_RADIUS_M).abs() / d2 < 1e-6);
    }

    fn line_graph() -> RoadGraph {
        let nodes = vec![
            RoadNode { id: NodeId(1), point: pt(0.0, 0.0) },
            RoadNode { id: NodeId(2), point: pt(0.0, 0.02) },
            RoadNode { id: NodeId(3), point: pt(0.01, 0.02) },
        ];
        let edges = vec![
            RoadEdge::new(EdgeId(5), NodeId(1), NodeId(2), true, RoadType::Road, 10.0).unwrap(),
            RoadEdge::new(EdgeId(3), NodeId(2), NodeId(3), true, RoadType::Road, 10.0).unwrap(),
        ];
        RoadGraph::build(nodes, edges).unwrap()
    }

    #[test]
    fn point_on_segment_scores_zero() {
        let g = line_graph();
        let m = match_accident_to_edge(pt(0.0, 0.01), &g, Metric::EuclideanDeg).unwrap();
        assert_eq!(m.edge, EdgeId(5));
        assert_eq!(m.score, 0.0);
    }

    #[test]
    fn shared_endpoint_tie_goes_to_lowest_id() {
        // the shared node lies on both segments
        let g = line_graph();
        let m = match_accident_full_scan(pt(0.0, 0.02), &g, Metric::EuclideanDeg).unwrap();
        assert_eq!(m.edge, EdgeId(3));
        assert_eq!(match_accident_to_edge(pt(0.0, 0.02), &g, Metric::EuclideanDeg).unwrap().edge, EdgeId(3));
    }

    #[test]
    fn single_edge_always_matches() {
        let nodes = vec![RoadNode { id: NodeId(1), point: pt(0.0, 0.0) }, RoadNode { id: NodeId(2), point: pt(1.0, 1.0) }];
        let edges = vec![RoadEdge::new(EdgeId(9), NodeId(1), NodeId(2), true, RoadType::Road, 1.0).unwrap()];
        let g = RoadGraph::build(nodes, edges).unwrap();
        for c in [pt(50.0, 50.0), pt(-10.0, 3.0), pt(0.5, 0.5)] {
            for metric in [Metric::EuclideanDeg, Metric::HaversineM] {
                let m = match_accident_to_edge(c, &g, metric).unwrap();
                assert_eq!(m.edge, EdgeId(9));
                assert!(m.score <= 0.0);
            }
        }
    }

    #[test]
    fn empty_graph_errors() {
        let g = RoadGraph::empty();
        assert!(matches!(match_accident_to_edge(pt(0.0, 0.0), &g, Metric::EuclideanDeg), Err(AlignError::EmptyGraph)));
    }

    #[test]
    fn nearest_station_rules() {
        let st = vec![pt(0.0, 0.0), pt(1.0, 1.0), pt(2.0, 2.0), pt(3.0, 3.0)];
        assert_eq!(nearest_station(pt(3.0, 3.0), &st, Metric::EuclideanDeg).unwrap(), 3);
        let eq = vec![pt(0.0, 1.0), pt(0.0, -1.0)];
        assert_eq!(nearest_station(pt(0.0, 0.0), &eq, Metric::EuclideanDeg).unwrap(), 0);
        assert!(nearest_station(pt(0.0, 0.0), &[], Metric::HaversineM).is_err());
    }
}
