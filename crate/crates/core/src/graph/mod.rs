//! Directed road-network graph.
//!
//! Nodes are geolocated intersections or critical points; edges are typed,
//! measured road segments. The graph is immutable once built and keeps
//! both out- and in-adjacency as edge-index lists in edge order.

mod centrality;
mod contract;
pub mod io;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use centrality::{betweenness_centrality, betweenness_scores, betweenness_scores_with};
pub use contract::contract_chains;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("edge {edge} references missing node {node}")]
    DanglingEndpoint { edge: EdgeId, node: NodeId },
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("duplicate edge id {0}")]
    DuplicateEdge(EdgeId),
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("invalid coordinate lat={lat} lon={lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("edge {edge} has invalid length {length}")]
    InvalidLength { edge: EdgeId, length: f64 },
    #[error("edge {0} starts and ends at the same node but is not flagged as a loop")]
    UnflaggedLoop(EdgeId),
    #[error("unknown road type {0:?}")]
    UnknownRoadType(String),
    #[error("{file}: line {line}: {msg}")]
    Parse { file: String, line: u64, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A latitude/longitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GraphError> {
        let ok = lat.is_finite()
            && lon.is_finite()
            && (-90.0..=90.0).contains(&lat)
            && (-180.0..=180.0).contains(&lon);
        if ok {
            Ok(GeoPoint { lat, lon })
        } else {
            Err(GraphError::InvalidCoordinate { lat, lon })
        }
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// The fourteen road categories of the network export.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RoadType {
    LivingStreet,
    Motorway,
    MotorwayLink,
    Primary,
    PrimaryLink,
    Residential,
    Road,
    Secondary,
    SecondaryLink,
    Tertiary,
    TertiaryLink,
    Trailhead,
    Trunk,
    TrunkLink,
}

impl RoadType {
    pub const COUNT: usize = 14;

    pub const ALL: [RoadType; 14] = [
        RoadType::LivingStreet,
        RoadType::Motorway,
        RoadType::MotorwayLink,
        RoadType::Primary,
        RoadType::PrimaryLink,
        RoadType::Residential,
        RoadType::Road,
        RoadType::Secondary,
        RoadType::SecondaryLink,
        RoadType::Tertiary,
        RoadType::TertiaryLink,
        RoadType::Trailhead,
        RoadType::Trunk,
        RoadType::TrunkLink,
    ];

    /// Canonical spelling, as written to edge tables.
    pub fn name(self) -> &'static str {
        match self {
            RoadType::LivingStreet => "living street",
            RoadType::Motorway => "motorway",
            RoadType::MotorwayLink => "motorway link",
            RoadType::Primary => "primary",
            RoadType::PrimaryLink => "primary link",
            RoadType::Residential => "residential",
            RoadType::Road => "road",
            RoadType::Secondary => "secondary",
            RoadType::SecondaryLink => "secondary link",
            RoadType::Tertiary => "tertiary",
            RoadType::TertiaryLink => "tertiary link",
            RoadType::Trailhead => "trailhead",
            RoadType::Trunk => "trunk",
            RoadType::TrunkLink => "trunk link",
        }
    }

    /// Position in [`RoadType::ALL`]; used as the one-hot column.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for RoadType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RoadType {
    type Err = GraphError;

    /// Case-insensitive; underscores and runs of whitespace count as a
    /// single space (`Motorway_Link` and `motorway  link` both parse).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s
            .replace('_', " ")
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .to_lowercase();
        RoadType::ALL
            .into_iter()
            .find(|t| t.name() == norm)
            .ok_or_else(|| GraphError::UnknownRoadType(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadNode {
    pub id: NodeId,
    pub point: GeoPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadEdge {
    pub id: EdgeId,
    pub start: NodeId,
    pub end: NodeId,
    pub one_way: bool,
    pub road_type: RoadType,
    pub length_m: f64,
    #[serde(default)]
    pub is_loop: bool,
}

impl RoadEdge {
    pub fn new(
        id: EdgeId,
        start: NodeId,
        end: NodeId,
        one_way: bool,
        road_type: RoadType,
        length_m: f64,
    ) -> Result<Self, GraphError> {
        if start == end {
            return Err(GraphError::UnflaggedLoop(id));
        }
        Self::checked(id, start, end, one_way, road_type, length_m, false)
    }

    /// An edge that starts and ends at `node`.
    pub fn new_loop(
        id: EdgeId,
        node: NodeId,
        one_way: bool,
        road_type: RoadType,
        length_m: f64,
    ) -> Result<Self, GraphError> {
        Self::checked(id, node, node, one_way, road_type, length_m, true)
    }

    fn checked(
        id: EdgeId,
        start: NodeId,
        end: NodeId,
        one_way: bool,
        road_type: RoadType,
        length_m: f64,
        is_loop: bool,
    ) -> Result<Self, GraphError> {
        if !(length_m.is_finite() && length_m > 0.0) {
            return Err(GraphError::InvalidLength { edge: id, length: length_m });
        }
        Ok(RoadEdge { id, start, end, one_way, road_type, length_m, is_loop })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Degree {
    pub in_degree: usize,
    pub out_degree: usize,
    pub total: usize,
}

/// Directed road graph. Edge endpoints are resolved to node positions at
/// build time; adjacency lists hold edge positions in edge order.
#[derive(Debug, Clone)]
pub struct RoadGraph {
    nodes: Vec<RoadNode>,
    edges: Vec<RoadEdge>,
    index: HashMap<NodeId, usize>,
    ends: Vec<(usize, usize)>,
    out_adj: Vec<Vec<usize>>,
    in_adj: Vec<Vec<usize>>,
}

impl RoadGraph {
    pub fn build(nodes: Vec<RoadNode>, edges: Vec<RoadEdge>) -> Result<Self, GraphError> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id, i).is_some() {
                return Err(GraphError::DuplicateNode(n.id));
            }
        }
        let mut edge_ids = HashMap::with_capacity(edges.len());
        let mut ends = Vec::with_capacity(edges.len());
        let mut out_adj = vec![Vec::new(); nodes.len()];
        let mut in_adj = vec![Vec::new(); nodes.len()];
        for (k, e) in edges.iter().enumerate() {
            if edge_ids.insert(e.id, k).is_some() {
                return Err(GraphError::DuplicateEdge(e.id));
            }
            if e.start == e.end && !e.is_loop {
                return Err(GraphError::UnflaggedLoop(e.id));
            }
            let lookup = |id: NodeId| {
                index
                    .get(&id)
                    .copied()
                    .ok_or(GraphError::DanglingEndpoint { edge: e.id, node: id })
            };
            let (a, b) = (lookup(e.start)?, lookup(e.end)?);
            ends.push((a, b));
            out_adj[a].push(k);
            in_adj[b].push(k);
        }
        Ok(RoadGraph { nodes, edges, index, ends, out_adj, in_adj })
    }

    pub fn empty() -> Self {
        RoadGraph::build(Vec::new(), Vec::new()).expect("empty graph is valid")
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[RoadNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[RoadEdge] {
        &self.edges
    }

    pub fn node_index(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    /// `(start, end)` node positions of the edge at position `k`.
    pub fn endpoints(&self, k: usize) -> (usize, usize) {
        self.ends[k]
    }

    pub fn out_edges(&self, v: usize) -> &[usize] {
        &self.out_adj[v]
    }

    pub fn in_edges(&self, v: usize) -> &[usize] {
        &self.in_adj[v]
    }

    pub fn node_degree(&self, id: NodeId) -> Result<Degree, GraphError> {
        let v = self.node_index(id).ok_or(GraphError::UnknownNode(id))?;
        Ok(self.degree_at(v))
    }

    pub fn degree_at(&self, v: usize) -> Degree {
        let (i, o) = (self.in_adj[v].len(), self.out_adj[v].len());
        Degree { in_degree: i, out_degree: o, total: i + o }
    }

    /// Node and edge sequences, in graph order.
    pub fn into_parts(self) -> (Vec<RoadNode>, Vec<RoadEdge>) {
        (self.nodes, self.edges)
    }

    pub fn average_edge_length(&self) -> f64 {
        if self.edges.is_empty() {
            return 0.0;
        }
        self.edges.iter().map(|e| e.length_m).sum::<f64>() / self.edges.len() as f64
    }

    /// Edges per unordered node pair, `m / C(n, 2)`.
    pub fn density(&self) -> f64 {
        let n = self.nodes.len() as f64;
        if n < 2.0 {
            return 0.0;
        }
        self.edges.len() as f64 / (n * (n - 1.0) / 2.0)
    }
}
