//! Edge-level traffic accident risk modelling on road networks.
//!
//! The crate covers the whole pipeline: building a directed road graph,
//! snapping accident points onto edges, assembling monthly feature/label
//! snapshots, training a message-passing encoder with optional fusion of
//! precomputed visual embeddings, and estimating treatment effects on the
//! treated (ATT) in the learned embedding space.
//!
//! Data-parallel loops (centrality sources, accident matching, treated-unit
//! matching) go through [`par::Exec`]; with the `parallel` feature disabled
//! every loop runs sequentially and produces bit-identical results.

pub mod align;
pub mod causal;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod par;
pub mod synth;
pub mod train;

pub use error::{Error, ErrorKind, Result};
pub use graph::{EdgeId, GeoPoint, NodeId, RoadEdge, RoadGraph, RoadNode, RoadType};
