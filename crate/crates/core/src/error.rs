//! Crate-wide error type.
//!
//! Each module owns a focused error enum; [`Error`] wraps them and tags
//! every failure with the module and operation it came from so the CLI can
//! report provenance and choose an exit code.

use std::fmt;

use crate::{align::AlignError, causal::CausalError, gnn::GnnError, graph::GraphError, ingest::IngestError};
use crate::{metrics::MetricError, nn::NnError, synth::SynthError, train::TrainError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used for CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numeric => 3,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Causal(#[from] CausalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub fn module(&self) -> &'static str {
        match self {
            Error::Graph(_) => "graph",
            Error::Ingest(_) => "ingest",
            Error::Align(_) => "align",
            Error::Nn(_) => "nn",
            Error::Gnn(_) => "gnn",
            Error::Train(_) => "train",
            Error::Metric(_) => "metrics",
            Error::Causal(_) => "causal",
            Error::Synth(_) => "synth",
            Error::Io(_) => "io",
            Error::Usage(_) => "cli",
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Nn(e) => e.kind(),
            Error::Gnn(e) => e.kind(),
            Error::Ingest(e) => e.kind(),
            Error::Causal(e) => e.kind(),
            Error::Train(e) => e.kind(),
            Error::Usage(_) => ErrorKind::Usage,
            Error::Metric(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}

/// Displays an error as `module: message`.
pub struct WithModule<'a>(pub &'a Error);

impl fmt::Display for WithModule<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.0.module(), self.0)
    }
}
