//! Record parsing, monthly snapshot assembly, chronological splits, and
//! feature normalization.

pub mod layout;
mod normalize;
mod parse;
mod snapshot;
mod split;

pub use layout::{drop_group, ColumnKind, FeatureGroup, D_EDGE, D_NODE};
pub use normalize::{normalize_features, ColStat, NormStats};
pub use parse::{
    parse_accidents, parse_embeddings, parse_volume, parse_weather, read_accidents, read_embeddings, read_volume,
    read_weather, weather_from_stations, write_accidents, write_embeddings, write_volume, write_weather,
    AccidentRecord, ParseOptions, Parsed, RowError, TrafficVolumeRecord, VisualEmbedding, WeatherObservation,
};
pub use snapshot::{
    aggregate_yearly, build_monthly_snapshots, load_snapshots, save_snapshots, volume_coverage, BuildReport,
    MonthRange, MonthlySnapshot, SnapshotOptions, WeatherPolicy, YearMonth,
};
pub use split::{temporal_split, GuardedSplit, SplitSpec, Splits, YearRange};

use crate::error::ErrorKind;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{file}: expected header {expected:?}, found {found:?}")]
    Header { file: String, expected: String, found: String },
    #[error("{file}: line {line}: {msg}")]
    Row { file: String, line: u64, msg: String },
    #[error("{file}: {count} malformed rows, first at line {first_line}: {first_msg}")]
    Rows { file: String, count: usize, first_line: u64, first_msg: String },
    #[error("duplicate {0}")]
    Duplicate(String),
    #[error("{what}: expected dimension {expected}, found {found}")]
    Dimension { what: String, expected: usize, found: usize },
    #[error("invalid month range: {0}")]
    BadRange(String),
    #[error("invalid split: {0}")]
    BadSplit(String),
    #[error("split {0:?} contains no snapshots")]
    EmptySplit(&'static str),
    #[error("no training snapshots to fit normalization on")]
    EmptyTrain,
    #[error("weather missing for node {node} in {year}-{month:02} and policy is reject")]
    WeatherMissing { node: u64, year: i32, month: u8 },
    #[error("snapshot serialization: {0}")]
    Json(String),
    #[error("unknown feature group {0:?} (expected visual, weather, road_network or volume)")]
    UnknownGroup(String),
    #[error("unknown node id {0} in {1}")]
    UnknownNode(u64, &'static str),
}

impl IngestError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            IngestError::BadSplit(_) | IngestError::BadRange(_) | IngestError::UnknownGroup(_) => ErrorKind::Usage,
            _ => ErrorKind::Data,
        }
    }
}
