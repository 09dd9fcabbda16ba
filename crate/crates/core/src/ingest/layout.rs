//! Column layout of the node and edge feature matrices.
//!
//! Node features (`D_NODE` columns):
//!
//! | cols  | content                                   | group        |
//! |-------|-------------------------------------------|--------------|
//! | 0-1   | lat, lon                                  | road_network |
//! | 2-3   | in-degree, out-degree                     | road_network |
//! | 4     | betweenness                               | road_network |
//! | 5-10  | tavg, tmin, tmax, prcp, wspd, pres        | weather      |
//! | 11-16 | missing flag for each weather column      | weather      |
//!
//! Edge features (`D_EDGE` columns):
//!
//! | cols  | content                                   | group        |
//! |-------|-------------------------------------------|--------------|
//! | 0     | length_m                                  | road_network |
//! | 1-14  | road type one-hot, [`RoadType::ALL`] order | road_network |
//! | 15    | one_way                                   | road_network |
//! | 16    | AADT                                      | volume       |
//! | 17    | AADT missing flag                         | volume       |
//!
//! Visual embeddings live in their own matrix and form the `visual` group.
//!
//! [`RoadType::ALL`]: crate::graph::RoadType::ALL

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{IngestError, MonthlySnapshot};
use crate::graph::RoadType;

pub const D_NODE: usize = 17;
pub const D_EDGE: usize = 18;

pub const NODE_LAT: usize = 0;
pub const NODE_LON: usize = 1;
pub const NODE_IN_DEG: usize = 2;
pub const NODE_OUT_DEG: usize = 3;
pub const NODE_BETWEENNESS: usize = 4;
pub const NODE_WEATHER: usize = 5;
pub const NODE_WEATHER_MASK: usize = 11;
pub const WEATHER_FIELDS: [&str; 6] = ["tavg", "tmin", "tmax", "prcp", "wspd", "pres"];
pub const PRCP: usize = NODE_WEATHER + 3;
pub const PRCP_MASK: usize = NODE_WEATHER_MASK + 3;

pub const EDGE_LENGTH: usize = 0;
pub const EDGE_ROAD_TYPE: usize = 1;
pub const EDGE_ONE_WAY: usize = 1 + RoadType::COUNT;
pub const EDGE_AADT: usize = EDGE_ONE_WAY + 1;
pub const EDGE_AADT_MASK: usize = EDGE_AADT + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    /// Z-scored. Rows whose mask column is set are excluded from the
    /// statistics and stay at zero.
    Continuous { mask: Option<usize> },
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    Visual,
    Weather,
    RoadNetwork,
    Volume,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 4] = [FeatureGroup::Visual, FeatureGroup::Weather, FeatureGroup::RoadNetwork, FeatureGroup::Volume];

    pub fn name(self) -> &'static str {
        match self {
            FeatureGroup::Visual => "visual",
            FeatureGroup::Weather => "weather",
            FeatureGroup::RoadNetwork => "road_network",
            FeatureGroup::Volume => "volume",
        }
    }
}

impl fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureGroup {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FeatureGroup::ALL
            .into_iter()
            .find(|g| g.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| IngestError::UnknownGroup(s.to_string()))
    }
}

pub fn node_column_kind(c: usize) -> ColumnKind {
    match c {
        NODE_WEATHER..NODE_WEATHER_MASK => ColumnKind::Continuous { mask: Some(c + 6) },
        NODE_WEATHER_MASK..D_NODE => ColumnKind::Binary,
        _ => ColumnKind::Continuous { mask: None },
    }
}

pub fn edge_column_kind(c: usize) -> ColumnKind {
    match c {
        EDGE_LENGTH => ColumnKind::Continuous { mask: None },
        EDGE_AADT => ColumnKind::Continuous { mask: Some(EDGE_AADT_MASK) },
        _ => ColumnKind::Binary,
    }
}

pub fn node_column_names() -> Vec<String> {
    let mut v: Vec<String> = ["lat", "lon", "in_degree", "out_degree", "betweenness"].iter().map(|s| s.to_string()).collect();
    v.extend(WEATHER_FIELDS.iter().map(|s| s.to_string()));
    v.extend(WEATHER_FIELDS.iter().map(|s| format!("{s}_missing")));
    v
}

pub fn edge_column_names() -> Vec<String> {
    let mut v = vec!["length_m".to_string()];
    v.extend(RoadType::ALL.iter().map(|t| format!("type_{}", t.name().replace(' ', "_"))));
    v.extend(["one_way", "aadt", "aadt_missing"].iter().map(|s| s.to_string()));
    v
}

/// Removes a feature group in place: continuous columns become zero and
/// missing flags are set.
pub fn drop_group(s: &mut MonthlySnapshot, group: FeatureGroup) {
    match group {
        FeatureGroup::Visual => s.visual_features.data_mut().fill(0.0),
        FeatureGroup::Weather => {
            for r in 0..s.node_features.rows() {
                let row = s.node_features.row_mut(r);
                row[NODE_WEATHER..NODE_WEATHER_MASK].fill(0.0);
                row[NODE_WEATHER_MASK..D_NODE].fill(1.0);
            }
        }
        FeatureGroup::RoadNetwork => {
            for r in 0..s.node_features.rows() {
                s.node_features.row_mut(r)[..NODE_WEATHER].fill(0.0);
            }
            for r in 0..s.edge_features.rows() {
                s.edge_features.row_mut(r)[..EDGE_AADT].fill(0.0);
            }
        }
        FeatureGroup::Volume => {
            for r in 0..s.edge_features.rows() {
                let row = s.edge_features.row_mut(r);
                row[EDGE_AADT] = 0.0;
                row[EDGE_AADT_MASK] = 1.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_match_dimensions() {
        assert_eq!(node_column_names().len(), D_NODE);
        assert_eq!(edge_column_names().len(), D_EDGE);
        assert_eq!(EDGE_AADT_MASK, D_EDGE - 1);
        assert_eq!(node_column_kind(PRCP), ColumnKind::Continuous { mask: Some(PRCP_MASK) });
        assert_eq!("Road_Network".parse::<FeatureGroup>().unwrap(), FeatureGroup::RoadNetwork);
        assert!("satellite".parse::<FeatureGroup>().is_err());
    }
}
