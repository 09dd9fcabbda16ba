//! Z-scoring with statistics from the training split only.

use serde::{Deserialize, Serialize};

use super::layout::{edge_column_kind, node_column_kind, ColumnKind};
use super::{IngestError, MonthlySnapshot};
use crate::nn::Tensor;

/// Below this population std a column is only centered.
pub const MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColStat {
    pub kind: ColumnKind,
    pub mean: f64,
    pub std: f64,
}

impl ColStat {
    fn apply(&self, v: f64) -> f64 {
        match self.kind {
            ColumnKind::Binary => v,
            ColumnKind::Continuous { .. } if self.std < MIN_STD => v - self.mean,
            ColumnKind::Continuous { .. } => (v - self.mean) / self.std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub node: Vec<ColStat>,
    pub edge: Vec<ColStat>,
    pub visual: Vec<ColStat>,
}

fn fit_matrix<'a>(mats: impl Iterator<Item = &'a Tensor> + Clone, cols: usize, kind: impl Fn(usize) -> ColumnKind) -> Vec<ColStat> {
    (0..cols)
        .map(|c| {
            let k = kind(c);
            let ColumnKind::Continuous { mask } = k else {
                return ColStat { kind: k, mean: 0.0, std: 1.0 };
            };
            let vals = mats.clone().flat_map(|t| (0..t.rows()).filter(move |&r| mask.is_none_or(|m| t.get(r, m) == 0.0)).map(move |r| t.get(r, c)));
            let (mut n, mut sum) = (0usize, 0.0);
            for v in vals.clone() {
                n += 1;
                sum += v;
            }
            if n == 0 {
                return ColStat { kind: k, mean: 0.0, std: 0.0 };
            }
            let mean = sum / n as f64;
            let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            ColStat { kind: k, mean, std: var.sqrt() }
        })
        .collect()
}

fn apply_matrix(t: &mut Tensor, stats: &[ColStat], what: &str) -> Result<(), IngestError> {
    if t.cols() != stats.len() {
        return Err(IngestError::Dimension { what: format!("{what} columns"), expected: stats.len(), found: t.cols() });
    }
    for r in 0..t.rows() {
        for (c, s) in stats.iter().enumerate() {
            let masked = matches!(s.kind, ColumnKind::Continuous { mask: Some(m) } if t.get(r, m) != 0.0);
            let v = if masked { 0.0 } else { s.apply(t.get(r, c)) };
            t.set(r, c, v);
        }
    }
    Ok(())
}

impl NormStats {
    /// Statistics over every row of every training snapshot. Masked cells
    /// are excluded.
    pub fn fit(train: &[MonthlySnapshot]) -> Result<Self, IngestError> {
        let first = train.first().ok_or(IngestError::EmptyTrain)?;
        let (dn, de, dv) = (first.node_features.cols(), first.edge_features.cols(), first.visual_features.cols());
        for s in train {
            for (what, want, got) in [("node", dn, s.node_features.cols()), ("edge", de, s.edge_features.cols()), ("visual", dv, s.visual_features.cols())] {
                if want != got {
                    return Err(IngestError::Dimension { what: format!("{what} columns of snapshot {}", s.name()), expected: want, found: got });
                }
            }
        }
        Ok(NormStats {
            node: fit_matrix(train.iter().map(|s| &s.node_features), dn, node_column_kind),
            edge: fit_matrix(train.iter().map(|s| &s.edge_features), de, edge_column_kind),
            visual: fit_matrix(train.iter().map(|s| &s.visual_features), dv, |_| ColumnKind::Continuous { mask: None }),
        })
    }

    pub fn apply(&self, s: &mut MonthlySnapshot) -> Result<(), IngestError> {
        apply_matrix(&mut s.node_features, &self.node, "node feature")?;
        apply_matrix(&mut s.edge_features, &self.edge, "edge feature")?;
        apply_matrix(&mut s.visual_features, &self.visual, "visual feature")
    }

    pub fn apply_all(&self, snaps: &mut [MonthlySnapshot]) -> Result<(), IngestError> {
        snaps.iter_mut().try_for_each(|s| self.apply(s))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        serde_json::from_str(text).map_err(|e| IngestError::Json(e.to_string()))
    }
}

/// Fits on `train` and normalizes all three splits with the same stats.
pub fn normalize_features(
    mut train: Vec<MonthlySnapshot>,
    mut valid: Vec<MonthlySnapshot>,
    mut test: Vec<MonthlySnapshot>,
) -> Result<(Vec<MonthlySnapshot>, Vec<MonthlySnapshot>, Vec<MonthlySnapshot>, NormStats), IngestError> {
    let stats = NormStats::fit(&train)?;
    stats.apply_all(&mut train)?;
    stats.apply_all(&mut valid)?;
    stats.apply_all(&mut test)?;
    Ok((train, valid, test, stats))
}

#[cfg(test)]
mod tests {
    use super::super::layout::{D_EDGE, D_NODE, NODE_LAT, NODE_WEATHER, NODE_WEATHER_MASK};
    use super::*;

    fn snap(lat: f64, tavg: Option<f64>) -> MonthlySnapshot {
        let mut nodes = Tensor::zeros(1, D_NODE);
        nodes.set(0, NODE_LAT, lat);
        match tavg {
            Some(t) => nodes.set(0, NODE_WEATHER, t),
            None => nodes.set(0, NODE_WEATHER_MASK, 1.0),
        }
        MonthlySnapshot {
            year: 2020,
            month: Some(1),
            node_features: nodes,
            visual_features: Tensor::zeros(1, 2),
            edge_features: Tensor::zeros(0, D_EDGE),
            labels_count: vec![],
            labels_binary: vec![],
        }
    }

    #[test]
    fn arithmetic_and_constant_columns() {
        // lat values 8 and 12: mean 10, population std 2
        let train = vec![snap(8.0, Some(1.0)), snap(12.0, None)];
        let stats = NormStats::fit(&train).unwrap();
        let mut s = snap(14.0, None);
        stats.apply(&mut s).unwrap();
        assert_eq!(s.node_features.get(0, NODE_LAT), 2.0);
        // masked cell stays zero, constant column collapses to zero
        assert_eq!(s.node_features.get(0, NODE_WEATHER), 0.0);
        assert_eq!(s.node_features.get(0, NODE_WEATHER_MASK), 1.0);
        assert!(NormStats::fit(&[]).is_err());
    }
}
