//! Ranking and regression metrics.
//!
//! AUROC counts, over every positive/negative pair, 2 when the positive
//! scores higher and 1 on a tie, then divides by `2 |S+| |S-|`. The rank
//! implementation computes the same integer numerator in `O(n log n)`, so
//! it agrees with the pairwise definition bit for bit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricError {
    #[error("AUROC needs both classes, got {positives} positives and {negatives} negatives")]
    MissingClass { positives: usize, negatives: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("metric over an empty sample")]
    Empty,
    #[error("non-finite score at position {0}")]
    NonFinite(usize),
}

fn check(scores: &[f64], n_labels: usize) -> Result<(), MetricError> {
    if scores.len() != n_labels {
        return Err(MetricError::LengthMismatch { left: scores.len(), right: n_labels });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite(i));
    }
    Ok(())
}

/// Twice the Mann-Whitney U statistic together with `2 |S+| |S-|`.
pub fn auroc_counts(scores: &[f64], labels: &[u8]) -> Result<(u128, u128), MetricError> {
    check(scores, labels.len())?;
    let pos = labels.iter().filter(|&&l| l != 0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::MissingClass { positives: pos, negatives: neg });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut q) = (0u128, 0u128);
        // -0.0 and 0.0 compare equal but total_cmp separates them
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] != 0 {
                p += 1;
            } else {
                q += 1;
            }
            j += 1;
        }
        twice_u += 2 * p * neg_below + p * q;
        neg_below += q;
        i = j;
    }
    Ok((twice_u, 2 * pos as u128 * neg as u128))
}

pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    let (num, den) = auroc_counts(scores, labels)?;
    Ok(num as f64 / den as f64)
}

pub fn mae(preds: &[f64], targets: &[f64]) -> Result<f64, MetricError> {
    if preds.len() != targets.len() {
        return Err(MetricError::LengthMismatch { left: preds.len(), right: targets.len() });
    }
    if preds.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(preds.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    /// No predicted positives; precision reported as 0.
    pub precision_undefined: bool,
    /// No actual positives; recall reported as 0.
    pub recall_undefined: bool,
    /// Precision + recall is zero; F1 reported as 0.
    pub f1_undefined: bool,
}

/// Scores `>= threshold` count as predicted positives.
pub fn precision_recall_f1(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Prf, MetricError> {
    check(scores, labels.len())?;
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { (0.0, true) } else { (a as f64 / b as f64, false) };
    let (precision, precision_undefined) = ratio(tp, tp + fp);
    let (recall, recall_undefined) = ratio(tp, tp + fn_);
    let (f1, f1_undefined) = if precision + recall == 0.0 { (0.0, true) } else { (2.0 * precision * recall / (precision + recall), false) };
    Ok(Prf { precision, recall, f1, tp, fp, fn_, tn, precision_undefined, recall_undefined, f1_undefined })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub n: usize,
    pub positives: usize,
    /// `None` when the group lacks one of the classes.
    pub auroc: Option<f64>,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub auroc: Option<f64>,
    pub mae: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub positive_rate: f64,
    pub prf: Prf,
    pub per_road_type: BTreeMap<String, GroupMetrics>,
}

/// Builds a report from pooled predictions. `scores` are probabilities
/// for classification or predicted counts for regression; `counts` are
/// the observed counts. AUROC ranks `scores` against `counts > 0`.
pub fn evaluate_predictions(scores: &[f64], counts: &[u32], groups: &[&str]) -> Result<EvalReport, MetricError> {
    check(scores, counts.len())?;
    if groups.len() != scores.len() {
        return Err(MetricError::LengthMismatch { left: scores.len(), right: groups.len() });
    }
    if scores.is_empty() {
        return Err(MetricError::Empty);
    }
    let labels: Vec<u8> = counts.iter().map(|&c| u8::from(c > 0)).collect();
    let targets: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let auroc_or_none = |s: &[f64], l: &[u8]| match auroc(s, l) {
        Ok(v) => Ok(Some(v)),
        Err(MetricError::MissingClass { .. }) => Ok(None),
        Err(e) => Err(e),
    };
    let prf = precision_recall_f1(scores, &labels, 0.5)?;
    let mut by_group: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        by_group.entry(g.to_string()).or_default().push(i);
    }
    let mut per_road_type = BTreeMap::new();
    for (g, idx) in by_group {
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let l: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        let t: Vec<f64> = idx.iter().map(|&i| targets[i]).collect();
        per_road_type.insert(
            g,
            GroupMetrics { n: idx.len(), positives: l.iter().filter(|&&v| v == 1).count(), auroc: auroc_or_none(&s, &l)?, mae: mae(&s, &t)? },
        );
    }
    Ok(EvalReport {
        n: scores.len(),
        auroc: auroc_or_none(scores, &labels)?,
        mae: mae(scores, &targets)?,
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        positive_rate: labels.iter().filter(|&&v| v == 1).count() as f64 / labels.len() as f64,
        prf,
        per_road_type,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.7, 0.6, 0.2], &[1, 0, 1, 0]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 5], &[0, 1, 0, 1, 1]).unwrap(), 0.5);
        assert!(matches!(auroc(&[0.1, 0.2], &[1, 1]), Err(MetricError::MissingClass { .. })));
        assert!(auroc(&[f64::NAN, 0.2], &[1, 0]).is_err());
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[0.0, 4.0]).unwrap(), 1.5);
        assert_eq!(mae(&[3.0], &[3.0]).unwrap(), 0.0);
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn prf_edge_cases() {
        let p = precision_recall_f1(&[0.9, 0.1, 0.8, 0.2], &[1, 0, 1, 0], 0.5).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
        let all = precision_recall_f1(&[0.9, 0.6, 0.8, 0.7], &[1, 0, 0, 0], 0.5).unwrap();
        assert_eq!((all.recall, all.precision), (1.0, 0.25));
        let none = precision_recall_f1(&[0.9, 0.6], &[1, 0], 1.0 + f64::EPSILON).unwrap();
        assert!(none.precision_undefined && none.precision == 0.0);
        let zero = precision_recall_f1(&[0.9, 0.6], &[1, 0], 0.0).unwrap();
        assert_eq!(zero.recall, 1.0);
    }
}
