//! Treatment assignment and ATT estimators over per-edge embeddings.
//!
//! Three estimators share one frame type: nearest-neighbour matching in
//! embedding space, matching on a logistic propensity score, and doubly
//! robust estimation with ridge outcome models. Matching is with
//! replacement; ties between equidistant controls go to the lower index.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ErrorKind;
use crate::gnn::{FusionModel, GnnError, GraphPlan};
use crate::graph::{RoadGraph, RoadType};
use crate::ingest::layout::{PRCP, PRCP_MASK};
use crate::ingest::MonthlySnapshot;
use crate::nn::{fit_logistic, fit_ridge, NnError, Tensor};
use crate::par::Exec;

/// Ridge penalty of the outcome models.
pub const OUTCOME_RIDGE: f64 = 1e-3;
pub const DEFAULT_CLIP: (f64, f64) = (0.01, 0.99);
pub const DEFAULT_PRECIP_MM: f64 = 60.0;

#[derive(Debug, thiserror::Error)]
pub enum CausalError {
    #[error("invalid treatment spec: {0}")]
    Spec(String),
    #[error("treatment spec needs {0}, which the snapshot lacks")]
    MissingFeature(String),
    #[error("frame dimensions inconsistent: {0}")]
    Dimension(String),
    #[error("non-finite {what} at row {row}")]
    NonFinite { what: &'static str, row: usize },
    #[error("no treated units")]
    EmptyTreated,
    #[error("no control units")]
    EmptyControl,
    #[error("need {need} controls for matching, have {got}")]
    TooFewControls { need: usize, got: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
}

impl CausalError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            CausalError::Spec(_) | CausalError::Argument(_) => ErrorKind::Usage,
            CausalError::NonFinite { .. } => ErrorKind::Numeric,
            CausalError::Nn(e) => e.kind(),
            CausalError::Gnn(e) => e.kind(),
            _ => ErrorKind::Data,
        }
    }
}

/// Embeddings, binary treatment and outcome per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalFrame {
    embeddings: Tensor,
    treatment: Vec<u8>,
    outcome: Vec<f64>,
}

impl CausalFrame {
    pub fn new(embeddings: Tensor, treatment: Vec<u8>, outcome: Vec<f64>) -> Result<Self, CausalError> {
        let n = embeddings.rows();
        if treatment.len() != n || outcome.len() != n {
            return Err(CausalError::Dimension(format!("{n} embedding rows, {} treatments, {} outcomes", treatment.len(), outcome.len())));
        }
        if let Some(i) = treatment.iter().position(|&t| t > 1) {
            return Err(CausalError::Dimension(format!("treatment at row {i} is not 0/1")));
        }
        if let Some(row) = (0..n).find(|&r| embeddings.row(r).iter().any(|v| !v.is_finite())) {
            return Err(CausalError::NonFinite { what: "embedding", row });
        }
        if let Some(row) = outcome.iter().position(|v| !v.is_finite()) {
            return Err(CausalError::NonFinite { what: "outcome", row });
        }
        Ok(CausalFrame { embeddings, treatment, outcome })
    }

    pub fn len(&self) -> usize {
        self.outcome.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcome.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn treated(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.treatment[i] == 1).collect()
    }

    pub fn controls(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.treatment[i] == 0).collect()
    }

    fn both_classes(&self) -> Result<(Vec<usize>, Vec<usize>), CausalError> {
        let (t, c) = (self.treated(), self.controls());
        if t.is_empty() {
            return Err(CausalError::EmptyTreated);
        }
        if c.is_empty() {
            return Err(CausalError::EmptyControl);
        }
        Ok((t, c))
    }

    /// Rows stacked in order.
    pub fn concat(frames: &[CausalFrame]) -> Result<Self, CausalError> {
        let d = frames.first().map_or(0, CausalFrame::dim);
        let mut data = Vec::new();
        let (mut t, mut y) = (Vec::new(), Vec::new());
        for f in frames {
            if f.dim() != d {
                return Err(CausalError::Dimension(format!("embedding width {} vs {d}", f.dim())));
            }
            data.extend_from_slice(f.embeddings.data());
            t.extend_from_slice(&f.treatment);
            y.extend_from_slice(&f.outcome);
        }
        let rows = y.len();
        CausalFrame::new(Tensor::from_vec(rows, d, data)?, t, y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreatmentSpec {
    RoadTypeIs { types: BTreeSet<RoadType> },
    SeasonIs { months: BTreeSet<u8> },
    /// Mean precipitation of the edge's endpoints, in mm.
    PrecipitationGe { mm: f64 },
}

impl TreatmentSpec {
    pub fn validate(&self) -> Result<(), CausalError> {
        match self {
            TreatmentSpec::RoadTypeIs { types } if types.is_empty() => Err(CausalError::Spec("empty road type set".into())),
            TreatmentSpec::SeasonIs { months } if months.is_empty() => Err(CausalError::Spec("empty month set".into())),
            TreatmentSpec::SeasonIs { months } if months.iter().any(|m| !(1..=12).contains(m)) => {
                Err(CausalError::Spec(format!("months must be 1..=12, got {months:?}")))
            }
            TreatmentSpec::PrecipitationGe { mm } if !mm.is_finite() => Err(CausalError::Spec("precipitation threshold must be finite".into())),
            _ => Ok(()),
        }
    }

    /// Winter, December to February.
    pub fn winter() -> Self {
        TreatmentSpec::SeasonIs { months: [12, 1, 2].into() }
    }
}

impl fmt::Display for TreatmentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreatmentSpec::RoadTypeIs { types } => {
                let names: Vec<_> = types.iter().map(|t| t.name().replace(' ', "_")).collect();
                write!(f, "road_type={}", names.join(","))
            }
            TreatmentSpec::SeasonIs { months } => {
                let m: Vec<_> = months.iter().map(u8::to_string).collect();
                write!(f, "season={}", m.join(","))
            }
            TreatmentSpec::PrecipitationGe { mm } => write!(f, "precip>={mm}"),
        }
    }
}

impl FromStr for TreatmentSpec {
    type Err = CausalError;

    /// `road_type=motorway,trunk`, `season=12,1,2`, `winter`,
    /// `precip>=60` or `precip` (default threshold).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let spec = if s == "winter" {
            TreatmentSpec::winter()
        } else if s == "precip" {
            TreatmentSpec::PrecipitationGe { mm: DEFAULT_PRECIP_MM }
        } else if let Some(v) = s.strip_prefix("precip>=") {
            TreatmentSpec::PrecipitationGe { mm: v.trim().parse().map_err(|_| CausalError::Spec(format!("bad threshold {v:?}")))? }
        } else if let Some(v) = s.strip_prefix("road_type=") {
            let types = v.split(',').map(|t| t.parse::<RoadType>().map_err(|e| CausalError::Spec(e.to_string()))).collect::<Result<_, _>>()?;
            TreatmentSpec::RoadTypeIs { types }
        } else if let Some(v) = s.strip_prefix("season=") {
            let months = v.split(',').map(|m| m.trim().parse::<u8>().map_err(|_| CausalError::Spec(format!("bad month {m:?}")))).collect::<Result<_, _>>()?;
            TreatmentSpec::SeasonIs { months }
        } else {
            return Err(CausalError::Spec(format!("unrecognized treatment {s:?}")));
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Edge-level precipitation: mean over the endpoints that have a value,
/// `None` when neither does. Reads unnormalized snapshot features.
pub fn edge_precipitation(g: &RoadGraph, s: &MonthlySnapshot) -> Vec<Option<f64>> {
    let x = &s.node_features;
    let node = |v: usize| (x.get(v, PRCP_MASK) == 0.0).then(|| x.get(v, PRCP));
    (0..g.edge_count())
        .map(|k| {
            let (a, b) = g.endpoints(k);
            match (node(a), node(b)) {
                (Some(p), Some(q)) => Some((p + q) / 2.0),
                (p, q) => p.or(q),
            }
        })
        .collect()
}

/// Binary treatment per edge of `s`. `s` must hold raw, unnormalized
/// features. Edges without precipitation data are untreated.
pub fn assign_treatment(g: &RoadGraph, s: &MonthlySnapshot, spec: &TreatmentSpec) -> Result<Vec<u8>, CausalError> {
    spec.validate()?;
    if s.edge_count() != g.edge_count() || s.node_features.rows() != g.node_count() {
        return Err(CausalError::Dimension(format!("snapshot {} does not match the graph", s.name())));
    }
    Ok(match spec {
        TreatmentSpec::RoadTypeIs { types } => g.edges().iter().map(|e| u8::from(types.contains(&e.road_type))).collect(),
        TreatmentSpec::SeasonIs { months } => {
            let m = s.month.ok_or_else(|| CausalError::MissingFeature(format!("a calendar month (snapshot {} is yearly)", s.name())))?;
            vec![u8::from(months.contains(&m)); g.edge_count()]
        }
        TreatmentSpec::PrecipitationGe { mm } => {
            let p = edge_precipitation(g, s);
            if !p.is_empty() && p.iter().all(Option::is_none) {
                return Err(CausalError::MissingFeature(format!("precipitation (all missing in snapshot {})", s.name())));
            }
            p.into_iter().map(|v| u8::from(v.is_some_and(|v| v >= *mm))).collect()
        }
    })
}

/// Which model representation becomes the edge embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    /// Fused node vectors of both endpoints, concatenated.
    #[default]
    Fused,
    /// Raw edge feature rows; no model needed.
    EdgeFeatures,
}

/// One frame over the given snapshots. `raw` supplies treatment and
/// outcomes (accident counts); `normalized` is what the model reads.
pub fn frame_from_model(
    model: Option<&FusionModel>,
    g: &RoadGraph,
    plan: &GraphPlan,
    raw: &[MonthlySnapshot],
    normalized: &[MonthlySnapshot],
    spec: &TreatmentSpec,
    source: EmbeddingSource,
) -> Result<CausalFrame, CausalError> {
    if raw.len() != normalized.len() {
        return Err(CausalError::Dimension(format!("{} raw vs {} normalized snapshots", raw.len(), normalized.len())));
    }
    let mut frames = Vec::with_capacity(raw.len());
    for (r, n) in raw.iter().zip(normalized) {
        let t = assign_treatment(g, r, spec)?;
        let y = r.labels_count.iter().map(|&c| f64::from(c)).collect();
        let emb = match (source, model) {
            (EmbeddingSource::Fused, Some(m)) => m.edge_embeddings(plan, n)?,
            (EmbeddingSource::Fused, None) => return Err(CausalError::Argument("fused embeddings need a trained model".into())),
            (EmbeddingSource::EdgeFeatures, _) => n.edge_features.clone(),
        };
        frames.push(CausalFrame::new(emb, t, y)?);
    }
    CausalFrame::concat(&frames)
}

/// The `k` candidates with the smallest distance, ties to the lower index.
fn select_k(mut cand: Vec<(f64, usize)>, k: usize) -> Vec<(f64, usize)> {
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    }
    cand.sort_by(cmp);
    cand
}

fn check_k(k: usize, controls: usize) -> Result<(), CausalError> {
    if k == 0 {
        return Err(CausalError::Argument("k must be at least 1".into()));
    }
    if controls < k {
        return Err(CausalError::TooFewControls { need: k, got: controls });
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` controls closest to unit `i` in Euclidean distance, as
/// `(index, distance)`, nearest first.
pub fn knn_match(frame: &CausalFrame, i: usize, k: usize) -> Result<Vec<(usize, f64)>, CausalError> {
    if i >= frame.len() {
        return Err(CausalError::Argument(format!("unit {i} out of range")));
    }
    let controls = frame.controls();
    check_k(k, controls.len())?;
    Ok(knn_among(frame, i, &controls, k))
}

fn knn_among(frame: &CausalFrame, i: usize, controls: &[usize], k: usize) -> Vec<(usize, f64)> {
    let x = frame.embeddings.row(i);
    let cand = controls.iter().map(|&j| (sq_dist(x, frame.embeddings.row(j)), j)).collect();
    select_k(cand, k).into_iter().map(|(d, j)| (j, d.sqrt())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrMode {
    /// Averages the correction over treated units only; the
    /// control-side term is then identically zero.
    TreatedOnly,
    /// Conventional ATT form: treated residuals against the control
    /// outcome model, minus odds-weighted control residuals.
    #[default]
    Standard,
}

impl FromStr for DrMode {
    type Err = CausalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "treated_only" | "literal" => Ok(DrMode::TreatedOnly),
            "standard" => Ok(DrMode::Standard),
            _ => Err(CausalError::Argument(format!("unknown DR mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Matching,
    Psm,
    Dr,
    /// Treated mean minus control mean, no adjustment.
    Naive,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Matching => "matching",
            Estimator::Psm => "psm",
            Estimator::Dr => "dr",
            Estimator::Naive => "naive",
        }
    }
}

impl FromStr for Estimator {
    type Err = CausalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "matching" => Ok(Estimator::Matching),
            "psm" => Ok(Estimator::Psm),
            "dr" => Ok(Estimator::Dr),
            "naive" => Ok(Estimator::Naive),
            _ => Err(CausalError::Argument(format!("unknown estimator {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalResult {
    pub estimator: Estimator,
    pub att: f64,
    /// Plug-in standard error of `att` within this frame.
    pub se: f64,
    pub n_treated: usize,
    pub n_control: usize,
    pub k: Option<usize>,
    pub clip: Option<(f64, f64)>,
    pub mode: Option<DrMode>,
    /// Every clipped propensity sits on the same bound.
    pub degenerate_propensity: bool,
    /// Largest |control-side term| over treated units (literal DR only).
    pub literal_control_term: Option<f64>,
}

impl CausalResult {
    fn base(estimator: Estimator, att: f64, se: f64, nt: usize, nc: usize) -> Self {
        CausalResult {
            estimator,
            att,
            se,
            n_treated: nt,
            n_control: nc,
            k: None,
            clip: None,
            mode: None,
            degenerate_propensity: false,
            literal_control_term: None,
        }
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn att_naive(frame: &CausalFrame) -> Result<CausalResult, CausalError> {
    let (t, c) = frame.both_classes()?;
    let yt: Vec<f64> = t.iter().map(|&i| frame.outcome[i]).collect();
    let yc: Vec<f64> = c.iter().map(|&i| frame.outcome[i]).collect();
    let ((mt, st), (mc, sc)) = (mean_se(&yt), mean_se(&yc));
    Ok(CausalResult::base(Estimator::Naive, mt - mc, st.hypot(sc), t.len(), c.len()))
}

fn matched_att(frame: &CausalFrame, estimator: Estimator, treated: &[usize], controls: &[usize], k: usize, exec: Exec, find: impl Fn(usize) -> Vec<usize> + Send + Sync) -> CausalResult {
    let diffs = exec.map_slice(treated, |&i| {
        let m = find(i);
        frame.outcome[i] - m.iter().map(|&j| frame.outcome[j]).sum::<f64>() / m.len() as f64
    });
    let (att, se) = mean_se(&diffs);
    let mut r = CausalResult::base(estimator, att, se, treated.len(), controls.len());
    r.k = Some(k);
    r
}

/// Each treated unit minus the mean outcome of its `k` nearest controls
/// in embedding space, averaged over treated units.
pub fn att_matching(frame: &CausalFrame, k: usize, exec: Exec) -> Result<CausalResult, CausalError> {
    let (t, c) = frame.both_classes()?;
    check_k(k, c.len())?;
    Ok(matched_att(frame, Estimator::Matching, &t, &c, k, exec, |i| knn_among(frame, i, &c, k).into_iter().map(|(j, _)| j).collect()))
}

fn check_clip(clip: (f64, f64)) -> Result<(), CausalError> {
    let (lo, hi) = clip;
    if !(0.0 < lo && lo < hi && hi < 1.0) {
        return Err(CausalError::Argument(format!("clip bounds ({lo}, {hi}) must satisfy 0 < lo < hi < 1")));
    }
    Ok(())
}

/// Logistic propensity scores fit on the embeddings, clipped to `clip`.
pub fn propensity_scores(frame: &CausalFrame, clip: (f64, f64)) -> Result<Vec<f64>, CausalError> {
    check_clip(clip)?;
    frame.both_classes()?;
    let fit = fit_logistic(&frame.embeddings, &frame.treatment)?;
    Ok(fit.predict_all(&frame.embeddings).into_iter().map(|e| e.clamp(clip.0, clip.1)).collect())
}

fn degenerate(e: &[f64], clip: (f64, f64)) -> bool {
    e.iter().all(|&v| v == clip.0) || e.iter().all(|&v| v == clip.1)
}

/// Matching on given propensity scores.
pub fn att_psm_with(frame: &CausalFrame, scores: &[f64], k: usize, exec: Exec) -> Result<CausalResult, CausalError> {
    if scores.len() != frame.len() {
        return Err(CausalError::Dimension(format!("{} scores for {} units", scores.len(), frame.len())));
    }
    let (t, c) = frame.both_classes()?;
    check_k(k, c.len())?;
    Ok(matched_att(frame, Estimator::Psm, &t, &c, k, exec, |i| {
        let cand = c.iter().map(|&j| ((scores[i] - scores[j]).abs(), j)).collect();
        select_k(cand, k).into_iter().map(|(_, j)| j).collect()
    }))
}

pub fn att_psm(frame: &CausalFrame, k: usize, clip: (f64, f64), exec: Exec) -> Result<CausalResult, CausalError> {
    let e = propensity_scores(frame, clip)?;
    let mut r = att_psm_with(frame, &e, k, exec)?;
    r.clip = Some(clip);
    r.degenerate_propensity = degenerate(&e, clip);
    Ok(r)
}

/// Fitted quantities the DR estimator combines.
#[derive(Debug, Clone, PartialEq)]
pub struct DrComponents {
    /// Treated outcome model at every unit.
    pub m1: Vec<f64>,
    /// Control outcome model at every unit.
    pub m0: Vec<f64>,
    /// Clipped propensity at every unit.
    pub e: Vec<f64>,
}

fn with_intercept(x: &Tensor, rows: &[usize]) -> Tensor {
    let d = x.cols();
    let mut data = Vec::with_capacity(rows.len() * (d + 1));
    for &r in rows {
        data.extend_from_slice(x.row(r));
        data.push(1.0);
    }
    Tensor::from_vec(rows.len(), d + 1, data).expect("shape")
}

fn ridge_predict(x: &Tensor, w: &[f64]) -> Vec<f64> {
    let d = x.cols();
    (0..x.rows()).map(|r| x.row(r).iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + w[d]).collect()
}

/// Ridge outcome models on each arm plus clipped logistic propensities.
pub fn fit_dr_components(frame: &CausalFrame, clip: (f64, f64)) -> Result<DrComponents, CausalError> {
    let (t, c) = frame.both_classes()?;
    let e = propensity_scores(frame, clip)?;
    let fit = |rows: &[usize]| -> Result<Vec<f64>, CausalError> {
        let y: Vec<f64> = rows.iter().map(|&i| frame.outcome[i]).collect();
        let w = fit_ridge(&with_intercept(&frame.embeddings, rows), &y, OUTCOME_RIDGE)?;
        Ok(ridge_predict(&frame.embeddings, &w))
    };
    Ok(DrComponents { m1: fit(&t)?, m0: fit(&c)?, e })
}

/// DR estimate from precomputed components, so either model can be
/// swapped for a deliberately wrong one.
pub fn att_dr_from(frame: &CausalFrame, comp: &DrComponents, mode: DrMode) -> Result<CausalResult, CausalError> {
    let n = frame.len();
    if comp.m1.len() != n || comp.m0.len() != n || comp.e.len() != n {
        return Err(CausalError::Dimension("DR components do not match the frame".into()));
    }
    if let Some(row) = comp.e.iter().position(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(CausalError::NonFinite { what: "propensity in (0,1)", row });
    }
    let (t, c) = frame.both_classes()?;
    let y = &frame.outcome;
    let mut r = match mode {
        DrMode::TreatedOnly => {
            let mut max_ctrl = 0.0f64;
            let terms: Vec<f64> = t
                .iter()
                .map(|&i| {
                    let ti = f64::from(frame.treatment[i]);
                    let treated_part = ti * (y[i] - comp.m1[i]) / comp.e[i];
                    let control_part = (1.0 - ti) * (y[i] - comp.m0[i]) / (1.0 - comp.e[i]);
                    assert!(control_part == 0.0, "control-side term must vanish on treated units");
                    max_ctrl = max_ctrl.max(control_part.abs());
                    comp.m1[i] - comp.m0[i] + treated_part - control_part
                })
                .collect();
            let (att, se) = mean_se(&terms);
            let mut r = CausalResult::base(Estimator::Dr, att, se, t.len(), c.len());
            r.literal_control_term = Some(max_ctrl);
            r
        }
        DrMode::Standard => {
            let nt = t.len() as f64;
            let res: Vec<f64> = (0..n).map(|i| y[i] - comp.m0[i]).collect();
            let w: Vec<f64> = c.iter().map(|&i| comp.e[i] / (1.0 - comp.e[i])).collect();
            let wsum: f64 = w.iter().sum();
            let mu_t = t.iter().map(|&i| res[i]).sum::<f64>() / nt;
            let mu_c = c.iter().zip(&w).map(|(&i, wi)| wi * res[i]).sum::<f64>() / wsum;
            let att = mu_t - mu_c;
            // linearized influence terms, scaled to the treated count
            let mut ss = 0.0;
            for &i in &t {
                ss += (res[i] - mu_t).powi(2);
            }
            for (&i, wi) in c.iter().zip(&w) {
                ss += (wi * nt / wsum * (res[i] - mu_c)).powi(2);
            }
            CausalResult::base(Estimator::Dr, att, ss.sqrt() / nt, t.len(), c.len())
        }
    };
    r.mode = Some(mode);
    Ok(r)
}

pub fn att_dr(frame: &CausalFrame, mode: DrMode, clip: (f64, f64)) -> Result<CausalResult, CausalError> {
    let comp = fit_dr_components(frame, clip)?;
    let mut r = att_dr_from(frame, &comp, mode)?;
    r.clip = Some(clip);
    r.degenerate_propensity = degenerate(&comp.e, clip);
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub estimator: Estimator,
    pub k: usize,
    pub clip: (f64, f64),
    pub mode: DrMode,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig { estimator: Estimator::Matching, k: 1, clip: DEFAULT_CLIP, mode: DrMode::Standard }
    }
}

pub fn estimate(frame: &CausalFrame, cfg: &EstimatorConfig, exec: Exec) -> Result<CausalResult, CausalError> {
    match cfg.estimator {
        Estimator::Matching => att_matching(frame, cfg.k, exec),
        Estimator::Psm => att_psm(frame, cfg.k, cfg.clip, exec),
        Estimator::Dr => att_dr(frame, cfg.mode, cfg.clip),
        Estimator::Naive => att_naive(frame),
    }
}

/// Per-group results with their mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub groups: Vec<(i32, CausalResult)>,
    pub mean_att: f64,
    pub std_att: f64,
}

pub fn summarize(groups: Vec<(i32, CausalResult)>) -> Result<BatchSummary, CausalError> {
    if groups.is_empty() {
        return Err(CausalError::Argument("no groups to summarize".into()));
    }
    let atts: Vec<f64> = groups.iter().map(|(_, r)| r.att).collect();
    let n = atts.len() as f64;
    let mean_att = atts.iter().sum::<f64>() / n;
    let std_att = if atts.len() > 1 { (atts.iter().map(|a| (a - mean_att).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    Ok(BatchSummary { groups, mean_att, std_att })
}

/// Accident totals and edge-month counts per precipitation bin of width
/// `width` mm, from raw snapshots. Edge-months without data are skipped.
pub fn precipitation_bins(g: &RoadGraph, snaps: &[MonthlySnapshot], width: f64) -> Result<Vec<(f64, usize, u64)>, CausalError> {
    if !(width.is_finite() && width > 0.0) {
        return Err(CausalError::Argument(format!("bin width {width} must be positive")));
    }
    let mut bins: std::collections::BTreeMap<i64, (usize, u64)> = Default::default();
    for s in snaps {
        for (k, p) in edge_precipitation(g, s).into_iter().enumerate() {
            if let Some(p) = p {
                let b = bins.entry((p / width).floor() as i64).or_default();
                b.0 += 1;
                b.1 += u64::from(s.labels_count[k]);
            }
        }
    }
    Ok(bins.into_iter().map(|(b, (n, a))| (b as f64 * width, n, a)).collect())
}

/// Frame as CSV: `t,y,x0,x1,...`.
pub fn write_frame(out: impl std::io::Write, frame: &CausalFrame) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string(), "y".to_string()];
    header.extend((0..frame.dim()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for i in 0..frame.len() {
        let mut row = vec![frame.treatment[i].to_string(), frame.outcome[i].to_string()];
        row.extend(frame.embeddings.row(i).iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()
}

pub fn read_frame(file: &str, input: impl std::io::Read) -> Result<CausalFrame, CausalError> {
    let bad = |line: usize, msg: String| CausalError::Dimension(format!("{file}: line {line}: {msg}"));
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    let d = header.len().saturating_sub(2);
    if header.len() < 3 || &header[0] != "t" || &header[1] != "y" || (0..d).any(|j| header[j + 2] != format!("x{j}")) {
        return Err(bad(1, "expected header t,y,x0,...".into()));
    }
    let (mut t, mut y, mut data) = (Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| bad(line, e.to_string()))?;
        let num = |j: usize| rec.get(j).unwrap_or("").trim().parse::<f64>().map_err(|_| bad(line, format!("bad number in column {}", j + 1)));
        t.push(match rec.get(0).map(str::trim) {
            Some("0") => 0,
            Some("1") => 1,
            other => return Err(bad(line, format!("treatment {other:?} is not 0/1"))),
        });
        y.push(num(1)?);
        for j in 0..d {
            data.push(num(j + 2)?);
        }
    }
    CausalFrame::new(Tensor::from_vec(y.len(), d, data)?, t, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame1d(x: &[f64], t: &[u8], y: &[f64]) -> CausalFrame {
        CausalFrame::new(Tensor::from_vec(x.len(), 1, x.to_vec()).unwrap(), t.to_vec(), y.to_vec()).unwrap()
    }

    #[test]
    fn hand_matching_example() {
        let f = frame1d(&[0.0, 1.0, 0.1, 0.9], &[1, 1, 0, 0], &[3.0, 5.0, 1.0, 2.0]);
        let r = att_matching(&f, 1, Exec::Sequential).unwrap();
        assert_eq!(r.att, 2.5);
        assert_eq!((r.n_treated, r.n_control), (2, 2));
    }

    #[test]
    fn ties_go_to_lower_index() {
        let f = frame1d(&[0.0, 1.0, -1.0], &[1, 0, 0], &[0.0; 3]);
        assert_eq!(knn_match(&f, 0, 1).unwrap(), vec![(1, 1.0)]);
        let same = frame1d(&[0.5, 0.5, 0.2], &[1, 0, 0], &[0.0; 3]);
        assert_eq!(knn_match(&same, 0, 1).unwrap(), vec![(1, 0.0)]);
        assert!(matches!(knn_match(&f, 0, 3), Err(CausalError::TooFewControls { need: 3, got: 2 })));
    }

    #[test]
    fn treatment_spec_parsing() {
        let s: TreatmentSpec = "road_type=motorway,motorway_link".parse().unwrap();
        assert_eq!(s.to_string(), "road_type=motorway,motorway_link");
        assert_eq!("winter".parse::<TreatmentSpec>().unwrap(), "season=12,1,2".parse().unwrap());
        assert!("season=13".parse::<TreatmentSpec>().is_err());
        assert!("precip>=x".parse::<TreatmentSpec>().is_err());
        assert_eq!("precip".parse::<TreatmentSpec>().unwrap(), TreatmentSpec::PrecipitationGe { mm: 60.0 });
    }

    #[test]
    fn exact_outcome_models_cancel_correction() {
        let f = frame1d(&[0.0, 1.0, 2.0, 0.5, 1.5], &[1, 1, 0, 0, 1], &[1.0, 3.0, 2.0, 0.5, 4.0]);
        let m1 = vec![1.0, 3.0, 9.0, 9.0, 4.0];
        let m0 = vec![0.0, 0.0, 2.0, 0.5, 1.0];
        let comp = DrComponents { m1: m1.clone(), m0: m0.clone(), e: vec![0.4; 5] };
        let r = att_dr_from(&f, &comp, DrMode::TreatedOnly).unwrap();
        let want = [0, 1, 4].iter().map(|&i| m1[i] - m0[i]).sum::<f64>() / 3.0;
        assert!((r.att - want).abs() < 1e-12);
        assert_eq!(r.literal_control_term, Some(0.0));
    }

    #[test]
    fn frame_csv_round_trip() {
        let f = frame1d(&[0.25, -1.5e-7, 3.0], &[1, 0, 0], &[0.1, 2.0, -3.5]);
        let mut buf = Vec::new();
        write_frame(&mut buf, &f).unwrap();
        assert_eq!(read_frame("f.csv", buf.as_slice()).unwrap(), f);
        assert!(read_frame("f.csv", "t,y\n".as_bytes()).is_err());
    }

    #[test]
    fn naive_difference() {
        let f = frame1d(&[0.0; 4], &[1, 1, 0, 0], &[3.0, 5.0, 1.0, 2.0]);
        assert_eq!(att_naive(&f).unwrap().att, 2.5);
    }
}
