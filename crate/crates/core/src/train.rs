//! Full-batch training, evaluation, and leave-one-out feature ablation.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ErrorKind;
use crate::gnn::{FusionModel, GnnError, GraphPlan, ModelConfig, Task};
use crate::graph::RoadGraph;
use crate::ingest::{drop_group, FeatureGroup, GuardedSplit, IngestError, MonthlySnapshot, NormStats};
use crate::metrics::{auroc, evaluate_predictions, mae, EvalReport, MetricError};
use crate::nn::{Adam, AdamConfig, NnError, Tape};
use crate::par::Exec;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no training snapshots")]
    EmptyTrain,
    #[error("all training labels are {0}; both classes are required")]
    SingleClass(u8),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

impl TrainError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            TrainError::Config(_) => ErrorKind::Usage,
            TrainError::Gnn(e) => e.kind(),
            TrainError::Nn(e) => e.kind(),
            TrainError::Ingest(e) => e.kind(),
            TrainError::Metric(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeHandling {
    /// Every zero-label edge of the month is a negative.
    #[default]
    AllZerosAsNegatives,
    /// All positives plus an equal-sized random sample of negatives.
    BalancedSample,
}

impl FromStr for NegativeHandling {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all_zeros_as_negatives" | "all" => Ok(NegativeHandling::AllZerosAsNegatives),
            "balanced_sample" | "balanced" => Ok(NegativeHandling::BalancedSample),
            _ => Err(TrainError::Config(format!("unknown negative handling {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub negatives: NegativeHandling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 30, lr: 0.001, seed: 0, negatives: NegativeHandling::AllZerosAsNegatives }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(TrainError::Config(format!("learning rate {} must be finite and non-negative", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// Mean training loss per epoch, over the snapshots visited.
    pub train_loss: Vec<f64>,
    /// Validation AUROC (classification) or MAE (regression) per epoch.
    pub valid_metric: Vec<f64>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_metric: f64,
}

fn select_edges(s: &MonthlySnapshot, how: NegativeHandling, task: Task, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let all: Vec<usize> = (0..s.edge_count()).collect();
    if task == Task::Regression || how == NegativeHandling::AllZerosAsNegatives {
        return all;
    }
    let (pos, mut neg): (Vec<usize>, Vec<usize>) = all.into_iter().partition(|&k| s.labels_binary[k] == 1);
    if pos.is_empty() {
        return Vec::new();
    }
    neg.shuffle(rng);
    neg.truncate(pos.len());
    let mut idx = [pos, neg].concat();
    idx.sort_unstable();
    idx
}

/// Loss of one snapshot over the selected edges.
pub fn snapshot_loss(model: &FusionModel, tape: &mut Tape, plan: &GraphPlan, s: &MonthlySnapshot, idx: &[usize]) -> Result<crate::nn::Var, TrainError> {
    let f = model.forward(tape, plan, s)?;
    let idx: Arc<[usize]> = idx.into();
    Ok(match model.cfg.task {
        Task::Classification => {
            let raw = tape.gather_rows(f.raw, idx.clone())?;
            let t: Arc<[f64]> = idx.iter().map(|&k| f64::from(s.labels_binary[k])).collect();
            tape.bce_with_logits(raw, t)?
        }
        Task::Regression => {
            let p = tape.gather_rows(f.pred, idx.clone())?;
            let t: Arc<[f64]> = idx.iter().map(|&k| f64::from(s.labels_count[k])).collect();
            tape.l1(p, t)?
        }
    })
}

/// Validation score, higher is better.
fn validation_score(model: &FusionModel, plan: &GraphPlan, valid: &[MonthlySnapshot]) -> Result<Option<f64>, TrainError> {
    if valid.is_empty() {
        return Ok(None);
    }
    let mut preds = Vec::new();
    let mut counts = Vec::new();
    for s in valid {
        preds.extend(model.predict(plan, s)?);
        counts.extend(s.labels_count.iter().copied());
    }
    Ok(match model.cfg.task {
        Task::Classification => {
            let labels: Vec<u8> = counts.iter().map(|&c| u8::from(c > 0)).collect();
            match auroc(&preds, &labels) {
                Ok(v) => Some(v),
                Err(MetricError::MissingClass { .. }) => None,
                Err(e) => return Err(e.into()),
            }
        }
        Task::Regression => {
            let t: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
            Some(-mae(&preds, &t)?)
        }
    })
}

/// Trains in place with Adam, one full-batch step per snapshot, snapshot
/// order reshuffled every epoch. The parameters of the epoch with the best
/// validation metric are kept; without a usable validation set the last
/// epoch is kept.
pub fn train(model: &mut FusionModel, plan: &GraphPlan, train: &[MonthlySnapshot], valid: &[MonthlySnapshot], cfg: &TrainConfig) -> Result<History, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    for s in train.iter().chain(valid) {
        model.check_snapshot(plan, s)?;
    }
    if model.cfg.task == Task::Classification {
        let pos: usize = train.iter().map(|s| s.labels_binary.iter().filter(|&&b| b == 1).count()).sum();
        let total: usize = train.iter().map(MonthlySnapshot::edge_count).sum();
        if pos == 0 || pos == total {
            return Err(TrainError::SingleClass(u8::from(pos > 0)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_6e64);
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    adam.init(&model.store);
    let mut hist = History::default();
    let mut best: Option<(f64, crate::nn::ParamStore)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut steps) = (0.0, 0usize);
        for &i in &order {
            let s = &train[i];
            let idx = select_edges(s, cfg.negatives, model.cfg.task, &mut rng);
            if idx.is_empty() {
                continue;
            }
            let mut tape = Tape::new();
            let loss = snapshot_loss(model, &mut tape, plan, s, &idx)?;
            loss_sum += tape.value(loss).data()[0];
            steps += 1;
            model.store.zero_grads();
            tape.backward(loss, &mut model.store)?;
            adam.step(&mut model.store)?;
        }
        hist.train_loss.push(if steps > 0 { loss_sum / steps as f64 } else { 0.0 });
        let score = validation_score(model, plan, valid)?;
        let shown = match (score, model.cfg.task) {
            (Some(v), Task::Regression) => -v,
            (Some(v), _) => v,
            (None, _) => f64::NAN,
        };
        hist.valid_metric.push(shown);
        if let Some(v) = score {
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((v, model.store.clone()));
                hist.best_epoch = epoch;
                hist.best_metric = shown;
            }
        }
    }
    match best {
        Some((_, store)) => model.store.copy_values_from(&store)?,
        None => {
            hist.best_epoch = cfg.epochs;
            hist.best_metric = f64::NAN;
        }
    }
    Ok(hist)
}

/// Pooled metrics over snapshots, with a per-road-type breakdown.
pub fn evaluate(model: &FusionModel, g: &RoadGraph, plan: &GraphPlan, snaps: &[MonthlySnapshot]) -> Result<EvalReport, TrainError> {
    let types: Vec<&str> = g.edges().iter().map(|e| e.road_type.name()).collect();
    let mut preds = Vec::new();
    let mut counts = Vec::new();
    let mut groups = Vec::new();
    for s in snaps {
        preds.extend(model.predict(plan, s)?);
        counts.extend(s.labels_count.iter().copied());
        groups.extend(types.iter().copied());
    }
    Ok(evaluate_predictions(&preds, &counts, &groups)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Feature groups removed from every split before normalization.
    #[serde(default)]
    pub drop: Vec<FeatureGroup>,
}

impl Experiment {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.train.validate()?;
        self.model.validate()?;
        let mut d = self.drop.clone();
        d.sort();
        d.dedup();
        if d.len() == FeatureGroup::ALL.len() {
            return Err(TrainError::Config("cannot drop every feature group at once".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub model: FusionModel,
    pub history: History,
    pub report: EvalReport,
}

fn prepare(snaps: &[MonthlySnapshot], drop: &[FeatureGroup]) -> Vec<MonthlySnapshot> {
    let mut out = snaps.to_vec();
    for s in &mut out {
        for &grp in drop {
            drop_group(s, grp);
        }
    }
    out
}

/// Trains a fresh model and evaluates it on the test split. The test
/// split is read exactly once, after training has finished.
pub fn run_experiment(g: &RoadGraph, train_raw: &[MonthlySnapshot], valid_raw: &[MonthlySnapshot], test: &GuardedSplit, exp: &Experiment) -> Result<ExperimentResult, TrainError> {
    exp.validate()?;
    let plan = GraphPlan::new(g, exp.model.mp.symmetrize);
    let mut tr = prepare(train_raw, &exp.drop);
    let mut va = prepare(valid_raw, &exp.drop);
    let stats = NormStats::fit(&tr)?;
    stats.apply_all(&mut tr)?;
    stats.apply_all(&mut va)?;
    let mut model = FusionModel::new(exp.model, exp.train.seed)?;
    model.norm = Some(stats.clone());
    let history = train(&mut model, &plan, &tr, &va, &exp.train)?;
    let mut te = prepare(test.get(), &exp.drop);
    stats.apply_all(&mut te)?;
    let report = evaluate(&model, g, &plan, &te)?;
    Ok(ExperimentResult { model, history, report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub full: EvalReport,
    pub dropped: BTreeMap<FeatureGroup, EvalReport>,
    /// Full-model AUROC minus AUROC without the group.
    pub auroc_delta: BTreeMap<FeatureGroup, f64>,
}

/// Leave-one-out ablation: the full model plus one retrained model per
/// listed group, all with the same seed.
pub fn ablate(g: &RoadGraph, train_raw: &[MonthlySnapshot], valid_raw: &[MonthlySnapshot], test: &GuardedSplit, base: &Experiment, groups: &[FeatureGroup], exec: Exec) -> Result<AblationReport, TrainError> {
    base.validate()?;
    if groups.is_empty() {
        return Err(TrainError::Config("no feature groups to ablate".into()));
    }
    let mut uniq = groups.to_vec();
    uniq.sort();
    uniq.dedup();
    let runs: Vec<Experiment> = std::iter::once(base.clone())
        .chain(uniq.iter().map(|&grp| {
            let mut e = base.clone();
            if !e.drop.contains(&grp) {
                e.drop.push(grp);
            }
            e
        }))
        .collect();
    for r in &runs {
        r.validate()?;
    }
    let results = exec.map_slice(&runs, |e| run_experiment(g, train_raw, valid_raw, test, e).map(|r| r.report));
    let mut results = results.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter();
    let full = results.next().expect("full run");
    let mut dropped = BTreeMap::new();
    let mut auroc_delta = BTreeMap::new();
    for (grp, rep) in uniq.into_iter().zip(results) {
        let delta = match (full.auroc, rep.auroc) {
            (Some(a), Some(b)) => a - b,
            _ => f64::NAN,
        };
        auroc_delta.insert(grp, delta);
        dropped.insert(grp, rep);
    }
    Ok(AblationReport { full, dropped, auroc_delta })
}
