//! Message-passing encoder, fusion heads, and the edge predictor.
//!
//! A layer updates node `i` from its in-neighbours `j`:
//!
//! ```text
//! m_ij  = relu(W_m [x_i | x_j | v_ij] + b_m)
//! a_i   = sum_j m_ij            (or the mean; zero for isolated nodes)
//! x_i'  = relu(W_u [(1 + eps) x_i | a_i] + b_u)
//! ```
//!
//! The affine maps over concatenations are stored as one block per input
//! (`W_m = [W_self; W_nbr; W_edge]`), which lets the node-level products be
//! taken before gathering along edges. The result is the same affine map.
//!
//! Fusion combines the graph embedding `x` with the visual vector `z`:
//! `none` keeps `x`; `basic` runs a 4-layer MLP on `[x | z]`; `gated` forms
//! `l x + (1 - l) W_proj z` with `l = sigmoid(f_gate([x | z]))`; `moe` mixes
//! `K` expert MLPs on `[x | z]` with softmax gate weights. The predictor
//! scores edge `(u, v)` from `[f_u | f_v | x_edge]`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ErrorKind;
use crate::graph::RoadGraph;
use crate::ingest::{MonthlySnapshot, NormStats, D_EDGE, D_NODE};
use crate::nn::{Linear, Mlp, NnError, ParamId, ParamStore, Tape, Tensor, Var};

pub const MODEL_HEADER: &str = "roadrisk-model 1";

#[derive(Debug, thiserror::Error)]
pub enum GnnError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("{what}: expected {expected}, found {found}")]
    Dimension { what: String, expected: usize, found: usize },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

impl GnnError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            GnnError::Config(_) => ErrorKind::Usage,
            GnnError::Nn(e) => e.kind(),
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    #[default]
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    None,
    Basic,
    #[default]
    Gated,
    Moe,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [FusionMode::None, FusionMode::Basic, FusionMode::Gated, FusionMode::Moe];

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::None => "none",
            FusionMode::Basic => "basic",
            FusionMode::Gated => "gated",
            FusionMode::Moe => "moe",
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionMode {
    type Err = GnnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FusionMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| GnnError::Config(format!("unknown fusion mode {s:?} (expected none, basic, gated or moe)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Classification,
    Regression,
}

impl FromStr for Task {
    type Err = GnnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "classification" => Ok(Task::Classification),
            "regression" => Ok(Task::Regression),
            _ => Err(GnnError::Config(format!("unknown task {s:?} (expected classification or regression)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MessagePassingConfig {
    pub layers: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub aggregator: Aggregator,
    /// Initial (or fixed) value of the self-weighting `eps`.
    pub eps: f64,
    pub learn_eps: bool,
    /// Aggregate over in- and out-neighbours.
    pub symmetrize: bool,
}

impl Default for MessagePassingConfig {
    fn default() -> Self {
        MessagePassingConfig { layers: 2, hidden: 256, embed_dim: 128, aggregator: Aggregator::Sum, eps: 0.0, learn_eps: false, symmetrize: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub mode: FusionMode,
    /// Number of experts for `moe`.
    pub experts: usize,
    /// Hidden width of the gate MLPs.
    pub gate_hidden: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { mode: FusionMode::Gated, experts: 4, gate_hidden: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub mp: MessagePassingConfig,
    pub fusion: FusionConfig,
    pub task: Task,
    pub d_node: usize,
    pub d_edge: usize,
    pub d_visual: usize,
}

impl ModelConfig {
    pub fn new(mp: MessagePassingConfig, fusion: FusionConfig, task: Task, d_visual: usize) -> Self {
        ModelConfig { mp, fusion, task, d_node: D_NODE, d_edge: D_EDGE, d_visual }
    }

    pub fn validate(&self) -> Result<(), GnnError> {
        let bad = |m: &str| Err(GnnError::Config(m.to_string()));
        if self.mp.layers == 0 {
            return bad("message passing needs at least one layer");
        }
        if self.mp.hidden == 0 || self.mp.embed_dim == 0 || self.d_node == 0 {
            return bad("dimensions must be positive");
        }
        if self.fusion.mode == FusionMode::Moe && self.fusion.experts == 0 {
            return bad("mixture of experts needs at least one expert");
        }
        if self.fusion.mode != FusionMode::None && self.fusion.gate_hidden == 0 {
            return bad("gate_hidden must be positive");
        }
        if !self.mp.eps.is_finite() {
            return bad("eps must be finite");
        }
        Ok(())
    }
}

/// Index arrays for message passing and edge scoring on one graph.
#[derive(Debug, Clone)]
pub struct GraphPlan {
    pub n: usize,
    pub m: usize,
    /// Message `t` flows from `msg_src[t]` to `msg_dst[t]` along edge
    /// `msg_edge[t]`.
    pub msg_src: Arc<[usize]>,
    pub msg_dst: Arc<[usize]>,
    pub msg_edge: Arc<[usize]>,
    pub edge_start: Arc<[usize]>,
    pub edge_end: Arc<[usize]>,
    /// `1 / |N(i)|`, zero for isolated nodes, as an `n x 1` column.
    pub inv_deg: Tensor,
}

impl GraphPlan {
    pub fn new(g: &RoadGraph, symmetrize: bool) -> Self {
        let (n, m) = (g.node_count(), g.edge_count());
        let (mut src, mut dst, mut eid) = (Vec::new(), Vec::new(), Vec::new());
        for k in 0..m {
            let (a, b) = g.endpoints(k);
            src.push(a);
            dst.push(b);
            eid.push(k);
            if symmetrize && a != b {
                src.push(b);
                dst.push(a);
                eid.push(k);
            }
        }
        let mut deg = vec![0usize; n];
        for &d in &dst {
            deg[d] += 1;
        }
        let inv: Vec<f64> = deg.iter().map(|&d| if d == 0 { 0.0 } else { 1.0 / d as f64 }).collect();
        let (starts, ends): (Vec<usize>, Vec<usize>) = (0..m).map(|k| g.endpoints(k)).unzip();
        GraphPlan {
            n,
            m,
            msg_src: src.into(),
            msg_dst: dst.into(),
            msg_edge: eid.into(),
            edge_start: starts.into(),
            edge_end: ends.into(),
            inv_deg: Tensor::column(&inv),
        }
    }
}

/// One message-passing layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MpLayer {
    pub msg_self: Linear,
    pub msg_nbr: Linear,
    pub msg_edge: Linear,
    pub upd_self: Linear,
    pub upd_agg: Linear,
    pub eps: Option<ParamId>,
    pub eps_fixed: f64,
    pub aggregator: Aggregator,
}

impl MpLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_edge: usize,
        d_out: usize,
        cfg: &MessagePassingConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NnError> {
        // fan-in of the full concatenated input for every block
        let fan_msg = 2 * d_in + d_edge;
        let fan_upd = d_in + d_out;
        let block = |store: &mut ParamStore, n: &str, rows: usize, cols: usize, fan: usize, bias: bool, rng: &mut ChaCha8Rng| -> Result<Linear, NnError> {
            let w = store.add_uniform(&format!("{name}.{n}.w"), rows, cols, fan, rng)?;
            let b = if bias { Some(store.add_uniform(&format!("{name}.{n}.b"), 1, cols, fan, rng)?) } else { None };
            Ok(Linear { w, b })
        };
        let msg_self = block(store, "msg_self", d_in, d_out, fan_msg, true, rng)?;
        let msg_nbr = block(store, "msg_nbr", d_in, d_out, fan_msg, false, rng)?;
        let msg_edge = block(store, "msg_edge", d_edge, d_out, fan_msg, false, rng)?;
        let upd_self = block(store, "upd_self", d_in, d_out, fan_upd, true, rng)?;
        let upd_agg = block(store, "upd_agg", d_out, d_out, fan_upd, false, rng)?;
        let eps = if cfg.learn_eps { Some(store.add(&format!("{name}.eps"), Tensor::scalar(cfg.eps))?) } else { None };
        Ok(MpLayer { msg_self, msg_nbr, msg_edge, upd_self, upd_agg, eps, eps_fixed: cfg.eps, aggregator: cfg.aggregator })
    }

    /// `x` is `n x d_in`; `v_msg` holds one edge-feature row per message.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, plan: &GraphPlan, x: Var, v_msg: Var) -> Result<Var, NnError> {
        let xs = self.msg_self.forward(tape, store, x)?;
        let xn = self.msg_nbr.forward(tape, store, x)?;
        let a = tape.gather_rows(xs, plan.msg_dst.clone())?;
        let b = tape.gather_rows(xn, plan.msg_src.clone())?;
        let e = self.msg_edge.forward(tape, store, v_msg)?;
        let pre = tape.add(a, b)?;
        let pre = tape.add(pre, e)?;
        let msg = tape.relu(pre)?;
        let mut agg = tape.scatter_add_rows(msg, plan.msg_dst.clone(), plan.n)?;
        if self.aggregator == Aggregator::Mean {
            let inv = tape.input(plan.inv_deg.clone())?;
            agg = tape.row_scale(agg, inv)?;
        }
        let selfx = match self.eps {
            Some(id) => {
                let eps = tape.param(store, id)?;
                let k = tape.add_scalar(eps, 1.0)?;
                tape.scalar_scale(x, k)?
            }
            None => tape.scale(x, 1.0 + self.eps_fixed)?,
        };
        let u = self.upd_self.forward(tape, store, selfx)?;
        let w = self.upd_agg.forward(tape, store, agg)?;
        let s = tape.add(u, w)?;
        tape.relu(s)
    }
}

/// Fusion head variants.
#[derive(Debug, Clone, PartialEq)]
pub enum FusionHead {
    None,
    Basic(Mlp),
    Gated { proj: Linear, gate: Mlp },
    Moe { experts: Vec<Mlp>, gate: Mlp },
}

impl FusionHead {
    pub fn new(store: &mut ParamStore, cfg: &FusionConfig, d_x: usize, d_z: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self, NnError> {
        let d_in = d_x + d_z;
        Ok(match cfg.mode {
            FusionMode::None => FusionHead::None,
            FusionMode::Basic => FusionHead::Basic(Mlp::new(store, "fusion.basic", &[d_in, hidden, hidden, hidden, d_x], false, rng)?),
            FusionMode::Gated => FusionHead::Gated {
                proj: Linear::new(store, "fusion.proj", d_z, d_x, false, rng)?,
                gate: Mlp::new(store, "fusion.gate", &[d_in, cfg.gate_hidden, 1], false, rng)?,
            },
            FusionMode::Moe => FusionHead::Moe {
                experts: (0..cfg.experts)
                    .map(|k| Mlp::new(store, &format!("fusion.expert{k}"), &[d_in, hidden, d_x], false, rng))
                    .collect::<Result<_, _>>()?,
                gate: Mlp::new(store, "fusion.gate", &[d_in, cfg.gate_hidden, cfg.experts], false, rng)?,
            },
        })
    }

    /// Returns the fused `n x d_x` matrix and, for `gated`/`moe`, the gate
    /// values (`n x 1` or `n x K`).
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, z: Var) -> Result<(Var, Option<Var>), NnError> {
        match self {
            FusionHead::None => Ok((x, None)),
            FusionHead::Basic(mlp) => {
                let xz = tape.concat_cols(x, z)?;
                Ok((mlp.forward(tape, store, xz)?, None))
            }
            FusionHead::Gated { proj, gate } => {
                let xz = tape.concat_cols(x, z)?;
                let logit = gate.forward(tape, store, xz)?;
                let lam = tape.sigmoid(logit)?;
                let zp = proj.forward(tape, store, z)?;
                // l x + (1 - l) z' = z' + l (x - z')
                let diff = tape.sub(x, zp)?;
                let scaled = tape.row_scale(diff, lam)?;
                Ok((tape.add(zp, scaled)?, Some(lam)))
            }
            FusionHead::Moe { experts, gate } => {
                let xz = tape.concat_cols(x, z)?;
                let logits = gate.forward(tape, store, xz)?;
                let lam = tape.softmax_rows(logits)?;
                let mut acc: Option<Var> = None;
                for (k, f) in experts.iter().enumerate() {
                    let e = f.forward(tape, store, xz)?;
                    let lk = tape.slice_cols(lam, k, 1)?;
                    let we = tape.row_scale(e, lk)?;
                    acc = Some(match acc {
                        None => we,
                        Some(a) => tape.add(a, we)?,
                    });
                }
                Ok((acc.expect("at least one expert"), Some(lam)))
            }
        }
    }
}

/// Scores edge `(u, v)` from `[f_u | f_v | x_edge]` with one hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgePredictor {
    pub start: Linear,
    pub end: Linear,
    pub edge: Linear,
    pub out: Linear,
}

impl EdgePredictor {
    pub fn new(store: &mut ParamStore, d_f: usize, d_edge: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self, NnError> {
        let fan = 2 * d_f + d_edge;
        let w_start = store.add_uniform("pred.start.w", d_f, hidden, fan, rng)?;
        let b_start = store.add_uniform("pred.start.b", 1, hidden, fan, rng)?;
        let w_end = store.add_uniform("pred.end.w", d_f, hidden, fan, rng)?;
        let w_edge = store.add_uniform("pred.edge.w", d_edge, hidden, fan, rng)?;
        Ok(EdgePredictor {
            start: Linear { w: w_start, b: Some(b_start) },
            end: Linear { w: w_end, b: None },
            edge: Linear { w: w_edge, b: None },
            out: Linear::new(store, "pred.out", hidden, 1, true, rng)?,
        })
    }

    /// Raw scores (`m x 1`, before the output link).
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, plan: &GraphPlan, f: Var, x_edge: Var) -> Result<Var, NnError> {
        let fs = self.start.forward(tape, store, f)?;
        let fe = self.end.forward(tape, store, f)?;
        let a = tape.gather_rows(fs, plan.edge_start.clone())?;
        let b = tape.gather_rows(fe, plan.edge_end.clone())?;
        let c = self.edge.forward(tape, store, x_edge)?;
        let h = tape.add(a, b)?;
        let h = tape.add(h, c)?;
        let h = tape.relu(h)?;
        self.out.forward(tape, store, h)
    }
}

/// Applies the task's output link: sigmoid for classification, softplus
/// for regression.
pub fn output_link(tape: &mut Tape, task: Task, raw: Var) -> Result<Var, NnError> {
    match task {
        Task::Classification => tape.sigmoid(raw),
        Task::Regression => tape.softplus(raw),
    }
}

/// Tape handles produced by [`FusionModel::forward`].
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub embed: Var,
    pub fused: Var,
    pub gate: Option<Var>,
    /// Scores before the output link, `m x 1`.
    pub raw: Var,
    /// Scores after the output link.
    pub pred: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub layers: Vec<MpLayer>,
    pub head: FusionHead,
    pub predictor: EdgePredictor,
    pub norm: Option<NormStats>,
}

impl FusionModel {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, GnnError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mp = &cfg.mp;
        let mut layers = Vec::new();
        let mut d = cfg.d_node;
        for l in 0..mp.layers {
            let d_out = if l + 1 == mp.layers { mp.embed_dim } else { mp.hidden };
            layers.push(MpLayer::new(&mut store, &format!("mp{l}"), d, cfg.d_edge, d_out, mp, &mut rng)?);
            d = d_out;
        }
        let head = FusionHead::new(&mut store, &cfg.fusion, mp.embed_dim, cfg.d_visual, mp.hidden, &mut rng)?;
        let predictor = EdgePredictor::new(&mut store, mp.embed_dim, cfg.d_edge, mp.hidden, &mut rng)?;
        Ok(FusionModel { cfg, store, layers, head, predictor, norm: None })
    }

    pub fn check_snapshot(&self, plan: &GraphPlan, s: &MonthlySnapshot) -> Result<(), GnnError> {
        let dims = [
            ("node feature columns", self.cfg.d_node, s.node_features.cols()),
            ("edge feature columns", self.cfg.d_edge, s.edge_features.cols()),
            ("visual feature columns", self.cfg.d_visual, s.visual_features.cols()),
            ("node rows", plan.n, s.node_features.rows()),
            ("visual rows", plan.n, s.visual_features.rows()),
            ("edge rows", plan.m, s.edge_features.rows()),
        ];
        for (what, expected, found) in dims {
            if expected != found {
                return Err(GnnError::Dimension { what: format!("snapshot {} {what}", s.name()), expected, found });
            }
        }
        if let Some(n) = &self.norm {
            for (what, expected, found) in [("node norm stats", n.node.len(), self.cfg.d_node), ("edge norm stats", n.edge.len(), self.cfg.d_edge), ("visual norm stats", n.visual.len(), self.cfg.d_visual)] {
                if expected != found {
                    return Err(GnnError::Dimension { what: what.to_string(), expected, found });
                }
            }
        }
        Ok(())
    }

    /// Node embeddings from the stacked message-passing layers.
    pub fn encode(&self, tape: &mut Tape, plan: &GraphPlan, s: &MonthlySnapshot) -> Result<Var, GnnError> {
        self.check_snapshot(plan, s)?;
        let mut x = tape.input(s.node_features.clone())?;
        let v_msg = tape.input(s.edge_features.select_rows(&plan.msg_edge))?;
        for l in &self.layers {
            x = l.forward(tape, &self.store, plan, x, v_msg)?;
        }
        Ok(x)
    }

    pub fn forward(&self, tape: &mut Tape, plan: &GraphPlan, s: &MonthlySnapshot) -> Result<ForwardVars, GnnError> {
        let embed = self.encode(tape, plan, s)?;
        let (fused, gate) = match self.head {
            FusionHead::None => (embed, None),
            _ => {
                let z = tape.input(s.visual_features.clone())?;
                self.head.forward(tape, &self.store, embed, z)?
            }
        };
        let x_edge = tape.input(s.edge_features.clone())?;
        let raw = self.predictor.forward(tape, &self.store, plan, fused, x_edge)?;
        let pred = output_link(tape, self.cfg.task, raw)?;
        Ok(ForwardVars { embed, fused, gate, raw, pred })
    }

    /// Per-edge predictions: probabilities or expected counts.
    pub fn predict(&self, plan: &GraphPlan, s: &MonthlySnapshot) -> Result<Vec<f64>, GnnError> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, plan, s)?;
        Ok(tape.value(f.pred).data().to_vec())
    }

    /// Edge representation `[fused_start | fused_end]`, `m x 2 embed_dim`.
    pub fn edge_embeddings(&self, plan: &GraphPlan, s: &MonthlySnapshot) -> Result<Tensor, GnnError> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, plan, s)?;
        let fused = tape.value(f.fused);
        Ok(fused.select_rows(&plan.edge_start).hcat(&fused.select_rows(&plan.edge_end))?)
    }

    pub fn to_text(&self) -> String {
        let cfg = serde_json::to_string(&self.cfg).expect("config serializes");
        let norm = serde_json::to_string(&self.norm).expect("stats serialize");
        format!("{MODEL_HEADER}\n{cfg}\n{norm}\n{}", self.store.to_checkpoint())
    }

    pub fn from_text(text: &str) -> Result<Self, GnnError> {
        let mut parts = text.splitn(4, '\n');
        if parts.next().map(str::trim) != Some(MODEL_HEADER) {
            return Err(GnnError::Format(format!("missing header {MODEL_HEADER:?}")));
        }
        let cfg: ModelConfig = serde_json::from_str(parts.next().unwrap_or("")).map_err(|e| GnnError::Format(format!("config: {e}")))?;
        let norm: Option<NormStats> = serde_json::from_str(parts.next().unwrap_or("")).map_err(|e| GnnError::Format(format!("norm stats: {e}")))?;
        let store = ParamStore::from_checkpoint(parts.next().unwrap_or(""))?;
        let mut model = FusionModel::new(cfg, 0)?;
        model.store.copy_values_from(&store)?;
        model.norm = norm;
        Ok(model)
    }
}
