//! Synthetic road networks and causal frames with planted effects.
//!
//! A state is a random geometric graph over the unit square, mapped onto
//! a small lat/lon box, with monthly accident counts drawn from
//!
//! ```text
//! rate_e = base * exp(beta_struct * s_e + beta_vis * v_e + tau * t_e + gamma * u_e)
//! ```
//!
//! where `s_e` is a structural score, `v_e` a latent read out by the
//! visual vectors, `t_e` marks motorway edges, and `u_e` confounds the
//! motorway assignment. Frames are the same model on the log-rate scale
//! with Gaussian noise, so the ATT of a frame is exactly `tau`.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::align::{haversine_m, match_all, Metric};
use crate::causal::CausalFrame;
use crate::graph::{betweenness_scores, io::save_graph, EdgeId, GeoPoint, GraphError, NodeId, RoadEdge, RoadGraph, RoadNode, RoadType};
use crate::ingest::{build_monthly_snapshots, write_accidents, write_embeddings, write_volume, write_weather, AccidentRecord, BuildReport, MonthRange, MonthlySnapshot, SnapshotOptions, SplitSpec, TrafficVolumeRecord, VisualEmbedding, WeatherObservation, YearMonth, YearRange};
use crate::nn::Tensor;
use crate::par::Exec;

const MAX_EDGES: usize = 200_000;
const LAT0: f64 = 38.5;
const LON0: f64 = -75.7;
const SPAN_DEG: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("infeasible density: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalSource {
    Visual,
    Structural,
    Both,
    None,
}

impl SignalSource {
    fn visual(self) -> bool {
        matches!(self, SignalSource::Visual | SignalSource::Both)
    }

    fn structural(self) -> bool {
        matches!(self, SignalSource::Structural | SignalSource::Both)
    }
}

impl FromStr for SignalSource {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "visual" => Ok(SignalSource::Visual),
            "structural" => Ok(SignalSource::Structural),
            "both" => Ok(SignalSource::Both),
            "none" => Ok(SignalSource::None),
            _ => Err(SynthError::Spec(format!("unknown signal source {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_nodes: usize,
    /// Connection radius in the unit square.
    pub radius: f64,
    pub start_year: i32,
    pub months: usize,
    pub d_visual: usize,
    pub signal_source: SignalSource,
    pub planted_att: f64,
    pub gamma: f64,
    pub base_rate: f64,
    pub beta_struct: f64,
    pub beta_vis: f64,
    /// Share of edges that are motorways when `gamma` is 0.
    pub treated_share: f64,
    /// Units and embedding width of generated causal frames.
    pub frame_units: usize,
    pub frame_dim: usize,
    pub frame_noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_nodes: 150,
            radius: 0.1,
            start_year: 2019,
            months: 36,
            d_visual: 8,
            signal_source: SignalSource::Visual,
            planted_att: 0.25,
            gamma: 0.0,
            base_rate: 0.08,
            beta_struct: 1.0,
            beta_vis: 1.5,
            treated_share: 0.2,
            frame_units: 1000,
            frame_dim: 4,
            frame_noise: 0.5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Spec(m.to_string()));
        if self.n_nodes < 2 {
            return bad("need at least 2 nodes");
        }
        if self.months == 0 {
            return bad("need at least one month");
        }
        if self.d_visual == 0 || self.frame_dim == 0 {
            return bad("visual and frame dimensions must be positive");
        }
        if !(self.base_rate > 0.0 && self.base_rate.is_finite()) {
            return bad("base rate must be positive");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be finite and non-negative");
        }
        if !(0.0 < self.treated_share && self.treated_share < 1.0) {
            return bad("treated share must lie in (0, 1)");
        }
        if ![self.planted_att, self.beta_struct, self.beta_vis, self.frame_noise].iter().all(|v| v.is_finite()) || self.frame_noise < 0.0 {
            return bad("coefficients must be finite, noise non-negative");
        }
        if !(self.radius > 0.0 && self.radius < std::f64::consts::SQRT_2) {
            return Err(SynthError::Infeasible(format!("radius {} must lie in (0, sqrt 2)", self.radius)));
        }
        Ok(())
    }

    pub fn month_range(&self) -> MonthRange {
        let start = YearMonth { year: self.start_year, month: 1 };
        let mut end = start;
        for _ in 1..self.months {
            end = end.next();
        }
        MonthRange { start, end }
    }

    /// Chronological thirds of the covered years.
    pub fn default_split(&self) -> Result<SplitSpec, SynthError> {
        let r = self.month_range();
        let (y0, y1) = (r.start.year, r.end.year);
        let years = y1 - y0 + 1;
        if years < 3 {
            return Err(SynthError::Spec(format!("{years} years cannot form a train/valid/test split")));
        }
        let t = years / 3;
        Ok(SplitSpec {
            train: YearRange { start: y0, end: y0 + t - 1 },
            valid: YearRange { start: y0 + t, end: y0 + 2 * t - 1 },
            test: YearRange { start: y0 + 2 * t, end: y1 },
        })
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Per-purpose RNG stream, so changing one component leaves the others
/// untouched.
fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(tag);
    r
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / norm).collect()
}

fn zscore(v: &[f64]) -> Vec<f64> {
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    v.iter().map(|x| if sd > 1e-12 { (x - mean) / sd } else { 0.0 }).collect()
}

/// Everything the generator decided, for checking estimates against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SynthSpec,
    /// Motorway indicator per edge.
    pub treatment: Vec<u8>,
    pub structural: Vec<f64>,
    pub visual_latent: Vec<f64>,
    pub confounder: Vec<f64>,
    /// Monthly Poisson rate per edge.
    pub rate: Vec<f64>,
    /// `counts[month][edge]`.
    pub counts: Vec<Vec<u32>>,
}

#[derive(Debug, Clone)]
pub struct SyntheticState {
    pub graph: RoadGraph,
    pub accidents: Vec<AccidentRecord>,
    pub weather: Vec<WeatherObservation>,
    pub volume: Vec<TrafficVolumeRecord>,
    pub embeddings: Vec<VisualEmbedding>,
    pub truth: GroundTruth,
}

fn gen_graph(spec: &SynthSpec) -> Result<RoadGraph, SynthError> {
    let mut rng = stream(spec.seed, 1);
    let pts: Vec<(f64, f64)> = (0..spec.n_nodes).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
    let nodes: Vec<RoadNode> = pts
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| Ok(RoadNode { id: NodeId(i as u64 + 1), point: GeoPoint::new(LAT0 + SPAN_DEG * y, LON0 + SPAN_DEG * x)? }))
        .collect::<Result<_, GraphError>>()?;
    let r2 = spec.radius * spec.radius;
    let mut pairs = Vec::new();
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let (dx, dy) = (pts[i].0 - pts[j].0, pts[i].1 - pts[j].1);
            if dx * dx + dy * dy <= r2 {
                pairs.push((i, j));
                if pairs.len() > MAX_EDGES {
                    return Err(SynthError::Infeasible(format!("more than {MAX_EDGES} edges at radius {}", spec.radius)));
                }
            }
        }
    }
    if pairs.is_empty() {
        return Err(SynthError::Infeasible(format!("no edges at radius {} with {} nodes", spec.radius, spec.n_nodes)));
    }
    let others = [RoadType::Residential, RoadType::Primary, RoadType::Secondary, RoadType::Tertiary];
    let mut edges = Vec::with_capacity(pairs.len());
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let (a, b) = if rng.random::<bool>() { (i, j) } else { (j, i) };
        let len = haversine_m(nodes[a].point, nodes[b].point).max(1.0);
        // placeholder type, fixed once the confounder is drawn
        let rt = others[rng.random_range(0..others.len())];
        edges.push(RoadEdge::new(EdgeId(k as u64 + 1), nodes[a].id, nodes[b].id, false, rt, len)?);
    }
    Ok(RoadGraph::build(nodes, edges)?)
}

/// Generates a state: graph, raw record tables and the ground truth.
pub fn gen_state(spec: &SynthSpec) -> Result<SyntheticState, SynthError> {
    spec.validate()?;
    let g0 = gen_graph(spec)?;
    let (n, m) = (g0.node_count(), g0.edge_count());

    let mut rng = stream(spec.seed, 2);
    let node_latent: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let confounder: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
    let base_logit = logit(spec.treated_share);
    let treatment: Vec<u8> = confounder.iter().map(|&u| u8::from(rng.random::<f64>() < sigmoid(base_logit + spec.gamma * u))).collect();

    let (nodes, mut edges) = g0.into_parts();
    for (e, &t) in edges.iter_mut().zip(&treatment) {
        if t == 1 {
            e.road_type = RoadType::Motorway;
        }
    }
    let graph = RoadGraph::build(nodes, edges)?;

    let betw = betweenness_scores(&graph, false);
    let s_node = zscore(&betw.iter().map(|b| b.ln_1p()).collect::<Vec<_>>());
    let mut structural = vec![0.0; m];
    let mut visual_latent = vec![0.0; m];
    for (k, (s, v)) in structural.iter_mut().zip(visual_latent.iter_mut()).enumerate() {
        let (a, b) = graph.endpoints(k);
        *s = (s_node[a] + s_node[b]) / 2.0;
        *v = (node_latent[a] + node_latent[b]) / 2.0;
    }
    let bs = if spec.signal_source.structural() { spec.beta_struct } else { 0.0 };
    let bv = if spec.signal_source.visual() { spec.beta_vis } else { 0.0 };
    let rate: Vec<f64> = (0..m)
        .map(|k| spec.base_rate * (bs * structural[k] + bv * visual_latent[k] + spec.planted_att * f64::from(treatment[k]) + spec.gamma * confounder[k]).exp())
        .collect();

    // visual vectors: the latent along one direction, noise elsewhere
    let mut vrng = stream(spec.seed, 3);
    let dir = unit_vector(&mut vrng, spec.d_visual);
    let embeddings: Vec<VisualEmbedding> = graph
        .nodes()
        .iter()
        .enumerate()
        .map(|(v, node)| {
            let h = if spec.signal_source.visual() { node_latent[v] } else { 0.0 };
            let vector = dir.iter().map(|d| h * d + 0.3 * vrng.sample::<f64, _>(StandardNormal)).collect();
            VisualEmbedding { node: node.id, vector }
        })
        .collect();

    let months = spec.month_range().months();
    let mut arng = stream(spec.seed, 4);
    let dists: Vec<Poisson<f64>> = rate.iter().map(|&r| Poisson::new(r).map_err(|e| SynthError::Spec(format!("rate {r}: {e}")))).collect::<Result<_, _>>()?;
    let mut counts = Vec::with_capacity(months.len());
    let mut accidents = Vec::new();
    for ym in &months {
        let mut row = Vec::with_capacity(m);
        for (k, d) in dists.iter().enumerate() {
            let c = d.sample(&mut arng) as u32;
            row.push(c);
            let (a, b) = graph.endpoints(k);
            let (pa, pb) = (graph.nodes()[a].point, graph.nodes()[b].point);
            for _ in 0..c {
                let f = arng.random_range(0.2..0.8);
                let location = GeoPoint::new(pa.lat() + f * (pb.lat() - pa.lat()), pa.lon() + f * (pb.lon() - pa.lon()))?;
                accidents.push(AccidentRecord { year: ym.year, month: ym.month, location, matched_edge: None, score: None });
            }
        }
        counts.push(row);
    }

    let mut wrng = stream(spec.seed, 5);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut weather = Vec::with_capacity(n * months.len());
    for ym in &months {
        let season = (2.0 * std::f64::consts::PI * (f64::from(ym.month) - 1.0) / 12.0).cos();
        let base_prcp = 70.0 + 20.0 * noise.sample(&mut wrng);
        for node in graph.nodes() {
            let tavg = 13.0 - 11.0 * season + noise.sample(&mut wrng);
            let spread = 4.0 + wrng.random::<f64>() * 2.0;
            let prcp = (base_prcp + 15.0 * noise.sample(&mut wrng)).max(0.0);
            let mut obs = WeatherObservation {
                node: node.id,
                year: ym.year,
                month: ym.month,
                tavg: Some(tavg),
                tmin: Some(tavg - spread),
                tmax: Some(tavg + spread),
                prcp: Some(prcp),
                wspd: Some(12.0 + 3.0 * noise.sample(&mut wrng).abs()),
                pres: Some(1015.0 + 5.0 * noise.sample(&mut wrng)),
            };
            if wrng.random::<f64>() < 0.02 {
                obs.prcp = None;
            }
            weather.push(obs);
        }
    }

    let mut trng = stream(spec.seed, 6);
    let mut volume = Vec::new();
    let last_year = months.last().map_or(spec.start_year, |ym| ym.year);
    for year in spec.start_year..=last_year {
        for e in graph.edges() {
            if trng.random::<f64>() < 0.1 {
                continue;
            }
            let base = if e.road_type == RoadType::Motorway { 40_000.0 } else { 6_000.0 };
            let aadt = (base * (0.3 * noise.sample(&mut trng)).exp()).round();
            volume.push(TrafficVolumeRecord { edge: e.id, year, aadt });
        }
    }

    let truth = GroundTruth { spec: *spec, treatment, structural, visual_latent, confounder, rate, counts };
    Ok(SyntheticState { graph, accidents, weather, volume, embeddings, truth })
}

/// Writes the state in the formats the ingest readers take.
pub fn write_state(state: &SyntheticState, dir: &Path) -> crate::Result<()> {
    std::fs::create_dir_all(dir)?;
    save_graph(&state.graph, &dir.join("nodes.csv"), &dir.join("edges.csv"))?;
    write_accidents(BufWriter::new(File::create(dir.join("accidents.csv"))?), &state.accidents, false)?;
    write_weather(BufWriter::new(File::create(dir.join("weather.csv"))?), &state.weather)?;
    write_volume(BufWriter::new(File::create(dir.join("volume.csv"))?), &state.volume)?;
    write_embeddings(BufWriter::new(File::create(dir.join("embeddings.csv"))?), &state.embeddings)?;
    std::fs::write(dir.join("truth.json"), serde_json::to_string(&state.truth).expect("truth serializes"))?;
    Ok(())
}

/// Aligns the raw accidents to edges and builds the monthly snapshots,
/// the same path real data takes.
pub fn state_snapshots(state: &SyntheticState, exec: Exec) -> crate::Result<(Vec<MonthlySnapshot>, BuildReport)> {
    let points: Vec<GeoPoint> = state.accidents.iter().map(|a| a.location).collect();
    let matches = match_all(&points, &state.graph, Metric::EuclideanDeg, exec)?;
    let matched: Vec<AccidentRecord> =
        state.accidents.iter().zip(&matches).map(|(a, m)| AccidentRecord { matched_edge: Some(m.edge), score: Some(m.score), ..*a }).collect();
    let range = state.truth.spec.month_range();
    Ok(build_monthly_snapshots(&state.graph, &matched, &state.weather, &state.volume, &state.embeddings, range, SnapshotOptions::default())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub planted_att: f64,
    pub gamma: f64,
    /// Confounder per unit.
    pub confounder: Vec<f64>,
}

/// A causal frame of `frame_units` units. The first embedding coordinate
/// is the confounder, the rest are covariates; all are mixed by a random
/// rotation. Outcomes are log rates plus noise.
pub fn gen_frame(spec: &SynthSpec) -> Result<(CausalFrame, FrameTruth), SynthError> {
    spec.validate()?;
    if spec.frame_units < 2 {
        return Err(SynthError::Spec("frame needs at least 2 units".into()));
    }
    let (n, d) = (spec.frame_units, spec.frame_dim);
    let mut rng = stream(spec.seed, 7);
    // random orthogonal mixing via Gram-Schmidt
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    while basis.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let beta: Vec<f64> = (0..d).map(|j| if j == 0 { 0.0 } else { 0.5 / j as f64 }).collect();
    let base_logit = logit(spec.treated_share.clamp(0.05, 0.95));
    let log_base = spec.base_rate.ln();
    let mut data = Vec::with_capacity(n * d);
    let (mut t, mut y, mut u) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let ui = z[0];
        let ti = u8::from(rng.random::<f64>() < sigmoid(base_logit + spec.gamma * ui));
        let eps: f64 = rng.sample(StandardNormal);
        let cov: f64 = z.iter().zip(&beta).map(|(a, b)| a * b).sum();
        y.push(log_base + cov + spec.planted_att * f64::from(ti) + spec.gamma * ui + spec.frame_noise * eps);
        for b in &basis {
            data.push(b.iter().zip(&z).map(|(p, q)| p * q).sum());
        }
        t.push(ti);
        u.push(ui);
    }
    let emb = Tensor::from_vec(n, d, data).expect("frame shape");
    let frame = CausalFrame::new(emb, t, y).map_err(|e| SynthError::Spec(e.to_string()))?;
    Ok((frame, FrameTruth { planted_att: spec.planted_att, gamma: spec.gamma, confounder: u }))
}
