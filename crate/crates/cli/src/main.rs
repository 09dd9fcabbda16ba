//! `roadrisk` command-line pipeline.
//!
//! Every stage reads its inputs from, and writes its outputs to, the
//! output directory unless paths are given explicitly, so the default
//! pipeline is `synth`, `align`, `snapshot`, `train`, `evaluate`, `causal`
//! with one `--out-dir`.

mod config;
mod report;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use roadrisk::align::{match_all, Metric};
use roadrisk::causal::{self, CausalFrame, EmbeddingSource, Estimator, TreatmentSpec};
use roadrisk::gnn::{FusionModel, GraphPlan, ModelConfig};
use roadrisk::graph::io::{load_graph, save_graph};
use roadrisk::graph::{contract_chains, RoadGraph};
use roadrisk::ingest::{self, FeatureGroup, MonthRange, MonthlySnapshot, NormStats, ParseOptions, SplitSpec, YearMonth, YearRange};
use roadrisk::par::Exec;
use roadrisk::synth::{gen_frame, gen_state, write_state};
use roadrisk::train::{self, Experiment};
use roadrisk::{Error, Result};

use config::RunConfig;
use report::Report;

#[derive(Parser, Debug)]
#[command(name = "roadrisk", version, about = "Road accident risk modelling pipeline")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for outputs, and default location of inputs.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Load a node and an edge table, optionally contract chains, write them back.
    BuildGraph(BuildGraphArgs),
    /// Match accident points to edges.
    Align(AlignArgs),
    /// Build monthly feature snapshots.
    Snapshot(SnapshotArgs),
    /// Train a model on the train split, selecting on the valid split.
    Train(TrainArgs),
    /// Score a model on the test split.
    Evaluate(EvaluateArgs),
    /// Leave-one-out feature group ablation.
    Ablate(AblateArgs),
    /// Estimate a treatment effect per test year.
    Causal(CausalArgs),
    /// Generate a synthetic state in the ingest file formats.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Default)]
struct GraphPaths {
    #[arg(long)]
    nodes: Option<PathBuf>,
    #[arg(long)]
    edges: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BuildGraphArgs {
    #[command(flatten)]
    graph: GraphPaths,
    /// Merge chains of pass-through nodes into single edges.
    #[arg(long)]
    contract: bool,
    #[arg(long)]
    allow_loops: bool,
}

#[derive(Args, Debug)]
struct AlignArgs {
    #[command(flatten)]
    graph: GraphPaths,
    #[arg(long)]
    accidents: Option<PathBuf>,
    /// euclidean_deg or haversine_m.
    #[arg(long)]
    metric: Option<String>,
}

#[derive(Args, Debug)]
struct SnapshotArgs {
    #[command(flatten)]
    graph: GraphPaths,
    /// Accidents with matched edges, as written by `align`.
    #[arg(long)]
    accidents: Option<PathBuf>,
    #[arg(long)]
    weather: Option<PathBuf>,
    #[arg(long)]
    volume: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Months to cover, `YYYY-MM..YYYY-MM`.
    #[arg(long)]
    range: Option<String>,
    /// mask or reject.
    #[arg(long)]
    weather_policy: Option<String>,
    /// Also write yearly aggregates.
    #[arg(long)]
    yearly: bool,
}

#[derive(Args, Debug, Default)]
struct SplitArgs {
    /// Training years, `YYYY` or `YYYY-YYYY`.
    #[arg(long)]
    train_years: Option<String>,
    #[arg(long)]
    valid_years: Option<String>,
    #[arg(long)]
    test_years: Option<String>,
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    /// none, basic, gated or moe.
    #[arg(long)]
    mode: Option<String>,
    /// classification or regression.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    experts: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// all_zeros_as_negatives or balanced_sample.
    #[arg(long)]
    negatives: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    graph: GraphPaths,
    #[arg(long)]
    snapshots: Option<PathBuf>,
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Write the initialized model without training it.
    #[arg(long)]
    init_only: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    graph: GraphPaths,
    #[arg(long)]
    snapshots: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    split: SplitArgs,
    /// Also write per-road-type metrics as CSV.
    #[arg(long)]
    road_type_table: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    graph: GraphPaths,
    #[arg(long)]
    snapshots: Option<PathBuf>,
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated feature groups to leave out one at a time.
    #[arg(long)]
    groups: Option<String>,
}

#[derive(Args, Debug)]
struct CausalArgs {
    #[command(flatten)]
    graph: GraphPaths,
    #[arg(long)]
    snapshots: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Estimate on a frame CSV (`t,y,x0,...`) instead of a model.
    #[arg(long)]
    frame: Option<PathBuf>,
    #[command(flatten)]
    split: SplitArgs,
    /// `road_type=motorway`, `season=12,1,2`, `winter`, `precip>=60`.
    #[arg(long)]
    treatment: Option<String>,
    /// matching, psm, dr or naive.
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    clip_lo: Option<f64>,
    #[arg(long)]
    clip_hi: Option<f64>,
    /// standard or treated_only.
    #[arg(long)]
    dr_mode: Option<String>,
    /// fused or edge_features.
    #[arg(long)]
    embedding: Option<String>,
    /// Also write accidents per precipitation bin as CSV.
    #[arg(long)]
    precip_bins: Option<PathBuf>,
    #[arg(long)]
    bin_width: Option<f64>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    n_nodes: Option<usize>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    months: Option<usize>,
    #[arg(long)]
    d_visual: Option<usize>,
    /// visual, structural, both or none.
    #[arg(long)]
    signal: Option<String>,
    #[arg(long)]
    planted_att: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    frame_units: Option<usize>,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

fn parse<T: std::str::FromStr>(what: &str, s: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e| usage(format!("--{what}: {e}")))
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// Fails with the path in the message when an input file is missing.
fn need(p: &Path) -> Result<&Path> {
    match std::fs::metadata(p) {
        Ok(_) => Ok(p),
        Err(e) => Err(Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display())))),
    }
}

fn set_opt(slot: &mut Option<String>, v: &Option<String>) {
    if v.is_some() {
        slot.clone_from(v);
    }
}

struct Ctx {
    out: PathBuf,
    cfg: RunConfig,
}

impl Ctx {
    fn path(&self, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.out.join(name))
    }

    fn graph(&mut self, g: &GraphPaths) -> Result<RoadGraph> {
        self.cfg.paths.nodes = Some(self.path(&g.nodes.clone().or(self.cfg.paths.nodes.clone()), "nodes.csv"));
        self.cfg.paths.edges = Some(self.path(&g.edges.clone().or(self.cfg.paths.edges.clone()), "edges.csv"));
        load_graph(need(self.cfg.paths.nodes.as_ref().unwrap())?, need(self.cfg.paths.edges.as_ref().unwrap())?, false)
    }

    fn snapshots(&mut self, explicit: &Option<PathBuf>) -> Result<Vec<MonthlySnapshot>> {
        let dir = self.path(&explicit.clone().or(self.cfg.paths.snapshots.clone()), "snapshots");
        self.cfg.paths.snapshots = Some(dir.clone());
        let snaps = ingest::load_snapshots(need(&dir)?)?;
        if snaps.is_empty() {
            return Err(usage(format!("no snapshots in {}", dir.display())));
        }
        Ok(snaps.into_iter().filter(|s| s.month.is_some()).collect())
    }

    fn model_path(&mut self, explicit: &Option<PathBuf>) -> PathBuf {
        let p = self.path(&explicit.clone().or(self.cfg.paths.model.clone()), "model.txt");
        self.cfg.paths.model = Some(p.clone());
        p
    }

    /// Explicit split, else chronological thirds of the snapshot years.
    fn split(&mut self, a: &SplitArgs, snaps: &[MonthlySnapshot]) -> Result<SplitSpec> {
        set_opt(&mut self.cfg.split.train, &a.train_years);
        set_opt(&mut self.cfg.split.valid, &a.valid_years);
        set_opt(&mut self.cfg.split.test, &a.test_years);
        let years: Vec<i32> = {
            let mut y: Vec<i32> = snaps.iter().map(|s| s.year).collect();
            y.dedup();
            y
        };
        let thirds = || -> Result<[YearRange; 3]> {
            if years.len() < 3 {
                return Err(usage(format!("need at least 3 years of snapshots for a default split, found {}", years.len())));
            }
            let t = years.len() / 3;
            let r = |a: usize, b: usize| YearRange { start: years[a], end: years[b] };
            Ok([r(0, t - 1), r(t, 2 * t - 1), r(2 * t, years.len() - 1)])
        };
        let pick = |s: &Option<String>, i: usize| -> Result<YearRange> {
            match s {
                Some(v) => parse("split", v),
                None => Ok(thirds()?[i]),
            }
        };
        let spec = SplitSpec { train: pick(&self.cfg.split.train, 0)?, valid: pick(&self.cfg.split.valid, 1)?, test: pick(&self.cfg.split.test, 2)? };
        self.cfg.split.train = Some(spec.train.to_string());
        self.cfg.split.valid = Some(spec.valid.to_string());
        self.cfg.split.test = Some(spec.test.to_string());
        Ok(spec)
    }

    fn model_args(&mut self, a: &ModelArgs) -> Result<()> {
        let c = &mut self.cfg;
        if let Some(m) = &a.mode {
            c.fusion.mode = parse("mode", m)?;
        }
        if let Some(t) = &a.task {
            c.task = parse("task", t)?;
        }
        if let Some(n) = &a.negatives {
            c.train.negatives = parse("negatives", n)?;
        }
        set(&mut c.mp.layers, a.layers);
        set(&mut c.mp.hidden, a.hidden);
        set(&mut c.mp.embed_dim, a.embed_dim);
        set(&mut c.fusion.experts, a.experts);
        set(&mut c.train.epochs, a.epochs);
        set(&mut c.train.lr, a.lr);
        c.train.seed = c.seed;
        Ok(())
    }

    fn experiment(&self, d_visual: usize) -> Experiment {
        Experiment { model: ModelConfig::new(self.cfg.mp, self.cfg.fusion, self.cfg.task, d_visual), train: self.cfg.train, drop: Vec::new() }
    }

    fn write_report(&self, name: &str, mut rep: Report) -> Result<PathBuf> {
        rep.config(&self.cfg);
        let p = self.out.join(name);
        std::fs::write(&p, rep.render())?;
        Ok(p)
    }
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        writeln!(w, "{}", r.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_build_graph(ctx: &mut Ctx, a: &BuildGraphArgs) -> Result<()> {
    let nodes = a.graph.nodes.clone().ok_or_else(|| usage("build-graph needs --nodes"))?;
    let edges = a.graph.edges.clone().ok_or_else(|| usage("build-graph needs --edges"))?;
    let g = load_graph(need(&nodes)?, need(&edges)?, a.allow_loops)?;
    let (n0, m0) = (g.node_count(), g.edge_count());
    let g = if a.contract { contract_chains(&g, &HashSet::new()) } else { g };
    save_graph(&g, &ctx.out.join("nodes.csv"), &ctx.out.join("edges.csv"))?;
    ctx.cfg.paths.nodes = Some(nodes);
    ctx.cfg.paths.edges = Some(edges);
    let mut rep = Report::new("build-graph");
    rep.int("nodes_in", n0).int("edges_in", m0).int("nodes", g.node_count()).int("edges", g.edge_count());
    rep.float("density", g.density()).float("average_edge_length_m", g.average_edge_length());
    println!("graph: {} nodes, {} edges (from {n0} nodes, {m0} edges)", g.node_count(), g.edge_count());
    ctx.write_report("graph_report.toml", rep)?;
    Ok(())
}

fn cmd_align(ctx: &mut Ctx, a: &AlignArgs) -> Result<()> {
    let g = ctx.graph(&a.graph)?;
    if let Some(m) = &a.metric {
        ctx.cfg.metric = parse::<Metric>("metric", m)?;
    }
    let acc_path = ctx.path(&a.accidents.clone().or(ctx.cfg.paths.accidents.clone()), "accidents.csv");
    ctx.cfg.paths.accidents = Some(acc_path.clone());
    let recs = ingest::read_accidents(need(&acc_path)?, ParseOptions::default())?;
    let points: Vec<_> = recs.iter().map(|r| r.location).collect();
    let matches = match_all(&points, &g, ctx.cfg.metric, Exec::default())?;
    let out: Vec<_> = recs.iter().zip(&matches).map(|(r, m)| ingest::AccidentRecord { matched_edge: Some(m.edge), score: Some(m.score), ..*r }).collect();
    ingest::write_accidents(BufWriter::new(File::create(ctx.out.join("accidents_matched.csv"))?), &out, true)?;
    let worst = matches.iter().map(|m| m.score).fold(0.0f64, f64::min);
    let exact = matches.iter().filter(|m| m.score == 0.0).count();
    eprintln!("align: matched {} accidents to {} edges, {exact} on-segment, worst score {worst:e}", out.len(), g.edge_count());
    let mut rep = Report::new("align");
    rep.int("accidents", out.len()).int("on_segment", exact).float("worst_score", worst).str("metric", ctx.cfg.metric.name());
    ctx.write_report("align_report.toml", rep)?;
    Ok(())
}

fn cmd_snapshot(ctx: &mut Ctx, a: &SnapshotArgs) -> Result<()> {
    let g = ctx.graph(&a.graph)?;
    let p = &mut ctx.cfg.paths;
    let acc = a.accidents.clone().or(p.accidents_matched.clone()).unwrap_or_else(|| ctx.out.join("accidents_matched.csv"));
    let wea = a.weather.clone().or(p.weather.clone()).unwrap_or_else(|| ctx.out.join("weather.csv"));
    let vol = a.volume.clone().or(p.volume.clone()).unwrap_or_else(|| ctx.out.join("volume.csv"));
    let emb = a.embeddings.clone().or(p.embeddings.clone()).unwrap_or_else(|| ctx.out.join("embeddings.csv"));
    (p.accidents_matched, p.weather, p.volume, p.embeddings) = (Some(acc.clone()), Some(wea.clone()), Some(vol.clone()), Some(emb.clone()));
    if let Some(w) = &a.weather_policy {
        ctx.cfg.weather_policy = parse("weather-policy", w)?;
    }
    let opts = ParseOptions::default();
    let accidents = ingest::read_accidents(need(&acc)?, opts)?;
    if accidents.iter().any(|r| r.matched_edge.is_none()) {
        return Err(usage(format!("{} has unmatched rows; run `align` first", acc.display())));
    }
    let weather = ingest::read_weather(need(&wea)?, opts)?;
    let volume = ingest::read_volume(need(&vol)?, opts)?;
    let embeddings = ingest::read_embeddings(need(&emb)?, opts)?;
    set_opt(&mut ctx.cfg.range, &a.range);
    let range: MonthRange = match &ctx.cfg.range {
        Some(r) => parse("range", r)?,
        None => {
            let months: Vec<(i32, u8)> = weather.iter().map(|w| (w.year, w.month)).chain(accidents.iter().map(|r| (r.year, r.month))).collect();
            let (lo, hi) = (months.iter().min(), months.iter().max());
            let (Some(&lo), Some(&hi)) = (lo, hi) else {
                return Err(usage("cannot infer --range from empty weather and accident tables"));
            };
            MonthRange::new(YearMonth::new(lo.0, lo.1)?, YearMonth::new(hi.0, hi.1)?)?
        }
    };
    ctx.cfg.range = Some(format!("{}..{}", range.start, range.end));
    let sopts = ingest::SnapshotOptions { weather_policy: ctx.cfg.weather_policy, ..Default::default() };
    let (mut snaps, br) = ingest::build_monthly_snapshots(&g, &accidents, &weather, &volume, &embeddings, range, sopts)?;
    if a.yearly {
        snaps.extend(ingest::aggregate_yearly(&snaps));
    }
    let dir = ctx.out.join("snapshots");
    ingest::save_snapshots(&dir, &snaps)?;
    ctx.cfg.paths.snapshots = Some(dir);
    println!("snapshot: {} snapshots, {} accidents used, visual dim {}", br.snapshots, br.accidents_used, br.visual_dim);
    let mut rep = Report::new("snapshot");
    rep.int("snapshots", snaps.len()).int("accidents_used", br.accidents_used).int("unmatched", br.unmatched).int("unknown_edge", br.unknown_edge);
    rep.int("out_of_range", br.out_of_range).int("nodes_without_embedding", br.nodes_without_embedding).int("visual_dim", br.visual_dim);
    rep.int("weather_missing_node_months", br.weather_missing_node_months).float("volume_coverage", br.volume_coverage);
    ctx.write_report("snapshot_report.toml", rep)?;
    Ok(())
}

fn split_snaps(ctx: &mut Ctx, a: &SplitArgs, snaps: Vec<MonthlySnapshot>) -> Result<ingest::Splits> {
    let spec = ctx.split(a, &snaps)?;
    Ok(ingest::temporal_split(snaps, &spec)?)
}

fn cmd_train(ctx: &mut Ctx, a: &TrainArgs) -> Result<()> {
    let g = ctx.graph(&a.graph)?;
    let snaps = ctx.snapshots(&a.snapshots)?;
    ctx.model_args(&a.model)?;
    let splits = split_snaps(ctx, &a.split, snaps)?;
    let exp = ctx.experiment(splits.train[0].visual_features.cols());
    exp.validate()?;
    let plan = GraphPlan::new(&g, exp.model.mp.symmetrize);
    let mut tr = splits.train.clone();
    let mut va = splits.valid.clone();
    let stats = NormStats::fit(&tr)?;
    stats.apply_all(&mut tr)?;
    stats.apply_all(&mut va)?;
    let mut model = FusionModel::new(exp.model, exp.train.seed)?;
    model.norm = Some(stats);
    let mut rep = Report::new("train");
    if a.init_only {
        rep.str("status", "initialized");
        println!("train: wrote untrained model");
    } else {
        let h = train::train(&mut model, &plan, &tr, &va, &exp.train)?;
        rep.str("status", "trained").int("best_epoch", h.best_epoch).float("best_valid_metric", h.best_metric);
        rep.floats("train_loss", &h.train_loss).floats("valid_metric", &h.valid_metric);
        println!("train: best epoch {} valid metric {:.4}", h.best_epoch, h.best_metric);
    }
    rep.int("test_split_reads", splits.test.access_count());
    rep.int("parameters", model.store.num_values());
    let path = ctx.model_path(&None);
    std::fs::write(&path, model.to_text())?;
    ctx.write_report("train_report.toml", rep)?;
    Ok(())
}

fn load_model(path: &Path) -> Result<FusionModel> {
    let text = std::fs::read_to_string(need(path)?)?;
    Ok(FusionModel::from_text(&text)?)
}

fn normalized(model: &FusionModel, snaps: &[MonthlySnapshot]) -> Result<Vec<MonthlySnapshot>> {
    let mut out = snaps.to_vec();
    if let Some(n) = &model.norm {
        n.apply_all(&mut out)?;
    }
    Ok(out)
}

fn cmd_evaluate(ctx: &mut Ctx, a: &EvaluateArgs) -> Result<()> {
    let g = ctx.graph(&a.graph)?;
    let snaps = ctx.snapshots(&a.snapshots)?;
    let mpath = ctx.model_path(&a.model);
    let model = load_model(&mpath)?;
    let splits = split_snaps(ctx, &a.split, snaps)?;
    let test = normalized(&model, splits.test.get())?;
    let plan = GraphPlan::new(&g, model.cfg.mp.symmetrize);
    let r = train::evaluate(&model, &g, &plan, &test)?;
    let mut rep = Report::new("evaluate");
    rep.int("n", r.n).opt_float("auroc", r.auroc).float("mae", r.mae).float("precision", r.precision).float("recall", r.recall).float("f1", r.f1);
    rep.float("positive_rate", r.positive_rate).str("mode", model.cfg.fusion.mode.name());
    for (rt, m) in &r.per_road_type {
        rep.section_float(&format!("road_type.{}", rt.replace(' ', "_")), "auroc", m.auroc).section_int(&format!("road_type.{}", rt.replace(' ', "_")), "n", m.n);
    }
    if let Some(p) = &a.road_type_table {
        let rows = r.per_road_type.iter().map(|(rt, m)| vec![rt.clone(), m.n.to_string(), m.positives.to_string(), m.auroc.map_or(String::new(), |v| v.to_string()), m.mae.to_string()]);
        write_csv(p, &["road_type", "n", "positives", "auroc", "mae"], rows)?;
    }
    println!("evaluate: auroc {} mae {:.4} f1 {:.4} over {} edge-months", r.auroc.map_or("undefined".into(), |v| format!("{v:.4}")), r.mae, r.f1, r.n);
    ctx.write_report("eval_report.toml", rep)?;
    Ok(())
}

fn cmd_ablate(ctx: &mut Ctx, a: &AblateArgs) -> Result<()> {
    let g = ctx.graph(&a.graph)?;
    let snaps = ctx.snapshots(&a.snapshots)?;
    ctx.model_args(&a.model)?;
    let splits = split_snaps(ctx, &a.split, snaps)?;
    set_opt(&mut ctx.cfg.ablate_groups, &a.groups);
    let groups: Vec<FeatureGroup> = match &ctx.cfg.ablate_groups {
        Some(s) => s.split(',').map(|x| parse("groups", x)).collect::<Result<_>>()?,
        None => FeatureGroup::ALL.to_vec(),
    };
    let exp = ctx.experiment(splits.train[0].visual_features.cols());
    let r = train::ablate(&g, &splits.train, &splits.valid, &splits.test, &exp, &groups, Exec::default())?;
    let mut rep = Report::new("ablate");
    rep.opt_float("full_auroc", r.full.auroc);
    for (grp, d) in &r.auroc_delta {
        rep.section_float(&format!("dropped.{}", grp.name()), "auroc", r.dropped[grp].auroc).section_float(&format!("dropped.{}", grp.name()), "auroc_delta", Some(*d));
        println!("ablate: without {:<13} auroc delta {d:+.4}", grp.name());
    }
    ctx.write_report("ablate_report.toml", rep)?;
    Ok(())
}

fn cmd_causal(ctx: &mut Ctx, a: &CausalArgs) -> Result<()> {
    let c = &mut ctx.cfg.causal;
    if let Some(t) = &a.treatment {
        c.treatment = parse::<TreatmentSpec>("treatment", t)?.to_string();
    }
    if let Some(e) = &a.estimator {
        c.estimator.estimator = parse("estimator", e)?;
    }
    if let Some(m) = &a.dr_mode {
        c.estimator.mode = parse("dr-mode", m)?;
    }
    if let Some(e) = &a.embedding {
        c.embedding = match e.as_str() {
            "fused" => EmbeddingSource::Fused,
            "edge_features" => EmbeddingSource::EdgeFeatures,
            _ => return Err(usage(format!("--embedding: unknown source {e:?}"))),
        };
    }
    set(&mut c.estimator.k, a.k);
    set(&mut c.estimator.clip.0, a.clip_lo);
    set(&mut c.estimator.clip.1, a.clip_hi);
    set(&mut c.bin_width, a.bin_width);
    let est = c.estimator;
    let mut rep = Report::new("causal");
    rep.str("estimator", est.estimator.name());
    if est.estimator == Estimator::Dr {
        rep.str("dr_note", "treated_only averages the correction over treated units, where the control term is zero; standard weights control residuals by e/(1-e)");
    }

    if let Some(fp) = a.frame.clone().or(ctx.cfg.paths.frame.clone()) {
        let frame: CausalFrame = causal::read_frame(&fp.display().to_string(), File::open(need(&fp)?)?)?;
        ctx.cfg.paths.frame = Some(fp);
        let r = causal::estimate(&frame, &est, Exec::default())?;
        result_fields(&mut rep, "", &r);
        println!("causal: {} att {:.4} (se {:.4}) treated {} control {}", est.estimator.name(), r.att, r.se, r.n_treated, r.n_control);
        ctx.write_report("causal_report.toml", rep)?;
        return Ok(());
    }

    let spec: TreatmentSpec = parse("treatment", &ctx.cfg.causal.treatment)?;
    let g = ctx.graph(&a.graph)?;
    let snaps = ctx.snapshots(&a.snapshots)?;
    let source = ctx.cfg.causal.embedding;
    let model = match source {
        EmbeddingSource::Fused => Some(load_model(&ctx.model_path(&a.model))?),
        EmbeddingSource::EdgeFeatures => None,
    };
    let splits = split_snaps(ctx, &a.split, snaps)?;
    let test = splits.test.get();
    let norm = match &model {
        Some(m) => normalized(m, test)?,
        None => test.to_vec(),
    };
    let plan = GraphPlan::new(&g, model.as_ref().is_some_and(|m| m.cfg.mp.symmetrize));
    let mut years: Vec<i32> = test.iter().map(|s| s.year).collect();
    years.dedup();
    let mut groups = Vec::new();
    for y in years {
        let idx: Vec<usize> = (0..test.len()).filter(|&i| test[i].year == y).collect();
        let raw: Vec<_> = idx.iter().map(|&i| test[i].clone()).collect();
        let nrm: Vec<_> = idx.iter().map(|&i| norm[i].clone()).collect();
        let frame = causal::frame_from_model(model.as_ref(), &g, &plan, &raw, &nrm, &spec, source)?;
        let r = causal::estimate(&frame, &est, Exec::default())?;
        println!("causal: {y} {} att {:.4} (se {:.4}) treated {} control {}", est.estimator.name(), r.att, r.se, r.n_treated, r.n_control);
        groups.push((y, r));
    }
    let s = causal::summarize(groups)?;
    rep.float("att_mean", s.mean_att).float("att_std", s.std_att);
    for (y, r) in &s.groups {
        result_fields(&mut rep, &format!("year.{y}"), r);
    }
    if let Some(p) = &a.precip_bins {
        let bins = causal::precipitation_bins(&g, test, ctx.cfg.causal.bin_width)?;
        write_csv(p, &["precip_mm_lo", "edge_months", "accidents"], bins.into_iter().map(|(lo, n, acc)| vec![lo.to_string(), n.to_string(), acc.to_string()]))?;
    }
    ctx.write_report("causal_report.toml", rep)?;
    Ok(())
}

fn result_fields(rep: &mut Report, section: &str, r: &causal::CausalResult) {
    let f = |rep: &mut Report, k: &str, v: f64| {
        if section.is_empty() {
            rep.float(k, v);
        } else {
            rep.section_float(section, k, Some(v));
        }
    };
    f(rep, "att", r.att);
    f(rep, "se", r.se);
    for (k, v) in [("n_treated", r.n_treated), ("n_control", r.n_control)] {
        if section.is_empty() {
            rep.int(k, v);
        } else {
            rep.section_int(section, k, v);
        }
    }
    if r.degenerate_propensity {
        rep.str("warning", "all clipped propensities sit on one bound");
    }
    if let Some(t) = r.literal_control_term {
        f(rep, "literal_control_term", t);
    }
}

fn cmd_synth(ctx: &mut Ctx, a: &SynthArgs) -> Result<()> {
    let s = &mut ctx.cfg.synth;
    set(&mut s.n_nodes, a.n_nodes);
    set(&mut s.radius, a.radius);
    set(&mut s.months, a.months);
    set(&mut s.d_visual, a.d_visual);
    set(&mut s.planted_att, a.planted_att);
    set(&mut s.gamma, a.gamma);
    set(&mut s.frame_units, a.frame_units);
    if let Some(src) = &a.signal {
        s.signal_source = parse("signal", src)?;
    }
    s.seed = ctx.cfg.seed;
    let spec = *s;
    let state = gen_state(&spec)?;
    write_state(&state, &ctx.out)?;
    let (frame, _) = gen_frame(&spec)?;
    causal::write_frame(BufWriter::new(File::create(ctx.out.join("frame.csv"))?), &frame)?;
    let mut rep = Report::new("synth");
    rep.int("nodes", state.graph.node_count()).int("edges", state.graph.edge_count()).int("accidents", state.accidents.len());
    rep.int("treated_edges", state.truth.treatment.iter().filter(|&&t| t == 1).count()).int("frame_units", frame.len());
    println!("synth: {} nodes, {} edges, {} accidents over {} months", state.graph.node_count(), state.graph.edge_count(), state.accidents.len(), spec.months);
    ctx.write_report("synth_report.toml", rep)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    std::fs::create_dir_all(&cli.out_dir)?;
    let mut ctx = Ctx { out: cli.out_dir, cfg };
    match &cli.cmd {
        Cmd::BuildGraph(a) => cmd_build_graph(&mut ctx, a),
        Cmd::Align(a) => cmd_align(&mut ctx, a),
        Cmd::Snapshot(a) => cmd_snapshot(&mut ctx, a),
        Cmd::Train(a) => cmd_train(&mut ctx, a),
        Cmd::Evaluate(a) => cmd_evaluate(&mut ctx, a),
        Cmd::Ablate(a) => cmd_ablate(&mut ctx, a),
        Cmd::Causal(a) => cmd_causal(&mut ctx, a),
        Cmd::Synth(a) => cmd_synth(&mut ctx, a),
    }
}

fn op_name(cmd: &Cmd) -> &'static str {
    match cmd {
        Cmd::BuildGraph(_) => "build-graph",
        Cmd::Align(_) => "align",
        Cmd::Snapshot(_) => "snapshot",
        Cmd::Train(_) => "train",
        Cmd::Evaluate(_) => "evaluate",
        Cmd::Ablate(_) => "ablate",
        Cmd::Causal(_) => "causal",
        Cmd::Synth(_) => "synth",
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let op = op_name(&cli.cmd);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}: {op}: {e}", e.module());
            ExitCode::from(e.kind().exit_code() as u8)
        }
    }
}
