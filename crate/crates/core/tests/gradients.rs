mod common;

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use roadrisk::gnn::*;
use roadrisk::ingest::{MonthlySnapshot, NormStats};
use roadrisk::nn::{Linear, Mlp, ParamStore, Tensor};
use roadrisk::par::Exec;
use roadrisk::synth::{gen_state, state_snapshots, SynthSpec};
use roadrisk::train::snapshot_loss;

use common::grad_check as check;

fn rand_tensor(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| r.random::<f64>() * 2.0 - 1.0).collect()).unwrap()
}

#[test]
fn elementwise_and_structural_ops() {
    let mut r = common::rng(1);
    let mut store = ParamStore::new();
    let a = store.add("a", rand_tensor(&mut r, 5, 3)).unwrap();
    let b = store.add("b", rand_tensor(&mut r, 3, 4)).unwrap();
    let bias = store.add("bias", rand_tensor(&mut r, 1, 4)).unwrap();
    let c = store.add("c", rand_tensor(&mut r, 5, 4)).unwrap();
    let col = store.add("col", rand_tensor(&mut r, 5, 1)).unwrap();
    let s = store.add("s", rand_tensor(&mut r, 1, 1)).unwrap();
    let gather: Arc<[usize]> = vec![4, 0, 0, 2, 3, 1, 4].into();
    let scatter: Arc<[usize]> = vec![1, 1, 0, 2, 2, 2, 0].into();
    let targets: Arc<[f64]> = vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0].into();
    let counts: Arc<[f64]> = vec![0.0, 2.0, 1.0, 0.0, 3.0, 1.0, 0.0].into();
    let worst = check(&mut store, |t, st| {
        let (a, b, bias, c, col, s) = (t.param(st, a).unwrap(), t.param(st, b).unwrap(), t.param(st, bias).unwrap(), t.param(st, c).unwrap(), t.param(st, col).unwrap(), t.param(st, s).unwrap());
        let ab = t.affine(a, b, bias).unwrap();
        let x = t.mul(ab, c).unwrap();
        let x = t.sub(x, c).unwrap();
        let sig = t.sigmoid(x).unwrap();
        let sp = t.softplus(ab).unwrap();
        let sm = t.softmax_rows(c).unwrap();
        let y = t.add(sig, sp).unwrap();
        let y = t.add(y, sm).unwrap();
        let y = t.scale(y, 0.7).unwrap();
        let y = t.add_scalar(y, -0.4).unwrap();
        let y = t.row_scale(y, col).unwrap();
        let y = t.scalar_scale(y, s).unwrap();
        let cat = t.concat_cols(y, a).unwrap();
        let sl = t.slice_cols(cat, 2, 4).unwrap();
        let rl = t.relu(sl).unwrap();
        let g = t.gather_rows(rl, gather.clone()).unwrap();
        let sc = t.scatter_add_rows(g, scatter.clone(), 3).unwrap();
        let m = t.mean_all(sc).unwrap();
        let z = t.gather_rows(ab, gather.clone()).unwrap();
        let z = t.slice_cols(z, 1, 1).unwrap();
        let bce = t.bce_with_logits(z, targets.clone()).unwrap();
        let p = t.softplus(z).unwrap();
        let l1 = t.l1(p, counts.clone()).unwrap();
        let tot = t.add(m, bce).unwrap();
        let tot = t.add(tot, l1).unwrap();
        let ssum = t.sum_all(sp).unwrap();
        let ssum = t.scale(ssum, 0.01).unwrap();
        t.add(tot, ssum).unwrap()
    });
    println!("ops worst rel err {worst:e}");
}

#[test]
fn linear_and_mlp_layers() {
    let mut r = common::rng(2);
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "lin", 4, 3, true, &mut r).unwrap();
    let mlp = Mlp::new(&mut store, "mlp", &[3, 6, 5, 2], true, &mut r).unwrap();
    let x = rand_tensor(&mut r, 7, 4);
    check(&mut store, |t, st| {
        let xv = t.input(x.clone()).unwrap();
        let h = lin.forward(t, st, xv).unwrap();
        let o = mlp.forward(t, st, h).unwrap();
        let o = t.softplus(o).unwrap();
        t.mean_all(o).unwrap()
    });
}

fn tiny_snapshot(task_seed: u64) -> (roadrisk::RoadGraph, MonthlySnapshot) {
    let spec = SynthSpec { n_nodes: 14, radius: 0.45, months: 36, d_visual: 3, seed: task_seed, ..SynthSpec::default() };
    let st = gen_state(&spec).unwrap();
    let (mut snaps, _) = state_snapshots(&st, Exec::Sequential).unwrap();
    let stats = NormStats::fit(&snaps).unwrap();
    stats.apply_all(&mut snaps).unwrap();
    // a month with both classes and a nonzero count spread
    let s = snaps.into_iter().find(|s| s.labels_binary.contains(&1) && s.labels_binary.contains(&0)).unwrap();
    (st.graph, s)
}

#[test]
fn full_model_every_head_and_loss() {
    let (g, s) = tiny_snapshot(4);
    for task in [Task::Classification, Task::Regression] {
        for mode in FusionMode::ALL {
            for (aggregator, learn_eps, symmetrize) in [(Aggregator::Sum, true, false), (Aggregator::Mean, false, true)] {
                let mp = MessagePassingConfig { layers: 2, hidden: 5, embed_dim: 4, aggregator, eps: 0.1, learn_eps, symmetrize };
                let fusion = FusionConfig { mode, experts: 3, gate_hidden: 3 };
                let mut model = FusionModel::new(ModelConfig::new(mp, fusion, task, s.visual_features.cols()), 9).unwrap();
                let plan = GraphPlan::new(&g, symmetrize);
                let idx: Vec<usize> = (0..s.edge_count()).collect();
                let mut store = std::mem::take(&mut model.store);
                let worst = check(&mut store, |t, st| {
                    let m = FusionModel { store: st.clone(), ..model.clone() };
                    snapshot_loss(&m, t, &plan, &s, &idx).unwrap()
                });
                println!("{task:?} {} {aggregator:?}: worst rel err {worst:e}", mode.name());
            }
        }
    }
}

