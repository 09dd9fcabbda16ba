#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roadrisk::nn::{ParamStore, Tape, Tensor, Var};
use roadrisk::{EdgeId, GeoPoint, NodeId, RoadEdge, RoadGraph, RoadNode, RoadType};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random directed multigraph on `n` nodes with `m` arcs, node ids
/// shuffled away from positions, optional self-loops and parallel arcs.
/// Returns the graph and its arcs as positions with lengths.
pub fn random_graph(r: &mut ChaCha8Rng, n: usize, m: usize, integer_lengths: bool) -> (RoadGraph, Vec<(usize, usize, f64)>) {
    let nodes: Vec<RoadNode> = (0..n)
        .map(|i| RoadNode { id: NodeId(1000 + 7 * i as u64), point: GeoPoint::new(39.0 + r.random::<f64>() * 0.1, -75.5 + r.random::<f64>() * 0.1).unwrap() })
        .collect();
    let mut edges = Vec::new();
    let mut arcs = Vec::new();
    for k in 0..m {
        let a = r.random_range(0..n);
        let b = r.random_range(0..n);
        let len = if integer_lengths { r.random_range(1..4) as f64 } else { 1.0 + r.random::<f64>() * 9.0 };
        let id = EdgeId(5 + 3 * k as u64);
        let e = if a == b {
            RoadEdge::new_loop(id, nodes[a].id, true, RoadType::Residential, len).unwrap()
        } else {
            RoadEdge::new(id, nodes[a].id, nodes[b].id, r.random_bool(0.5), RoadType::Residential, len).unwrap()
        };
        edges.push(e);
        arcs.push((a, b, len));
    }
    (RoadGraph::build(nodes, edges).unwrap(), arcs)
}

/// Random straight segments in a small box, for alignment.
pub fn segment_graph(r: &mut ChaCha8Rng, n: usize, m: usize) -> RoadGraph {
    let nodes: Vec<RoadNode> = (0..n)
        .map(|i| RoadNode { id: NodeId(i as u64), point: GeoPoint::new(38.6 + r.random::<f64>() * 0.2, -75.6 + r.random::<f64>() * 0.2).unwrap() })
        .collect();
    let edges: Vec<RoadEdge> = (0..m)
        .map(|k| {
            let a = r.random_range(0..n);
            let mut b = r.random_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            RoadEdge::new(EdgeId(m as u64 - k as u64), nodes[a].id, nodes[b].id, false, RoadType::Primary, 100.0).unwrap()
        })
        .collect();
    RoadGraph::build(nodes, edges).unwrap()
}

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares every parameter gradient from one backward pass against
/// central differences of `loss`. Returns the worst relative error.
///
/// A coordinate whose stencil straddles a ReLU kink shows up as one-sided
/// differences that disagree with each other; there the analytic value has
/// to match one of the two sides instead, and such coordinates must stay
/// rare.
pub fn grad_check<F>(store: &mut ParamStore, loss: F) -> f64
where
    F: Fn(&mut Tape, &ParamStore) -> Var,
{
    let mut tape = Tape::new();
    let l = loss(&mut tape, store);
    store.zero_grads();
    tape.backward(l, store).unwrap();
    let ids: Vec<_> = store.ids().collect();
    let grads: Vec<Tensor> = ids.iter().map(|&id| store.grad(id).clone()).collect();
    let eval = |s: &ParamStore| {
        let mut t = Tape::new();
        let v = loss(&mut t, s);
        t.value(v).get(0, 0)
    };
    let mut worst: f64 = 0.0;
    let (mut total, mut kinks) = (0usize, 0usize);
    for (p, &id) in ids.iter().enumerate() {
        for e in 0..store.value(id).data().len() {
            let x0 = store.value(id).data()[e];
            store.value_mut(id).data_mut()[e] = x0 + H;
            let up = eval(store);
            store.value_mut(id).data_mut()[e] = x0 - H;
            let down = eval(store);
            store.value_mut(id).data_mut()[e] = x0;
            let mid = eval(store);
            let num = (up - down) / (2.0 * H);
            let ga = grads[p].data()[e];
            let err = rel_err(ga, num);
            total += 1;
            if err < TOL {
                worst = worst.max(err);
                continue;
            }
            let (fwd, bwd) = ((up - mid) / H, (mid - down) / H);
            let kink = rel_err(fwd, bwd) > 10.0 * TOL;
            let one_sided = rel_err(ga, fwd).min(rel_err(ga, bwd));
            assert!(kink && one_sided < TOL, "{}[{e}]: analytic {ga} numeric {num} (one-sided {fwd} / {bwd})", store.name(id));
            kinks += 1;
        }
    }
    assert!(kinks * 100 <= total, "{kinks} of {total} coordinates straddle a kink");
    if kinks > 0 {
        println!("{kinks} of {total} coordinates straddle a kink");
    }
    worst
}

