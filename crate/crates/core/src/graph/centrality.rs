//! Directed betweenness centrality with Brandes-style dependency
//! accumulation.
//!
//! Parallel edges collapse to one arc (the shortest, when weighted) and
//! self-loops are ignored, so path counts are over node sequences. Ties
//! between equal-length shortest paths split dependency evenly.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use super::{NodeId, RoadGraph};
use crate::par::Exec;

/// Sources per work unit. Fixed so the summation order does not depend on
/// the thread count.
const SOURCE_CHUNK: usize = 32;

/// Normalized scores keyed by node id.
pub fn betweenness_centrality(g: &RoadGraph, weighted: bool) -> BTreeMap<NodeId, f64> {
    let scores = betweenness_scores(g, weighted);
    g.nodes().iter().map(|n| n.id).zip(scores).collect()
}

/// Normalized scores in node order.
pub fn betweenness_scores(g: &RoadGraph, weighted: bool) -> Vec<f64> {
    betweenness_scores_with(g, weighted, Exec::default())
}

pub fn betweenness_scores_with(g: &RoadGraph, weighted: bool, exec: Exec) -> Vec<f64> {
    let n = g.node_count();
    if n < 3 {
        return vec![0.0; n];
    }
    let succ = simple_successors(g);
    let chunks = n.div_ceil(SOURCE_CHUNK);
    let partial = exec.map_indexed(chunks, |c| {
        let mut acc = vec![0.0; n];
        let mut work = Workspace::new(n);
        for s in c * SOURCE_CHUNK..((c + 1) * SOURCE_CHUNK).min(n) {
            if weighted {
                work.dijkstra(&succ, s);
            } else {
                work.bfs(&succ, s);
            }
            work.accumulate(s, &mut acc);
        }
        acc
    });
    let mut total = vec![0.0; n];
    for acc in &partial {
        for (t, a) in total.iter_mut().zip(acc) {
            *t += a;
        }
    }
    let norm = ((n - 1) * (n - 2)) as f64;
    total.iter_mut().for_each(|t| *t /= norm);
    total
}

/// Deduplicated successor lists `(target, min length)`, sorted by target.
fn simple_successors(g: &RoadGraph) -> Vec<Vec<(usize, f64)>> {
    let mut succ: Vec<Vec<(usize, f64)>> = vec![Vec::new(); g.node_count()];
    for (k, e) in g.edges().iter().enumerate() {
        let (a, b) = g.endpoints(k);
        if a != b {
            succ[a].push((b, e.length_m));
        }
    }
    for list in &mut succ {
        list.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
        list.dedup_by_key(|x| x.0);
    }
    succ
}

struct Workspace {
    dist: Vec<f64>,
    sigma: Vec<f64>,
    delta: Vec<f64>,
    preds: Vec<Vec<usize>>,
    order: Vec<usize>,
    settled: Vec<bool>,
}

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Item {
    // min-heap on distance, then node position
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl Workspace {
    fn new(n: usize) -> Self {
        Workspace {
            dist: vec![f64::INFINITY; n],
            sigma: vec![0.0; n],
            delta: vec![0.0; n],
            preds: vec![Vec::new(); n],
            order: Vec::with_capacity(n),
            settled: vec![false; n],
        }
    }

    fn reset(&mut self, s: usize) {
        self.dist.fill(f64::INFINITY);
        self.sigma.fill(0.0);
        self.delta.fill(0.0);
        self.settled.fill(false);
        self.preds.iter_mut().for_each(Vec::clear);
        self.order.clear();
        self.dist[s] = 0.0;
        self.sigma[s] = 1.0;
    }

    fn bfs(&mut self, succ: &[Vec<(usize, f64)>], s: usize) {
        self.reset(s);
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            self.order.push(v);
            for &(w, _) in &succ[v] {
                if self.dist[w].is_infinite() {
                    self.dist[w] = self.dist[v] + 1.0;
                    queue.push_back(w);
                }
                if self.dist[w] == self.dist[v] + 1.0 {
                    self.sigma[w] += self.sigma[v];
                    self.preds[w].push(v);
                }
            }
        }
    }

    fn dijkstra(&mut self, succ: &[Vec<(usize, f64)>], s: usize) {
        self.reset(s);
        let mut heap = BinaryHeap::from([Item(0.0, s)]);
        while let Some(Item(d, v)) = heap.pop() {
            if self.settled[v] || d > self.dist[v] {
                continue;
            }
            self.settled[v] = true;
            self.order.push(v);
            for &(w, len) in &succ[v] {
                let nd = d + len;
                if nd < self.dist[w] {
                    self.dist[w] = nd;
                    self.sigma[w] = self.sigma[v];
                    self.preds[w].clear();
                    self.preds[w].push(v);
                    heap.push(Item(nd, w));
                } else if nd == self.dist[w] {
                    self.sigma[w] += self.sigma[v];
                    self.preds[w].push(v);
                }
            }
        }
    }

    fn accumulate(&mut self, s: usize, acc: &mut [f64]) {
        while let Some(w) = self.order.pop() {
            let coeff = (1.0 + self.delta[w]) / self.sigma[w];
            for &v in &self.preds[w] {
                self.delta[v] += self.sigma[v] * coeff;
            }
            if w != s {
                acc[w] += self.delta[w];
            }
        }
    }
}
