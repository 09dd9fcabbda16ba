//! Merging runs of pass-through nodes into single edges.

use std::collections::HashSet;

use super::{NodeId, RoadEdge, RoadGraph};

/// Removes every unpinned node with exactly one in-edge and one out-edge
/// whose two edges agree on road type and one-way flag, replacing the pair
/// by a single edge with the summed length.
///
/// The merged edge keeps the smaller of the two edge ids and the earlier of
/// the two positions in edge order. Merges that would create a self-loop
/// (a two-node cycle) are skipped, so reachability between retained nodes
/// is unchanged.
pub fn contract_chains(g: &RoadGraph, pinned: &HashSet<NodeId>) -> RoadGraph {
    let n = g.node_count();
    let mut slots: Vec<Option<RoadEdge>> = g.edges().iter().cloned().map(Some).collect();
    let mut ends: Vec<(usize, usize)> = (0..g.edge_count()).map(|k| g.endpoints(k)).collect();
    let mut out_adj: Vec<Vec<usize>> = (0..n).map(|v| g.out_edges(v).to_vec()).collect();
    let mut in_adj: Vec<Vec<usize>> = (0..n).map(|v| g.in_edges(v).to_vec()).collect();
    let mut removed = vec![false; n];

    for v in 0..n {
        if pinned.contains(&g.nodes()[v].id) || in_adj[v].len() != 1 || out_adj[v].len() != 1 {
            continue;
        }
        let (ein, eout) = (in_adj[v][0], out_adj[v][0]);
        let (u, _) = ends[ein];
        let (_, w) = ends[eout];
        if ein == eout || u == v || w == v || u == w {
            continue;
        }
        let (a, b) = (slots[ein].as_ref().unwrap(), slots[eout].as_ref().unwrap());
        if a.road_type != b.road_type || a.one_way != b.one_way {
            continue;
        }
        let merged = RoadEdge {
            id: a.id.min(b.id),
            start: a.start,
            end: b.end,
            one_way: a.one_way,
            road_type: a.road_type,
            length_m: a.length_m + b.length_m,
            is_loop: false,
        };
        let (keep, drop) = (ein.min(eout), ein.max(eout));
        slots[keep] = Some(merged);
        slots[drop] = None;
        ends[keep] = (u, w);
        replace(&mut out_adj[u], ein, keep);
        replace(&mut in_adj[w], eout, keep);
        in_adj[v].clear();
        out_adj[v].clear();
        removed[v] = true;
    }

    let nodes = g
        .nodes()
        .iter()
        .zip(&removed)
        .filter(|(_, r)| !**r)
        .map(|(n, _)| *n)
        .collect();
    let edges = slots.into_iter().flatten().collect();
    RoadGraph::build(nodes, edges).expect("contraction preserves graph validity")
}

fn replace(list: &mut [usize], from: usize, to: usize) {
    for x in list.iter_mut() {
        if *x == from {
            *x = to;
        }
    }
}
