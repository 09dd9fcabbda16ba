//! Uniform grid over edge endpoints with certified pruning.
//!
//! A query collects edges with an endpoint inside a square of half-width
//! `r` degrees around the point, scores them, and accepts the best one only
//! if a lower bound on the penalty `D(a,c) + D(b,c) - D(a,b)` of every edge
//! outside the square exceeds the best penalty found. Otherwise `r` doubles;
//! once the square covers all nodes the query degenerates to a full scan.
//! The result is therefore always identical to the exhaustive scan.
//!
//! Bound: for an edge outside the square both endpoints are at Chebyshev
//! degree offset `> r` from `c`. With `D_lo` the planar distance using the
//! smallest longitude scale `c_min` in the latitude band (a true metric),
//! `D_lo <= D <= kappa * D_lo` where `kappa = c_max / c_min`, so
//! `penalty >= 2 * D_lo(a,c) - (1 + kappa) * D(a,b) >= 2 r c_min - (1 + kappa) L_max`.
//! Haversine is a metric, giving `penalty >= 2 m - 2 L_max` with `m` the
//! smallest great-circle distance compatible with the offset.

use std::collections::HashMap;

use super::{better, edge_score, AlignError, EdgeMatch, Metric, EARTH_RADIUS_M};
use crate::graph::{EdgeId, GeoPoint, RoadGraph};

const METERS_PER_DEGREE: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone)]
pub struct EdgeIndex {
    metric: Metric,
    ends: Vec<(GeoPoint, GeoPoint)>,
    ids: Vec<EdgeId>,
    cells: HashMap<(i64, i64), Vec<u32>>,
    cell_deg: f64,
    start_radius_deg: f64,
    max_len: f64,
    lat_range: (f64, f64),
    lon_range: (f64, f64),
}

impl EdgeIndex {
    pub fn build(g: &RoadGraph, metric: Metric) -> Result<Self, AlignError> {
        if g.edge_count() == 0 {
            return Err(AlignError::EmptyGraph);
        }
        let pts = |k: usize| {
            let (a, b) = g.endpoints(k);
            (g.nodes()[a].point, g.nodes()[b].point)
        };
        let ends: Vec<_> = (0..g.edge_count()).map(pts).collect();
        let ids = g.edges().iter().map(|e| e.id).collect();
        let lens: Vec<f64> = ends.iter().map(|&(a, b)| metric.distance(a, b)).collect();
        let max_len = lens.iter().copied().fold(0.0, f64::max);
        let avg = lens.iter().sum::<f64>() / lens.len() as f64;
        let avg_deg = match metric {
            Metric::EuclideanDeg => avg,
            Metric::HaversineM => avg / METERS_PER_DEGREE,
        };
        let start_radius_deg = if avg_deg > 1e-9 { 2.0 * avg_deg } else { 1e-4 };
        let cell_deg = start_radius_deg;

        let mut lat_range = (f64::INFINITY, f64::NEG_INFINITY);
        let mut lon_range = (f64::INFINITY, f64::NEG_INFINITY);
        let mut cells: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
        for (k, &(a, b)) in ends.iter().enumerate() {
            let ca = cell_of(a, cell_deg);
            let cb = cell_of(b, cell_deg);
            cells.entry(ca).or_default().push(k as u32);
            if cb != ca {
                cells.entry(cb).or_default().push(k as u32);
            }
            for p in [a, b] {
                lat_range = (lat_range.0.min(p.lat()), lat_range.1.max(p.lat()));
                lon_range = (lon_range.0.min(p.lon()), lon_range.1.max(p.lon()));
            }
        }
        Ok(EdgeIndex { metric, ends, ids, cells, cell_deg, start_radius_deg, max_len, lat_range, lon_range })
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    /// Best edge for `c`; identical to the exhaustive scan.
    pub fn best_edge(&self, c: GeoPoint) -> Result<EdgeMatch, AlignError> {
        let mut r = self.start_radius_deg;
        let mut scratch = Vec::new();
        loop {
            if self.covers_all(c, r) {
                return Ok(self.scan((0..self.ends.len() as u32).collect::<Vec<_>>().as_slice(), c));
            }
            self.candidates(c, r, &mut scratch);
            if !scratch.is_empty() {
                let best = self.scan(&scratch, c);
                let penalty = -best.score;
                if let Some(lb) = self.outside_penalty_bound(c, r) {
                    let margin = 1e-9 * (1.0 + penalty.abs() + lb.abs());
                    if lb > penalty + margin {
                        return Ok(best);
                    }
                }
            }
            r *= 2.0;
        }
    }

    fn scan(&self, cand: &[u32], c: GeoPoint) -> EdgeMatch {
        let mut best: Option<EdgeMatch> = None;
        for &k in cand {
            let k = k as usize;
            let (a, b) = self.ends[k];
            let score = edge_score(self.metric, a, b, c);
            if better(score, self.ids[k], best.as_ref()) {
                best = Some(EdgeMatch { edge: self.ids[k], position: k, score });
            }
        }
        best.expect("candidate set is non-empty")
    }

    fn covers_all(&self, c: GeoPoint, r: f64) -> bool {
        c.lat() - r <= self.lat_range.0
            && c.lat() + r >= self.lat_range.1
            && c.lon() - r <= self.lon_range.0
            && c.lon() + r >= self.lon_range.1
    }

    fn candidates(&self, c: GeoPoint, r: f64, out: &mut Vec<u32>) {
        out.clear();
        let lo = cell_of_raw(c.lat() - r, c.lon() - r, self.cell_deg);
        let hi = cell_of_raw(c.lat() + r, c.lon() + r, self.cell_deg);
        let span = ((hi.0 - lo.0 + 1) as f64) * ((hi.1 - lo.1 + 1) as f64);
        if span > self.cells.len() as f64 {
            for (key, list) in &self.cells {
                if (lo.0..=hi.0).contains(&key.0) && (lo.1..=hi.1).contains(&key.1) {
                    out.extend_from_slice(list);
                }
            }
        } else {
            for i in lo.0..=hi.0 {
                for j in lo.1..=hi.1 {
                    if let Some(list) = self.cells.get(&(i, j)) {
                        out.extend_from_slice(list);
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
    }

    /// Lower bound on the penalty of any edge with both endpoints outside
    /// the square of half-width `r` around `c`. `None` when no useful bound
    /// exists (near the poles).
    fn outside_penalty_bound(&self, c: GeoPoint, r: f64) -> Option<f64> {
        let lo = self.lat_range.0.min(c.lat());
        let hi = self.lat_range.1.max(c.lat());
        let far = lo.abs().max(hi.abs());
        let near = if lo <= 0.0 && hi >= 0.0 { 0.0 } else { lo.abs().min(hi.abs()) };
        let c_min = far.to_radians().cos();
        if c_min < 1e-6 {
            return None;
        }
        match self.metric {
            Metric::EuclideanDeg => {
                let kappa = near.to_radians().cos() / c_min;
                Some(2.0 * r * c_min - (1.0 + kappa) * self.max_len)
            }
            Metric::HaversineM => {
                let max_dlon = (c.lon() - self.lon_range.0).abs().max((c.lon() - self.lon_range.1).abs());
                if max_dlon > 360.0 - r {
                    return None;
                }
                let rr = r.min(180.0).to_radians();
                let by_lat = rr;
                let by_lon = 2.0 * (c_min * (rr / 2.0).sin()).min(1.0).asin();
                let m = EARTH_RADIUS_M * by_lat.min(by_lon);
                Some(2.0 * m - 2.0 * self.max_len)
            }
        }
    }
}

fn cell_of(p: GeoPoint, cell: f64) -> (i64, i64) {
    cell_of_raw(p.lat(), p.lon(), cell)
}

fn cell_of_raw(lat: f64, lon: f64, cell: f64) -> (i64, i64) {
    ((lat / cell).floor() as i64, (lon / cell).floor() as i64)
}

#[cfg(test)]
mod tests {
    use super::super::match_accident_full_scan;
    use super::*;
    use crate::graph::{NodeId, RoadEdge, RoadNode, RoadType};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_graph(rng: &mut ChaCha8Rng, n: usize, m: usize) -> RoadGraph {
        let nodes: Vec<_> = (0..n)
            .map(|i| RoadNode {
                id: NodeId(i as u64),
                point: GeoPoint::new(39.0 + rng.random::<f64>() * 0.4, -75.5 + rng.random::<f64>() * 0.4).unwrap(),
            })
            .collect();
        let mut edges = Vec::new();
        while edges.len() < m {
            let a = rng.random_range(0..n);
            // mostly local edges with a few long ones
            let b = if rng.random::<f64>() < 0.95 { (a + rng.random_range(1..4)) % n } else { rng.random_range(0..n) };
            if a == b {
                continue;
            }
            let id = EdgeId(rng.random_range(0..1_000_000));
            if edges.iter().any(|e: &RoadEdge| e.id == id) {
                continue;
            }
            edges.push(RoadEdge::new(id, NodeId(a as u64), NodeId(b as u64), true, RoadType::Road, 1.0).unwrap());
        }
        RoadGraph::build(nodes, edges).unwrap()
    }

    #[test]
    fn index_equals_full_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for metric in [Metric::EuclideanDeg, Metric::HaversineM] {
            let g = random_graph(&mut rng, 300, 600);
            let idx = EdgeIndex::build(&g, metric).unwrap();
            for _ in 0..200 {
                let c = GeoPoint::new(38.9 + rng.random::<f64>() * 0.6, -75.6 + rng.random::<f64>() * 0.6).unwrap();
                let fast = idx.best_edge(c).unwrap();
                let slow = match_accident_full_scan(c, &g, metric).unwrap();
                assert_eq!(fast.edge, slow.edge);
                assert_eq!(fast.score, slow.score);
                assert!(fast.score <= 0.0);
            }
        }
    }
}
