mod common;

use proptest::prelude::*;
use rand::Rng;
use roadrisk::align::{match_accident_full_scan, match_all, EdgeIndex, Metric};
use roadrisk::causal::{knn_match, CausalFrame};
use roadrisk::graph::betweenness_scores_with;
use roadrisk::metrics::{auroc, auroc_counts};
use roadrisk::nn::Tensor;
use roadrisk::oracle::*;
use roadrisk::par::Exec;
use roadrisk::GeoPoint;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auroc_matches_pairwise_count(
        data in prop::collection::vec((0u8..6, any::<bool>()), 2..400)
    ) {
        let scores: Vec<f64> = data.iter().map(|&(s, _)| f64::from(s) * 0.25 - 0.5).collect();
        let labels: Vec<u8> = data.iter().map(|&(_, l)| u8::from(l)).collect();
        match oracle_auroc_fraction(&scores, &labels) {
            Ok(want) => prop_assert_eq!(auroc_counts(&scores, &labels).unwrap(), want),
            Err(_) => prop_assert!(auroc(&scores, &labels).is_err()),
        }
    }

    #[test]
    fn auroc_invariant_under_monotone_transform(
        data in prop::collection::vec((-50i32..50, any::<bool>()), 2..200)
    ) {
        let s: Vec<f64> = data.iter().map(|&(x, _)| f64::from(x)).collect();
        let l: Vec<u8> = data.iter().map(|&(_, b)| u8::from(b)).collect();
        prop_assume!(l.contains(&0) && l.contains(&1));
        let t: Vec<f64> = s.iter().map(|x| (x / 7.0).exp() + 3.0).collect();
        prop_assert_eq!(auroc_counts(&s, &l).unwrap(), auroc_counts(&t, &l).unwrap());
        let flipped: Vec<f64> = s.iter().map(|x| -x).collect();
        let (a, b) = (auroc(&s, &l).unwrap(), auroc(&flipped, &l).unwrap());
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }
}

#[test]
fn betweenness_matches_enumeration() {
    let mut r = common::rng(17);
    for case in 0..60 {
        let n = r.random_range(3..=50);
        let m = r.random_range(n..=3 * n);
        let weighted = case % 2 == 0;
        let (g, arcs) = common::random_graph(&mut r, n, m, case % 4 == 0);
        let want = oracle_betweenness(n, &arcs, weighted).unwrap();
        for exec in [Exec::Sequential, Exec::default()] {
            let got = betweenness_scores_with(&g, weighted, exec);
            for (v, (a, b)) in got.iter().zip(&want).enumerate() {
                let err = (a - b).abs() / b.abs().max(1e-300);
                assert!(a == b || err < 1e-9, "case {case} node {v}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn alignment_index_matches_full_scan_and_oracle() {
    let mut r = common::rng(5);
    for case in 0..12 {
        let m = [10, 100, 400, 1000][case % 4];
        let g = common::segment_graph(&mut r, m / 2 + 5, m);
        let metric = if case % 3 == 0 { Metric::HaversineM } else { Metric::EuclideanDeg };
        let segs: Vec<_> = (0..g.edge_count())
            .map(|k| {
                let (a, b) = g.endpoints(k);
                let (pa, pb) = (g.nodes()[a].point, g.nodes()[b].point);
                (g.edges()[k].id.0, (pa.lat(), pa.lon()), (pb.lat(), pb.lon()))
            })
            .collect();
        let mut points: Vec<GeoPoint> = (0..120)
            .map(|_| GeoPoint::new(38.55 + r.random::<f64>() * 0.3, -75.65 + r.random::<f64>() * 0.3).unwrap())
            .collect();
        // points on nodes and on segments, where ties and zero scores occur
        points.extend(g.nodes().iter().take(20).map(|n| n.point));
        let index = EdgeIndex::build(&g, metric).unwrap();
        let all = match_all(&points, &g, metric, Exec::default()).unwrap();
        for (i, &p) in points.iter().enumerate() {
            let fast = index.best_edge(p).unwrap();
            let scan = match_accident_full_scan(p, &g, metric).unwrap();
            assert_eq!(fast, scan, "case {case} point {i}");
            assert_eq!(all[i], fast);
            assert!(fast.score <= 0.0);
            let (oid, oscore) = oracle_match((p.lat(), p.lon()), &segs, metric == Metric::HaversineM).unwrap();
            let tol = 1e-9 * oscore.abs().max(1.0);
            assert!((fast.score - oscore.min(0.0)).abs() <= tol, "case {case} point {i}: {} vs {oscore}", fast.score);
            if oid != fast.edge.0 {
                let k = g.edges().iter().position(|e| e.id.0 == oid).unwrap();
                let (a, b) = g.endpoints(k);
                let alt = roadrisk::align::edge_score(metric, g.nodes()[a].point, g.nodes()[b].point, p);
                assert!((alt - fast.score).abs() <= tol, "case {case} point {i}: oracle picked a clearly different edge");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn knn_matches_sort(
        pts in prop::collection::vec(prop::collection::vec(-3i32..3, 3), 4..60),
        treat in prop::collection::vec(any::<bool>(), 60),
        k in 1usize..4,
    ) {
        let n = pts.len();
        let t: Vec<u8> = (0..n).map(|i| u8::from(treat[i])).collect();
        let controls: Vec<usize> = (0..n).filter(|&i| t[i] == 0).collect();
        prop_assume!(controls.len() >= k);
        let rows: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().map(|&x| f64::from(x)).collect()).collect();
        let frame = CausalFrame::new(Tensor::from_rows(&rows), t, vec![0.0; n]).unwrap();
        for i in 0..n {
            let got: Vec<usize> = knn_match(&frame, i, k).unwrap().into_iter().map(|(j, _)| j).collect();
            prop_assert_eq!(got, oracle_knn(&rows, &rows[i], &controls, k).unwrap());
        }
    }

    #[test]
    fn knn_invariant_under_rigid_motion(
        pts in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 6..40),
        angle in 0.0f64..6.28,
        shift in prop::collection::vec(-10.0f64..10.0, 2),
    ) {
        let n = pts.len();
        let t: Vec<u8> = (0..n).map(|i| u8::from(i % 3 == 0)).collect();
        let (c, s) = (angle.cos(), angle.sin());
        let moved: Vec<Vec<f64>> = pts.iter().map(|p| vec![c * p[0] - s * p[1] + shift[0], s * p[0] + c * p[1] + shift[1]]).collect();
        let a = CausalFrame::new(Tensor::from_rows(&pts), t.clone(), vec![0.0; n]).unwrap();
        let b = CausalFrame::new(Tensor::from_rows(&moved), t, vec![0.0; n]).unwrap();
        for i in (0..n).step_by(3) {
            let da = knn_match(&a, i, 2).unwrap();
            let db = knn_match(&b, i, 2).unwrap();
            for ((_, x), (_, y)) in da.iter().zip(&db) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            // neighbour sets agree unless distances nearly tie
            if (da[1].1 - da[0].1).abs() > 1e-6 {
                prop_assert_eq!(da[0].0, db[0].0);
            }
        }
    }
}
