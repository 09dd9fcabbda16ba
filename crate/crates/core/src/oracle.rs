//! Brute-force reference implementations.
//!
//! Each function computes its result straight from the definition, takes
//! primitive inputs only and uses nothing from the rest of the crate, so
//! tests can compare the fast paths against code that shares no logic
//! with them. Inputs above a hard size cap are refused.

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OracleError {
    #[error("{what} of size {size} exceeds the oracle cap {cap}")]
    TooLarge { what: &'static str, size: usize, cap: usize },
    #[error("invalid oracle input: {0}")]
    Invalid(String),
}

pub const AUROC_CAP: usize = 20_000;
pub const BETWEENNESS_CAP: usize = 200;
pub const MATCH_CAP: usize = 100_000;
pub const KNN_CAP: usize = 100_000;
pub const REACH_CAP: usize = 500;

fn cap(what: &'static str, size: usize, cap: usize) -> Result<(), OracleError> {
    if size > cap {
        return Err(OracleError::TooLarge { what, size, cap });
    }
    Ok(())
}

/// Pairwise AUROC: over all positive/negative pairs, a win counts 1 and
/// a tie 1/2. Returned as the exact fraction `(twice_wins, 2 * P * N)`.
pub fn oracle_auroc_fraction(scores: &[f64], labels: &[u8]) -> Result<(u128, u128), OracleError> {
    cap("auroc sample", scores.len(), AUROC_CAP)?;
    if scores.len() != labels.len() {
        return Err(OracleError::Invalid("scores and labels differ in length".into()));
    }
    let mut num: u128 = 0;
    let (mut p, mut n) = (0u128, 0u128);
    for i in 0..scores.len() {
        if labels[i] == 0 {
            n += 1;
            continue;
        }
        p += 1;
        for j in 0..scores.len() {
            if labels[j] != 0 {
                continue;
            }
            if scores[i] > scores[j] {
                num += 2;
            } else if scores[i] == scores[j] {
                num += 1;
            }
        }
    }
    if p == 0 || n == 0 {
        return Err(OracleError::Invalid("both classes are required".into()));
    }
    Ok((num, 2 * p * n))
}

pub fn oracle_auroc(scores: &[f64], labels: &[u8]) -> Result<f64, OracleError> {
    let (num, den) = oracle_auroc_fraction(scores, labels)?;
    Ok(num as f64 / den as f64)
}

/// All-pairs shortest paths by Floyd-Warshall over the shortest arc
/// between each ordered pair (self-loops ignored).
fn all_pairs(n: usize, arcs: &[(usize, usize, f64)], weighted: bool) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut w = vec![vec![f64::INFINITY; n]; n];
    for &(a, b, len) in arcs {
        if a != b {
            let l = if weighted { len } else { 1.0 };
            if l < w[a][b] {
                w[a][b] = l;
            }
        }
    }
    let mut d = w.clone();
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    (w, d)
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Normalized directed betweenness. For every ordered pair `(s, t)` the
/// number of shortest paths through each `v` is `sigma(s,v) sigma(v,t)`
/// when `v` lies on a shortest path; the sum over pairs of its share is
/// divided by `(n-1)(n-2)`.
pub fn oracle_betweenness(n: usize, arcs: &[(usize, usize, f64)], weighted: bool) -> Result<Vec<f64>, OracleError> {
    cap("betweenness graph", n, BETWEENNESS_CAP)?;
    if arcs.iter().any(|&(a, b, l)| a >= n || b >= n || !(l > 0.0)) {
        return Err(OracleError::Invalid("arc endpoint out of range or non-positive length".into()));
    }
    if n < 3 {
        return Ok(vec![0.0; n]);
    }
    let (w, d) = all_pairs(n, arcs, weighted);
    // sigma[s][v]: number of shortest s->v paths, counted in order of
    // increasing distance from s
    let mut sigma = vec![vec![0.0f64; n]; n];
    for s in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&v| d[s][v].is_finite()).collect();
        order.sort_by(|&a, &b| d[s][a].partial_cmp(&d[s][b]).unwrap());
        sigma[s][s] = 1.0;
        for &v in &order {
            if v == s {
                continue;
            }
            let mut count = 0.0;
            for u in 0..n {
                if u != v && w[u][v].is_finite() && d[s][u].is_finite() && close(d[s][u] + w[u][v], d[s][v]) {
                    count += sigma[s][u];
                }
            }
            sigma[s][v] = count;
        }
    }
    let mut bc = vec![0.0; n];
    for s in 0..n {
        for t in 0..n {
            if s == t || !d[s][t].is_finite() {
                continue;
            }
            for v in 0..n {
                if v == s || v == t || !d[s][v].is_finite() || !d[v][t].is_finite() {
                    continue;
                }
                if close(d[s][v] + d[v][t], d[s][t]) {
                    bc[v] += sigma[s][v] * sigma[v][t] / sigma[s][t];
                }
            }
        }
    }
    let norm = ((n - 1) * (n - 2)) as f64;
    Ok(bc.into_iter().map(|b| b / norm).collect())
}

/// Distance between `(lat, lon)` points in degrees, longitude scaled by
/// the cosine of the mean latitude, or great-circle meters.
pub fn oracle_distance(a: (f64, f64), b: (f64, f64), haversine: bool) -> f64 {
    if haversine {
        let r = 6_371_000.0;
        let (p1, p2) = (a.0.to_radians(), b.0.to_radians());
        let h = ((p2 - p1) / 2.0).sin().powi(2) + p1.cos() * p2.cos() * ((b.1 - a.1).to_radians() / 2.0).sin().powi(2);
        2.0 * r * h.sqrt().min(1.0).asin()
    } else {
        let dlat = a.0 - b.0;
        let dlon = (a.1 - b.1) * (0.5 * (a.0 + b.0)).to_radians().cos();
        (dlat * dlat + dlon * dlon).sqrt()
    }
}

/// Exhaustive scan for the segment maximizing
/// `min(0, D(a,b) - D(a,c) - D(b,c))`, ties to the lowest id. Segments
/// are `(id, a, b)`; returns `(id, score)`.
pub fn oracle_match(c: (f64, f64), segments: &[(u64, (f64, f64), (f64, f64))], haversine: bool) -> Result<(u64, f64), OracleError> {
    cap("segment list", segments.len(), MATCH_CAP)?;
    let mut best: Option<(u64, f64)> = None;
    for &(id, a, b) in segments {
        let s = (oracle_distance(a, b, haversine) - oracle_distance(a, c, haversine) - oracle_distance(b, c, haversine)).min(0.0);
        best = match best {
            Some((bid, bs)) if bs > s || (bs == s && bid < id) => Some((bid, bs)),
            _ => Some((id, s)),
        };
    }
    best.ok_or_else(|| OracleError::Invalid("no segments".into()))
}

/// The `k` candidates nearest to `query` in Euclidean distance, by a full
/// sort on `(distance, index)`.
pub fn oracle_knn(points: &[Vec<f64>], query: &[f64], candidates: &[usize], k: usize) -> Result<Vec<usize>, OracleError> {
    cap("candidate set", candidates.len(), KNN_CAP)?;
    if k > candidates.len() {
        return Err(OracleError::Invalid(format!("k = {k} exceeds {} candidates", candidates.len())));
    }
    let mut all: Vec<(f64, usize)> = Vec::with_capacity(candidates.len());
    for &j in candidates {
        let p = points.get(j).ok_or_else(|| OracleError::Invalid(format!("candidate {j} out of range")))?;
        let mut d = 0.0;
        for (x, y) in p.iter().zip(query) {
            d += (x - y) * (x - y);
        }
        all.push((d.sqrt(), j));
    }
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    Ok(all.into_iter().take(k).map(|(_, j)| j).collect())
}

/// Transitive closure by Warshall's algorithm; `r[i][j]` means a directed
/// path of length at least zero leads from `i` to `j`.
pub fn oracle_reachability(n: usize, arcs: &[(usize, usize)]) -> Result<Vec<Vec<bool>>, OracleError> {
    cap("reachability graph", n, REACH_CAP)?;
    let mut r = vec![vec![false; n]; n];
    for (i, row) in r.iter_mut().enumerate() {
        row[i] = true;
    }
    for &(a, b) in arcs {
        if a >= n || b >= n {
            return Err(OracleError::Invalid(format!("arc ({a}, {b}) out of range")));
        }
        r[a][b] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if r[i][k] {
                for j in 0..n {
                    if r[k][j] {
                        r[i][j] = true;
                    }
                }
            }
        }
    }
    Ok(r)
}
