use std::ops::RangeInclusive;

use rand::Rng as _;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansOptions {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub n_init: usize,
}

impl KMeansOptions {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansOptions {
            k,
            seed,
            max_iter: 300,
            n_init: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusteringResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub wss: f64,
    pub iterations: usize,
    /// WSS after every Lloyd iteration of the winning restart, starting
    /// with the seeded assignment.
    pub wss_trace: Vec<f64>,
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let d = points.first().map_or(0, Vec::len);
    if let Some(bad) = points.iter().find(|p| p.len() != d) {
        return Err(Error::shape("points", &[d], &[bad.len()]));
    }
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::invalid("points contain non-finite values"));
    }
    Ok(d)
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, sq_dist(p, &centroids[0]));
    for (c, centroid) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[next].clone());
        for (p, d) in points.iter().zip(&mut d2) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn wss_of(points: &[Vec<f64>], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum()
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(points: &[Vec<f64>], assignments: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let far = (0..points.len())
            .filter(|&i| sizes[assignments[i]] > 1)
            .max_by(|&i, &j| {
                let di = sq_dist(&points[i], &centroids[assignments[i]]);
                let dj = sq_dist(&points[j], &centroids[assignments[j]]);
                di.total_cmp(&dj).then(j.cmp(&i))
            })
            .expect("k <= n leaves a cluster with two points");
        assignments[far] = empty;
        centroids[empty] = points[far].clone();
    }
}

fn update_centroids(points: &[Vec<f64>], assignments: &[usize], k: usize, d: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(p) {
            *s += x;
        }
    }
    for (s, c) in sums.iter_mut().zip(counts) {
        for v in s.iter_mut() {
            *v /= c as f64;
        }
    }
    sums
}

/// Lloyd iterations from `centroids`. Points move only to a strictly
/// closer centroid, which keeps the WSS trace non-increasing.
fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iter: usize) -> ClusteringResult {
    let k = centroids.len();
    let d = points[0].len();
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    repair_empty(points, &mut assignments, &mut centroids);
    centroids = update_centroids(points, &assignments, k, d);
    let mut trace = vec![wss_of(points, &assignments, &centroids)];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut changed = false;
        for (p, a) in points.iter().zip(assignments.iter_mut()) {
            let current = sq_dist(p, &centroids[*a]);
            let (c, dist) = nearest(p, &centroids);
            if dist < current && c != *a {
                *a = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        repair_empty(points, &mut assignments, &mut centroids);
        let next = update_centroids(points, &assignments, k, d);
        let wss = wss_of(points, &assignments, &next);
        // A recomputed mean can lose a final ulp against the previous
        // centroids; keep whichever is no worse so the trace is monotone.
        if wss <= *trace.last().expect("trace non-empty") {
            centroids = next;
            trace.push(wss);
        } else {
            trace.push(wss_of(points, &assignments, &centroids));
        }
    }
    ClusteringResult {
        wss: *trace.last().expect("trace non-empty"),
        assignments,
        centroids,
        iterations,
        wss_trace: trace,
    }
}

fn validate_k(n: usize, k: usize) -> Result<()> {
    if k < 1 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds the {n} points")));
    }
    Ok(())
}

/// Best of `n_init` k-means++ restarts by WSS (ties go to the earlier
/// restart).
pub fn kmeans_with(points: &[Vec<f64>], opts: &KMeansOptions) -> Result<ClusteringResult> {
    check_points(points)?;
    validate_k(points.len(), opts.k)?;
    if opts.n_init == 0 {
        return Err(Error::invalid("n_init must be at least 1"));
    }
    let mut best: Option<ClusteringResult> = None;
    for restart in 0..opts.n_init {
        let mut rng = rng::indexed_stream(opts.seed, "kmeans", restart as u64);
        let run = lloyd(points, kmeans_pp(points, opts.k, &mut rng), opts.max_iter);
        if best.as_ref().is_none_or(|b| run.wss < b.wss) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusteringResult> {
    kmeans_with(points, &KMeansOptions::new(k, seed))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ElbowResult {
    pub k: usize,
    /// `(k, WSS)` for every candidate.
    pub curve: Vec<(usize, f64)>,
}

/// Best-of-restarts WSS for every `k` in `k_range`. Each `k > 1` also
/// tries the previous solution's centroids plus the point farthest from
/// them, so the curve never increases with `k`.
pub fn wss_curve(points: &[Vec<f64>], k_range: RangeInclusive<usize>, seed: u64) -> Result<Vec<ClusteringResult>> {
    check_points(points)?;
    let (lo, hi) = (*k_range.start(), *k_range.end());
    validate_k(points.len(), lo)?;
    validate_k(points.len(), hi)?;
    let mut out: Vec<ClusteringResult> = Vec::new();
    for k in lo..=hi {
        let mut best = kmeans_with(points, &KMeansOptions::new(k, seed))?;
        if let Some(prev) = out.last() {
            let mut init = prev.centroids.clone();
            let far = points
                .iter()
                .enumerate()
                .max_by(|(i, p), (j, q)| {
                    nearest(p, &init).1.total_cmp(&nearest(q, &init).1).then(j.cmp(i))
                })
                .map(|(i, _)| i)
                .expect("points non-empty");
            init.push(points[far].clone());
            let warm = lloyd(points, init, KMeansOptions::new(k, seed).max_iter);
            if warm.wss < best.wss {
                best = warm;
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// Index of the interior point with the largest second difference
/// `(w[i-1] - w[i]) - (w[i] - w[i+1])`; ties go to the smaller index.
pub fn elbow_index(wss: &[f64]) -> Result<usize> {
    if wss.len() < 3 {
        return Err(Error::invalid("elbow selection needs at least 3 candidate k values"));
    }
    let mut best = 1;
    let mut best_score = f64::NEG_INFINITY;
    for i in 1..wss.len() - 1 {
        let score = (wss[i - 1] - wss[i]) - (wss[i] - wss[i + 1]);
        if score > best_score {
            best = i;
            best_score = score;
        }
    }
    Ok(best)
}

pub fn elbow_select(points: &[Vec<f64>], k_range: RangeInclusive<usize>, seed: u64) -> Result<ElbowResult> {
    if k_range.clone().count() < 3 {
        return Err(Error::invalid("elbow selection needs at least 3 candidate k values"));
    }
    let runs = wss_curve(points, k_range.clone(), seed)?;
    let curve: Vec<(usize, f64)> = k_range.zip(runs.iter().map(|r| r.wss)).collect();
    let wss: Vec<f64> = curve.iter().map(|c| c.1).collect();
    let i = elbow_index(&wss)?;
    Ok(ElbowResult { k: curve[i].0, curve })
}
