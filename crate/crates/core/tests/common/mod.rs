//! Brute-force references shared by the evaluation tests and the
//! acceptance runner.

use rand::seq::SliceRandom;
use rand::Rng as _;

use tmae::rng;

/// Random labelled instance with every one of `k` clusters populated.
pub fn instance(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>, usize) {
    let mut r = rng::stream(seed, "instance");
    let k = r.random_range(2..=4);
    let n = r.random_range(k + 1..=50);
    let d = r.random_range(1..=5);
    let points = (0..n)
        .map(|_| (0..d).map(|_| r.random_range(-10.0..10.0)).collect())
        .collect();
    let mut labels: Vec<usize> = (0..n).map(|i| if i < k { i } else { r.random_range(0..k) }).collect();
    labels.shuffle(&mut r);
    (points, labels, k)
}

// The oracles below deliberately share nothing with the library: plain
// index loops straight from the textbook definitions.

fn oracle_centroid(points: &[Vec<f64>], labels: &[usize], c: usize) -> Vec<f64> {
    let d = points[0].len();
    let mut sum = vec![0.0; d];
    let mut count = 0.0;
    for i in 0..points.len() {
        if labels[i] == c {
            for j in 0..d {
                sum[j] += points[i][j];
            }
            count += 1.0;
        }
    }
    sum.iter().map(|s| s / count).collect()
}

pub fn oracle_ch(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let n = points.len();
    let d = points[0].len();
    let mut mu = vec![0.0; d];
    for p in points {
        for j in 0..d {
            mu[j] += p[j] / n as f64;
        }
    }
    let mut between = 0.0;
    let mut within = 0.0;
    for c in 0..k {
        let m = oracle_centroid(points, labels, c);
        let size = labels.iter().filter(|&&l| l == c).count() as f64;
        let mut gap = 0.0;
        for j in 0..d {
            gap += (m[j] - mu[j]) * (m[j] - mu[j]);
        }
        between += size * gap;
        for i in 0..n {
            if labels[i] == c {
                for j in 0..d {
                    within += (points[i][j] - m[j]) * (points[i][j] - m[j]);
                }
            }
        }
    }
    (between / (k as f64 - 1.0)) / (within / (n - k) as f64)
}

pub fn oracle_db(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        let mut s = 0.0;
        for j in 0..a.len() {
            s += (a[j] - b[j]) * (a[j] - b[j]);
        }
        s.sqrt()
    };
    let centroids: Vec<Vec<f64>> = (0..k).map(|c| oracle_centroid(points, labels, c)).collect();
    let scatter: Vec<f64> = (0..k)
        .map(|c| {
            let members: Vec<&Vec<f64>> = (0..points.len()).filter(|&i| labels[i] == c).map(|i| &points[i]).collect();
            members.iter().map(|p| dist(p, &centroids[c])).sum::<f64>() / members.len() as f64
        })
        .collect();
    let mut total = 0.0;
    for i in 0..k {
        let mut worst = f64::NEG_INFINITY;
        for j in 0..k {
            if i != j {
                worst = worst.max((scatter[i] + scatter[j]) / dist(&centroids[i], &centroids[j]));
            }
        }
        total += worst;
    }
    total / k as f64
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}
