use std::collections::{BTreeMap, HashMap};

use super::kmeans::sq_dist;
use crate::error::{Error, Result};

/// Points grouped by label with centroids. Groups are ordered by first
/// appearance, so the arithmetic depends only on the partition and any
/// relabelling gives bit-identical scores.
struct Groups {
    members: Vec<Vec<usize>>,
    centroids: Vec<Vec<f64>>,
}

fn group(points: &[Vec<f64>], labels: &[usize]) -> Result<Groups> {
    if points.len() != labels.len() {
        return Err(Error::shape("labels", &[points.len()], &[labels.len()]));
    }
    let d = points.first().map_or(0, Vec::len);
    if let Some(bad) = points.iter().find(|p| p.len() != d) {
        return Err(Error::shape("points", &[d], &[bad.len()]));
    }
    let mut slot: HashMap<usize, usize> = HashMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        let g = *slot.entry(l).or_insert_with(|| {
            members.push(Vec::new());
            members.len() - 1
        });
        members[g].push(i);
    }
    let centroids = members
        .iter()
        .map(|m| {
            let mut c = vec![0.0; d];
            for &i in m {
                for (s, x) in c.iter_mut().zip(&points[i]) {
                    *s += x;
                }
            }
            c.iter_mut().for_each(|s| *s /= m.len() as f64);
            c
        })
        .collect();
    Ok(Groups { members, centroids })
}

/// Between-cluster over within-cluster dispersion, each divided by its
/// degrees of freedom: `[B / (k - 1)] / [W / (n - k)]`.
pub fn calinski_harabasz(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let g = group(points, labels)?;
    let (n, k) = (points.len(), g.members.len());
    if k < 2 || k >= n {
        return Err(Error::invalid(format!(
            "Calinski-Harabasz needs 2 <= k < n, got k = {k}, n = {n}"
        )));
    }
    let d = points[0].len();
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let between: f64 = g
        .members
        .iter()
        .zip(&g.centroids)
        .map(|(m, c)| m.len() as f64 * sq_dist(c, &mean))
        .sum();
    let within: f64 = g
        .members
        .iter()
        .zip(&g.centroids)
        .map(|(m, c)| m.iter().map(|&i| sq_dist(&points[i], c)).sum::<f64>())
        .sum();
    if within == 0.0 {
        return Err(Error::ZeroDispersion);
    }
    Ok((between / (k - 1) as f64) / (within / (n - k) as f64))
}

/// Mean over clusters of the worst `(s_i + s_j) / M_ij`, with `s` the mean
/// distance to the centroid and `M` the centroid distance. Coincident
/// centroids of two zero-scatter clusters contribute 0.
pub fn davies_bouldin(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let g = group(points, labels)?;
    let k = g.members.len();
    if k < 2 {
        return Err(Error::invalid(format!("Davies-Bouldin needs at least 2 clusters, got {k}")));
    }
    let scatter: Vec<f64> = g
        .members
        .iter()
        .zip(&g.centroids)
        .map(|(m, c)| m.iter().map(|&i| sq_dist(&points[i], c).sqrt()).sum::<f64>() / m.len() as f64)
        .collect();
    let mut total = 0.0;
    for i in 0..k {
        let mut worst = 0.0f64;
        for j in 0..k {
            if i == j {
                continue;
            }
            let m = sq_dist(&g.centroids[i], &g.centroids[j]).sqrt();
            let s = scatter[i] + scatter[j];
            let r = if m == 0.0 {
                if s == 0.0 {
                    0.0
                } else {
                    return Err(Error::CoincidentCentroids);
                }
            } else {
                s / m
            };
            worst = worst.max(r);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

/// Fraction of points whose cluster's majority label matches their own.
pub fn purity(assignments: &[usize], truth: &[usize]) -> Result<f64> {
    if assignments.len() != truth.len() || assignments.is_empty() {
        return Err(Error::shape("purity", &[assignments.len()], &[truth.len()]));
    }
    let mut table: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (&a, &t) in assignments.iter().zip(truth) {
        *table.entry(a).or_default().entry(t).or_default() += 1;
    }
    let hits: usize = table.values().map(|row| row.values().copied().max().unwrap_or(0)).sum();
    Ok(hits as f64 / assignments.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_clusters() -> (Vec<Vec<f64>>, Vec<usize>) {
        (
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![10.0, 0.0], vec![11.0, 0.0]],
            vec![0, 0, 1, 1],
        )
    }

    #[test]
    fn hand_computed_values() {
        let (p, l) = two_clusters();
        assert!((calinski_harabasz(&p, &l).unwrap() - 200.0).abs() <= 1e-12);
        assert!((davies_bouldin(&p, &l).unwrap() - 0.1).abs() <= 1e-12);
    }

    #[test]
    fn degenerate_cases() {
        let p = vec![vec![0.0], vec![0.0], vec![5.0], vec![5.0]];
        let l = vec![0, 0, 1, 1];
        assert!(matches!(calinski_harabasz(&p, &l), Err(Error::ZeroDispersion)));
        assert_eq!(davies_bouldin(&p, &l).unwrap(), 0.0);
        let p = vec![vec![-1.0], vec![1.0], vec![-2.0], vec![2.0]];
        assert!(matches!(davies_bouldin(&p, &l), Err(Error::CoincidentCentroids)));
        assert!(calinski_harabasz(&p, &[0, 0, 0, 0]).is_err());
        assert!(calinski_harabasz(&p, &[0, 1, 2, 3]).is_err());
    }

    #[test]
    fn coincident_zero_scatter_contributes_nothing() {
        let p = vec![vec![0.0], vec![0.0], vec![4.0]];
        assert_eq!(davies_bouldin(&p, &[0, 1, 2]).unwrap(), 0.0);
    }

    #[test]
    fn purity_counts_majorities() {
        assert_eq!(purity(&[0, 0, 1, 1], &[5, 5, 6, 5]).unwrap(), 0.75);
    }
}
