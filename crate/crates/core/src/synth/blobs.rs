use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;

/// `k` blobs of `per_blob` points in `k` dimensions. Blob `i` is centered
/// at `separation * e_i`, so every pair of centers is `separation * sqrt 2`
/// apart, and points are uniform in a ball of `radius` around the center.
/// Returns points and blob labels.
pub fn planted_blobs(k: usize, per_blob: usize, separation: f64, radius: f64, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    if k == 0 || per_blob == 0 {
        return Err(Error::invalid("planted blobs need k >= 1 and per_blob >= 1"));
    }
    if !(radius >= 0.0 && separation >= 0.0) {
        return Err(Error::invalid("radius and separation must be nonnegative"));
    }
    let mut rng = rng::stream(seed, "planted-blobs");
    let mut points = Vec::with_capacity(k * per_blob);
    let mut labels = Vec::with_capacity(k * per_blob);
    for blob in 0..k {
        for _ in 0..per_blob {
            // rejection sample the unit ball
            let offset = loop {
                let v: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..=1.0)).collect();
                if v.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
                    break v;
                }
            };
            let mut p: Vec<f64> = offset.iter().map(|x| x * radius).collect();
            p[blob] += separation;
            points.push(p);
            labels.push(blob);
        }
    }
    Ok((points, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_stay_within_radius() {
        let (pts, labels) = planted_blobs(3, 20, 10.0, 1.0, 4).unwrap();
        assert_eq!(pts.len(), 60);
        for (p, &l) in pts.iter().zip(&labels) {
            let mut c = vec![0.0; 3];
            c[l] = 10.0;
            let d: f64 = p.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(d <= 1.0 + 1e-12);
        }
    }
}
