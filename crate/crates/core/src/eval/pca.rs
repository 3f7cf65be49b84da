use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `out_dim` unit-norm components, ordered by explained variance.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

impl Pca {
    /// Centers with the fitted mean and re-expresses every point in the
    /// components.
    pub fn transform(&self, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let d = self.mean.len();
        points
            .iter()
            .map(|p| {
                if p.len() != d {
                    return Err(Error::shape("pca transform", &[d], &[p.len()]));
                }
                Ok(self
                    .components
                    .iter()
                    .map(|c| c.iter().zip(p).zip(&self.mean).map(|((w, x), m)| w * (x - m)).sum())
                    .collect())
            })
            .collect()
    }

    pub fn inverse_transform(&self, projected: &[Vec<f64>]) -> Vec<Vec<f64>> {
        projected
            .iter()
            .map(|z| {
                let mut x = self.mean.clone();
                for (zi, c) in z.iter().zip(&self.components) {
                    for (xj, cj) in x.iter_mut().zip(c) {
                        *xj += zi * cj;
                    }
                }
                x
            })
            .collect()
    }
}

/// Eigendecomposition of the sample covariance. Components are ordered by
/// non-increasing variance and signed so their largest-magnitude loading
/// is positive.
pub fn pca_fit(points: &[Vec<f64>], out_dim: usize) -> Result<Pca> {
    let n = points.len();
    let d = points.first().map_or(0, Vec::len);
    if out_dim == 0 || out_dim > n.min(d) {
        return Err(Error::invalid(format!(
            "PCA output dimension {out_dim} must lie in [1, {}]",
            n.min(d)
        )));
    }
    if let Some(bad) = points.iter().find(|p| p.len() != d) {
        return Err(Error::shape("pca", &[d], &[bad.len()]));
    }
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| points[i][j] - mean[j]);
    let dof = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let cov = (centered.transpose() * &centered) / dof;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut components = Vec::with_capacity(out_dim);
    let mut explained_variance = Vec::with_capacity(out_dim);
    for &j in order.iter().take(out_dim) {
        let mut c: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
        let lead = c
            .iter()
            .copied()
            .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if lead < 0.0 {
            c.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(c);
        explained_variance.push(eig.eigenvalues[j].max(0.0));
    }
    let explained_variance_ratio = explained_variance
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    Ok(Pca {
        mean,
        components,
        explained_variance,
        explained_variance_ratio,
    })
}

/// Fits on `points` and returns their projection with the fitted model.
pub fn pca_fit_transform(points: &[Vec<f64>], out_dim: usize) -> Result<(Vec<Vec<f64>>, Pca)> {
    let pca = pca_fit(points, out_dim)?;
    Ok((pca.transform(points)?, pca))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_has_one_component() {
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64 + 1.0]).collect();
        let (_, pca) = pca_fit_transform(&pts, 1).unwrap();
        assert!((pca.explained_variance_ratio[0] - 1.0).abs() < 1e-10);
        assert!(pca.components[0][1] > 0.0);
    }

    #[test]
    fn full_rank_reconstructs() {
        let pts = vec![vec![1.0, 2.0, 0.5], vec![-1.0, 0.0, 3.0], vec![4.0, 1.0, 1.0], vec![0.0, -2.0, 2.0]];
        let (z, pca) = pca_fit_transform(&pts, 3).unwrap();
        for (a, b) in pca.inverse_transform(&z).iter().zip(&pts) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn invalid_dimension() {
        let pts = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        assert!(pca_fit(&pts, 0).is_err());
        assert!(pca_fit(&pts, 3).is_err());
    }
}
