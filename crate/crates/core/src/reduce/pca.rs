//! Principal component analysis from the eigendecomposition of the sample
//! covariance `C = (Z - mean)^T (Z - mean) / (n - 1)`.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Eigenvalues below this fraction of the largest count as numerically zero.
pub const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PCAModel {
    pub mean: Array1<f64>,
    /// Retained components as orthonormal rows, strongest first.
    pub components: Array2<f64>,
    /// All `m` covariance eigenvalues, descending and clamped at zero.
    pub eigenvalues: Array1<f64>,
    pub total_variance: f64,
    /// Set when a retained component has a numerically zero eigenvalue.
    pub rank_deficient: bool,
}

pub fn pca_fit(data: ArrayView2<f64>, n_components: usize) -> Result<PCAModel> {
    let (n, m) = data.dim();
    if n < 2 {
        return Err(Error::InvalidParams(format!("PCA needs at least 2 rows, got {n}")));
    }
    let limit = (n - 1).min(m);
    if n_components == 0 || n_components > limit {
        return Err(Error::InvalidParams(format!(
            "n_components must lie in [1, {limit}], got {n_components}"
        )));
    }
    let mean = data.mean_axis(Axis(0)).expect("n >= 2");
    let centered = &data - &mean;
    let cov = centered.t().dot(&centered) / (n - 1) as f64;

    let eig = SymmetricEigen::new(DMatrix::from_fn(m, m, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let eigenvalues: Array1<f64> = order
        .iter()
        .map(|&i| eig.eigenvalues[i].max(0.0))
        .collect();
    let total_variance = eigenvalues.sum();

    let mut components = Array2::zeros((n_components, m));
    for (row, &i) in order.iter().take(n_components).enumerate() {
        let v = eig.eigenvectors.column(i);
        // Sign convention: the largest-magnitude entry is positive.
        let pivot = (0..m)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()))
            .unwrap_or(0);
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..m {
            components[[row, j]] = sign * v[j];
        }
    }

    let lead = eigenvalues[0];
    let rank_deficient = eigenvalues[n_components - 1] < RANK_TOLERANCE * lead || lead == 0.0;
    if rank_deficient {
        log::warn!(
            "requested {n_components} components but the data has lower numerical rank"
        );
    }
    Ok(PCAModel {
        mean,
        components,
        eigenvalues,
        total_variance,
        rank_deficient,
    })
}

impl PCAModel {
    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    /// `lambda_i / total_variance` for every retained component.
    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        if self.total_variance <= 0.0 {
            return vec![0.0; self.n_components()];
        }
        self.eigenvalues
            .iter()
            .take(self.n_components())
            .map(|l| l / self.total_variance)
            .collect()
    }

    pub fn transform(&self, data: ArrayView2<f64>) -> Result<Array2<f64>> {
        if data.ncols() != self.n_features() {
            return Err(Error::dim("PCA transform input", self.n_features(), data.ncols()));
        }
        Ok((&data - &self.mean).dot(&self.components.t()))
    }

    pub fn inverse(&self, codes: ArrayView2<f64>) -> Result<Array2<f64>> {
        if codes.ncols() != self.n_components() {
            return Err(Error::dim("PCA inverse input", self.n_components(), codes.ncols()));
        }
        Ok(codes.dot(&self.components) + &self.mean)
    }

    /// Keeps only the leading `k` components.
    pub fn truncated(&self, k: usize) -> Result<PCAModel> {
        if k == 0 || k > self.n_components() {
            return Err(Error::InvalidParams(format!(
                "cannot truncate {} components to {k}",
                self.n_components()
            )));
        }
        Ok(PCAModel {
            components: self.components.slice(ndarray::s![..k, ..]).to_owned(),
            rank_deficient: self.eigenvalues[k - 1] < RANK_TOLERANCE * self.eigenvalues[0],
            ..self.clone()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn line_through_origin_has_one_component() {
        let d = array![[1.0, 2.0], [-1.0, -2.0], [2.0, 4.0], [-2.0, -4.0], [0.5, 1.0]];
        let p = pca_fit(d.view(), 1).unwrap();
        assert!((p.explained_variance_ratio()[0] - 1.0).abs() < 1e-12);
        let c = p.components.row(0);
        assert!((c[0] - 1.0 / 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn mean_maps_to_zero_code() {
        let d = array![[1.0, 0.0, 3.0], [2.0, 1.0, 0.0], [0.0, 5.0, 1.0], [4.0, 2.0, 2.0]];
        let p = pca_fit(d.view(), 2).unwrap();
        let mean = p.mean.clone().insert_axis(Axis(0));
        let code = p.transform(mean.view()).unwrap();
        assert!(code.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn rejects_bad_component_counts() {
        let d = array![[1.0, 2.0], [3.0, 4.0], [0.0, 1.0]];
        assert!(pca_fit(d.view(), 0).is_err());
        assert!(pca_fit(d.view(), 3).is_err());
        let p = pca_fit(d.view(), 2).unwrap();
        assert!(p.transform(array![[1.0, 2.0, 3.0]].view()).is_err());
        assert!(p.inverse(array![[1.0]].view()).is_err());
    }

    #[test]
    fn collinear_data_flags_rank() {
        let d = array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        assert!(pca_fit(d.view(), 2).unwrap().rank_deficient);
    }
}
