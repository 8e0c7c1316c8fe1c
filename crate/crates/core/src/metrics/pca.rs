use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::frechet::GaussianFit;
use crate::error::{Error, Result};
use crate::ndcore::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    /// `[n, k]` coordinates of the centered samples.
    pub projected: Tensor,
    /// Share of total variance per component, non-increasing.
    pub explained_variance_ratio: Vec<f64>,
    /// Eigenvalues of the sample covariance, descending, clamped at 0.
    pub eigenvalues: Vec<f64>,
    /// `[D, k]`, one unit eigenvector per column.
    pub components: Tensor,
    pub mean: Vec<f64>,
}

impl PcaProjection {
    /// Maps projected coordinates back to the input space.
    pub fn reconstruct(&self) -> Result<Tensor> {
        let back = self.projected.matmul(&self.components.transpose()?)?;
        back.add_row_vector(&Tensor::vector(self.mean.clone()))
    }
}

/// Projects `[n, D]` samples onto the top `k` principal axes.
pub fn pca_project(samples: &Tensor, k: usize) -> Result<PcaProjection> {
    let (n, d) = samples.dims2()?;
    if k > d {
        return Err(Error::domain("pca_project", format!("k = {k} exceeds dimension {d}")));
    }
    if n < 2 {
        return Err(Error::domain("pca_project", "need at least 2 samples"));
    }
    let fit = GaussianFit::fit(samples, 0.0)?;
    let eig = SymmetricEigen::new(fit.cov_matrix());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    let explained_variance_ratio = eigenvalues[..k]
        .iter()
        .map(|&l| if total > 0.0 { l / total } else { 0.0 })
        .collect();

    let w = DMatrix::from_fn(d, k, |r, c| eig.eigenvectors[(r, order[c])]);
    let x = DMatrix::from_fn(n, d, |r, c| samples.get(r, c) - fit.mean[c]);
    let y = x * &w;
    let projected = Tensor::matrix(
        n,
        k,
        (0..n)
            .flat_map(|r| (0..k).map(move |c| (r, c)))
            .map(|(r, c)| y[(r, c)])
            .collect(),
    )?;
    let components = Tensor::matrix(
        d,
        k,
        (0..d)
            .flat_map(|r| (0..k).map(move |c| (r, c)))
            .map(|(r, c)| w[(r, c)])
            .collect(),
    )?;
    Ok(PcaProjection {
        projected,
        explained_variance_ratio,
        eigenvalues,
        components,
        mean: fit.mean,
    })
}
