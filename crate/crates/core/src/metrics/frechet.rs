use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::Tensor;

/// Diagonal ridge added to every fitted covariance.
pub const COVARIANCE_RIDGE: f64 = 1e-6;

/// Mean and (unbiased) covariance of a sample set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub mean: Vec<f64>,
    /// `[D, D]`, row-major, symmetric.
    pub cov: Tensor,
}

impl GaussianFit {
    /// Fits `[n, D]` samples, `n ≥ 2`, adding `ridge` to the diagonal.
    pub fn fit(samples: &Tensor, ridge: f64) -> Result<Self> {
        let (n, d) = samples.dims2()?;
        if n < 2 {
            return Err(Error::domain(
                "gaussian_fit",
                format!("need at least 2 samples, got {n}"),
            ));
        }
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(samples.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = vec![0.0; d * d];
        let mut centered = vec![0.0; d];
        for i in 0..n {
            for (c, (v, m)) in centered.iter_mut().zip(samples.row(i).iter().zip(&mean)) {
                *c = v - m;
            }
            for a in 0..d {
                let ca = centered[a];
                for b in a..d {
                    cov[a * d + b] += ca * centered[b];
                }
            }
        }
        let denom = (n - 1) as f64;
        for a in 0..d {
            for b in a..d {
                let v = cov[a * d + b] / denom;
                cov[a * d + b] = v;
                cov[b * d + a] = v;
            }
            cov[a * d + a] += ridge;
        }
        Ok(Self {
            mean,
            cov: Tensor::matrix(d, d, cov)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub(crate) fn cov_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim(), self.dim(), self.cov.data())
    }
}

/// Square root of a symmetric PSD matrix, negative eigenvalues clamped to 0.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2 (Σa^½ Σb Σa^½)^½)`.
pub fn frechet_between(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::dim("frechet_distance", &[a.dim()], &[b.dim()]));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    let sa = a.cov_matrix();
    let sb = b.cov_matrix();
    let ra = sqrtm_psd(&sa);
    let inner = &ra * &sb * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .sum();
    let fd = mean_term + sa.trace() + sb.trace() - 2.0 * cross;
    if !fd.is_finite() {
        return Err(Error::NonFinite { op: "frechet_distance" });
    }
    Ok(fd.max(0.0))
}

/// Fréchet distance between Gaussians fitted to two `[n, D]` sample sets.
pub fn frechet_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (_, da) = a.dims2()?;
    let (_, db) = b.dims2()?;
    if da != db {
        return Err(Error::dim("frechet_distance", a.shape(), b.shape()));
    }
    frechet_between(
        &GaussianFit::fit(a, COVARIANCE_RIDGE)?,
        &GaussianFit::fit(b, COVARIANCE_RIDGE)?,
    )
}
