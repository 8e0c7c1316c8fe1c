//! Distribution-level evaluation of latent sets: Fréchet distance,
//! precision/recall of distributions, and PCA projections, with CSV export
//! for plotting.

mod frechet;
mod kmeans;
mod pca;
mod prd;

use std::path::Path;

use crate::error::Result;

pub use frechet::{frechet_between, frechet_distance, sqrtm_psd, GaussianFit, COVARIANCE_RIDGE};
pub use kmeans::{kmeans, KMeansConfig, KMeansFit};
pub use pca::{pca_project, PcaProjection};
pub use prd::{lambda_grid, prd_curve, prd_from_histograms, PrdConfig, PrdCurve, PrdPoint};

/// Columns: `lambda,precision,recall`.
pub fn write_prd_csv(path: &Path, curve: &PrdCurve) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lambda", "precision", "recall"])?;
    for p in &curve.points {
        w.write_record([p.lambda.to_string(), p.precision.to_string(), p.recall.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns: `label,pc1,...,pck`; `label` is empty when `labels` is `None`.
pub fn write_pca_csv(path: &Path, pca: &PcaProjection, labels: Option<&[usize]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let k = pca.projected.cols();
    let mut header = vec!["label".to_string()];
    header.extend((1..=k).map(|j| format!("pc{j}")));
    w.write_record(&header)?;
    for i in 0..pca.projected.rows() {
        let mut rec = vec![labels.map(|l| l[i].to_string()).unwrap_or_default()];
        rec.extend(pca.projected.row(i).iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
