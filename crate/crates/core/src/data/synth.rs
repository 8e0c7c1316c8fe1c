//! Gaussian cluster features for desk-scale scenarios.

use serde::{Deserialize, Serialize};

use super::{split_sizes, FeatureDataset, Split};
use crate::error::{Error, Result};
use crate::ndcore::{SeededRng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    /// Radius of the sphere the class means are drawn on.
    pub separation: f64,
    /// Per-coordinate standard deviation around each mean.
    pub sigma: f64,
    pub seed: u64,
}

/// Class means uniform on the sphere of radius `separation`, samples
/// `N(mean, sigma² I)`, split 80/10/10 within each class. Rows are grouped
/// train, val, test and class-interleaved inside each group.
pub fn synth_gaussian_clusters(cfg: &SynthConfig) -> Result<FeatureDataset> {
    if cfg.classes == 0 || cfg.dim == 0 || cfg.per_class == 0 {
        return Err(Error::config("synth", "classes, dim and per_class must be positive"));
    }
    if !(cfg.separation >= 0.0 && cfg.sigma >= 0.0) || !cfg.separation.is_finite() || !cfg.sigma.is_finite() {
        return Err(Error::config(
            "synth",
            "separation and sigma must be finite and non-negative",
        ));
    }
    let mut rng = SeededRng::new(cfg.seed);
    let mut means = Vec::with_capacity(cfg.classes);
    for _ in 0..cfg.classes {
        let mut m: Vec<f64> = (0..cfg.dim).map(|_| rng.normal()).collect();
        let norm = m.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        m.iter_mut().for_each(|v| *v *= cfg.separation / norm);
        means.push(m);
    }

    let (n_train, n_val) = split_sizes(cfg.per_class, 0.8, 0.1);
    let mut groups: [Vec<(usize, Vec<f64>)>; 3] = Default::default();
    for k in 0..cfg.per_class {
        let g = if k < n_train {
            0
        } else if k < n_train + n_val {
            1
        } else {
            2
        };
        for (c, m) in means.iter().enumerate() {
            let x = m.iter().map(|&mu| mu + cfg.sigma * rng.normal()).collect();
            groups[g].push((c, x));
        }
    }

    let n = cfg.classes * cfg.per_class;
    let mut data = Vec::with_capacity(n * cfg.dim);
    let mut labels = Vec::with_capacity(n);
    let mut splits = Vec::with_capacity(n);
    for (g, rows) in groups.into_iter().enumerate() {
        for (c, x) in rows {
            data.extend(x);
            labels.push(c);
            splits.push(Split::ALL[g]);
        }
    }
    FeatureDataset::new(Tensor::matrix(n, cfg.dim, data)?, labels, splits, cfg.classes)
}
