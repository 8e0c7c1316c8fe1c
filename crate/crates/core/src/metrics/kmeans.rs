use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{SeededRng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KMeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 20,
            restarts: 10,
            max_iter: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansFit {
    /// `[k, D]`
    pub centroids: Tensor,
    pub assignments: Vec<usize>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// k-means++ seeding.
fn init(x: &Tensor, k: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let n = x.rows();
    let mut centroids = vec![x.row(rng.below(n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.uniform() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.below(n)
        };
        let c = x.row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), &c));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd(x: &Tensor, mut centroids: Vec<Vec<f64>>, max_iter: usize) -> KMeansFit {
    let (n, d) = (x.rows(), x.cols());
    let k = centroids.len();
    let mut assign = vec![usize::MAX; n];
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        for (i, a) in assign.iter_mut().enumerate() {
            let (j, _) = nearest(x.row(i), &centroids);
            if *a != j {
                *a = j;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, &j) in assign.iter().enumerate() {
            counts[j] += 1;
            for (s, v) in sums[j].iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            } else {
                // Re-seed an empty cluster at the point worst served by the others.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        nearest(x.row(a), &centroids)
                            .1
                            .total_cmp(&nearest(x.row(b), &centroids).1)
                    })
                    .unwrap_or(0);
                centroids[j] = x.row(far).to_vec();
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let mut inertia = 0.0;
    for (i, a) in assign.iter_mut().enumerate() {
        let (j, dist) = nearest(x.row(i), &centroids);
        *a = j;
        inertia += dist;
    }
    let flat = centroids.into_iter().flatten().collect();
    KMeansFit {
        centroids: Tensor::matrix(k, d, flat).expect("centroid shape"),
        assignments: assign,
        inertia,
    }
}

/// Lloyd's algorithm from `restarts` k-means++ seedings; the lowest-inertia
/// run wins. Deterministic for a fixed seed.
pub fn kmeans(x: &Tensor, cfg: &KMeansConfig) -> Result<KMeansFit> {
    let (n, _) = x.dims2()?;
    if n == 0 {
        return Err(Error::domain("kmeans", "no samples to cluster"));
    }
    if cfg.k == 0 {
        return Err(Error::domain("kmeans", "k must be positive"));
    }
    let k = cfg.k.min(n);
    let mut rng = SeededRng::new(cfg.seed);
    let mut best: Option<KMeansFit> = None;
    for _ in 0..cfg.restarts.max(1) {
        let fit = lloyd(x, init(x, k, &mut rng), cfg.max_iter);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_separated_blobs() {
        let mut rng = SeededRng::new(1);
        let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let mut data = Vec::new();
        for i in 0..300 {
            let c = centers[i % 3];
            data.push(c[0] + 0.1 * rng.normal());
            data.push(c[1] + 0.1 * rng.normal());
        }
        let x = Tensor::matrix(300, 2, data).unwrap();
        let fit = kmeans(
            &x,
            &KMeansConfig {
                k: 3,
                seed: 4,
                ..Default::default()
            },
        )
        .unwrap();
        for i in 3..300 {
            assert_eq!(fit.assignments[i], fit.assignments[i % 3]);
        }
        assert!(fit.inertia < 300.0 * 2.0 * 0.02);
    }

    #[test]
    fn deterministic_for_seed() {
        let x = SeededRng::new(2).normal_tensor(&[100, 3]);
        let cfg = KMeansConfig {
            k: 5,
            seed: 7,
            ..Default::default()
        };
        assert_eq!(kmeans(&x, &cfg).unwrap(), kmeans(&x, &cfg).unwrap());
    }

    #[test]
    fn more_clusters_than_points() {
        let x = Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let fit = kmeans(
            &x,
            &KMeansConfig {
                k: 5,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(fit.centroids.rows(), 2);
        assert_eq!(fit.inertia, 0.0);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(kmeans(&Tensor::zeros(&[0, 2]), &KMeansConfig::default()).is_err());
    }
}
