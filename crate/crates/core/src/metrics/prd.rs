use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans, KMeansConfig};
use crate::error::{Error, Result};
use crate::ndcore::Tensor;

/// Keeps the angle sweep away from the 0 and π/2 endpoints.
const ANGLE_EPS: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrdConfig {
    pub clusters: usize,
    pub grid: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for PrdConfig {
    fn default() -> Self {
        Self {
            clusters: 20,
            grid: 1001,
            restarts: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrdPoint {
    pub lambda: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrdCurve {
    /// Ordered by increasing λ.
    pub points: Vec<PrdPoint>,
    pub clusters: usize,
}

impl PrdCurve {
    /// Largest recall among points whose precision is at least `precision - tol`.
    pub fn max_recall_at_precision(&self, precision: f64, tol: f64) -> f64 {
        self.points
            .iter()
            .filter(|p| p.precision >= precision - tol)
            .map(|p| p.recall)
            .fold(0.0, f64::max)
    }

    /// `max F_β` over the curve. β > 1 weights recall, β < 1 precision.
    pub fn max_f_beta(&self, beta: f64) -> f64 {
        let b2 = beta * beta;
        self.points
            .iter()
            .filter(|p| p.precision > 0.0 && p.recall > 0.0)
            .map(|p| (1.0 + b2) * p.precision * p.recall / (b2 * p.precision + p.recall))
            .fold(0.0, f64::max)
    }
}

/// `λ = tan θ` for `grid` angles spread uniformly over `(0, π/2)`.
pub fn lambda_grid(grid: usize) -> Vec<f64> {
    if grid == 1 {
        return vec![1.0];
    }
    let (lo, hi) = (ANGLE_EPS, FRAC_PI_2 - ANGLE_EPS);
    (0..grid)
        .map(|i| (lo + (hi - lo) * i as f64 / (grid - 1) as f64).tan())
        .collect()
}

fn check_histogram(name: &str, h: &[f64]) -> Result<()> {
    if h.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::domain("prd", format!("{name} has a negative or non-finite bin")));
    }
    let s: f64 = h.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::domain("prd", format!("{name} sums to {s}")));
    }
    Ok(())
}

/// PRD curve from a reference histogram `p` (real) and a model histogram
/// `q` (generated): precision `α(λ) = Σ min(λ p_i, q_i)`, recall
/// `β(λ) = Σ min(p_i, q_i / λ)`.
pub fn prd_from_histograms(p: &[f64], q: &[f64], grid: usize) -> Result<PrdCurve> {
    if p.len() != q.len() {
        return Err(Error::dim("prd", &[p.len()], &[q.len()]));
    }
    if p.is_empty() || grid < 2 {
        return Err(Error::domain("prd", "need at least one bin and two grid points"));
    }
    check_histogram("reference histogram", p)?;
    check_histogram("model histogram", q)?;
    let points = lambda_grid(grid)
        .into_iter()
        .map(|lambda| {
            let precision: f64 = p.iter().zip(q).map(|(&pi, &qi)| (lambda * pi).min(qi)).sum();
            let recall: f64 = p.iter().zip(q).map(|(&pi, &qi)| pi.min(qi / lambda)).sum();
            PrdPoint {
                lambda,
                precision: precision.clamp(0.0, 1.0),
                recall: recall.clamp(0.0, 1.0),
            }
        })
        .collect();
    Ok(PrdCurve {
        points,
        clusters: p.len(),
    })
}

fn stack(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (na, da) = a.dims2()?;
    let (nb, db) = b.dims2()?;
    if da != db {
        return Err(Error::dim("prd", a.shape(), b.shape()));
    }
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::matrix(na + nb, da, data)
}

/// Clusters the union of both sets and compares the two cluster histograms.
pub fn prd_curve(real: &Tensor, generated: &Tensor, cfg: &PrdConfig) -> Result<PrdCurve> {
    let (nr, _) = real.dims2()?;
    let (ng, _) = generated.dims2()?;
    if nr == 0 || ng == 0 {
        return Err(Error::domain("prd", "both sample sets must be non-empty"));
    }
    if cfg.clusters < 2 {
        return Err(Error::domain("prd", "need at least 2 clusters"));
    }
    let union = stack(real, generated)?;
    let fit = kmeans(
        &union,
        &KMeansConfig {
            k: cfg.clusters,
            restarts: cfg.restarts,
            max_iter: 100,
            seed: cfg.seed,
        },
    )?;
    let k = fit.centroids.rows();
    let mut p = vec![0.0; k];
    let mut q = vec![0.0; k];
    for (i, &c) in fit.assignments.iter().enumerate() {
        if i < nr {
            p[c] += 1.0;
        } else {
            q[c] += 1.0;
        }
    }
    p.iter_mut().for_each(|v| *v /= nr as f64);
    q.iter_mut().for_each(|v| *v /= ng as f64);
    let mut curve = prd_from_histograms(&p, &q, cfg.grid)?;
    curve.clusters = k;
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::SeededRng;
    use proptest::prelude::*;

    #[test]
    fn half_mode_coverage() {
        let c = prd_from_histograms(&[0.5, 0.5], &[1.0, 0.0], 1001).unwrap();
        // λ = 2 is where precision first reaches 1; the nearest grid angle is
        // within π/2000 of atan 2.
        let r = c.max_recall_at_precision(1.0, 1e-3);
        assert!((r - 0.5).abs() < 2e-3, "{r}");
        assert!(c.points.iter().all(|p| p.recall <= 0.5 + 1e-12));
    }

    #[test]
    fn identical_histograms_reach_one_one() {
        let h = [0.1, 0.2, 0.3, 0.4];
        let c = prd_from_histograms(&h, &h, 1001).unwrap();
        let best = c
            .points
            .iter()
            .map(|p| (1.0 - p.precision).hypot(1.0 - p.recall))
            .fold(f64::INFINITY, f64::min);
        assert!(best < 1e-6);
    }

    #[test]
    fn disjoint_histograms_are_zero() {
        let c = prd_from_histograms(&[1.0, 0.0], &[0.0, 1.0], 101).unwrap();
        assert!(c.points.iter().all(|p| p.precision == 0.0 && p.recall == 0.0));
    }

    #[test]
    fn bad_histograms_are_rejected() {
        assert!(prd_from_histograms(&[0.5, 0.5], &[1.0], 11).is_err());
        assert!(prd_from_histograms(&[0.5, 0.6], &[0.5, 0.5], 11).is_err());
        assert!(prd_from_histograms(&[1.5, -0.5], &[0.5, 0.5], 11).is_err());
    }

    #[test]
    fn identical_sample_sets_reach_one_one() {
        let mut rng = SeededRng::new(1);
        let n = 2000;
        let a = rng.normal_tensor(&[n, 3]);
        let b = rng.normal_tensor(&[n, 3]);
        let c = prd_curve(
            &a,
            &b,
            &PrdConfig {
                grid: 201,
                ..Default::default()
            },
        )
        .unwrap();
        let tol = 1.0 / (n as f64).sqrt();
        let best = c
            .points
            .iter()
            .map(|p| (1.0 - p.precision).max(1.0 - p.recall))
            .fold(f64::INFINITY, f64::min);
        // Histograms over 20 bins from n draws each differ by O(1/√n) in total mass.
        assert!(best <= 5.0 * tol, "{best}");
        let same = prd_curve(
            &a,
            &a,
            &PrdConfig {
                grid: 201,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(same
            .points
            .iter()
            .any(|p| p.precision > 1.0 - 1e-9 && p.recall > 1.0 - 1e-9));
    }

    #[test]
    fn separated_supports_score_zero() {
        let mut rng = SeededRng::new(2);
        let a = rng.normal_tensor(&[300, 2]);
        let b = rng.normal_tensor(&[300, 2]).add_scalar(1000.0).unwrap();
        let c = prd_curve(
            &a,
            &b,
            &PrdConfig {
                clusters: 4,
                grid: 51,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(c.points.iter().all(|p| p.precision < 1e-6 && p.recall < 1e-6));
    }

    fn histogram(raw: &[f64]) -> Vec<f64> {
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect()
    }

    proptest! {
        #[test]
        fn values_in_unit_interval_and_swap_symmetric(
            raw in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..12)
        ) {
            let p = histogram(&raw.iter().map(|r| r.0 + 1e-3).collect::<Vec<_>>());
            let q = histogram(&raw.iter().map(|r| r.1 + 1e-3).collect::<Vec<_>>());
            let grid = 201;
            let pq = prd_from_histograms(&p, &q, grid).unwrap();
            let qp = prd_from_histograms(&q, &p, grid).unwrap();
            for pt in &pq.points {
                prop_assert!((0.0..=1.0).contains(&pt.precision));
                prop_assert!((0.0..=1.0).contains(&pt.recall));
            }
            // The θ grid is symmetric about π/4, so λ ↦ 1/λ reverses it.
            for (a, b) in pq.points.iter().zip(qp.points.iter().rev()) {
                prop_assert!((a.precision - b.recall).abs() < 1e-9);
                prop_assert!((a.recall - b.precision).abs() < 1e-9);
            }
        }
    }
}
