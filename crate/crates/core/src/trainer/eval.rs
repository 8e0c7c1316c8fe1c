//! Class-incremental evaluation and latent-space diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{frechet_distance, pca_project, prd_curve, PcaProjection, PrdCurve};
use crate::model::ModelState;
use crate::ndcore::{SeededRng, Tensor};
use crate::replay::{cycle, generate};

use super::config::MetricOptions;

/// Held-out rows of one task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub features: Tensor,
    pub labels: Vec<usize>,
}

impl TaskData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Accuracy on each task seen so far, first task first.
    pub per_task: Vec<f64>,
    /// Mean of `per_task`.
    pub average: f64,
}

/// Task-agnostic accuracy on each task: predictions range over every class
/// the model has seen and are made from the posterior mean.
pub fn evaluate(state: &ModelState, tasks: &[TaskData]) -> Result<Evaluation> {
    if tasks.is_empty() {
        return Err(Error::domain("evaluate", "no tasks to evaluate"));
    }
    let mut per_task = Vec::with_capacity(tasks.len());
    for (t, data) in tasks.iter().enumerate() {
        if data.is_empty() {
            return Err(Error::domain(
                "evaluate",
                format!("test split of task {} is empty", t + 1),
            ));
        }
        let pred = state.predict(&data.features)?;
        let hits = pred.iter().zip(&data.labels).filter(|(p, y)| p == y).count();
        per_task.push(hits as f64 / data.len() as f64);
    }
    let average = per_task.iter().sum::<f64>() / per_task.len() as f64;
    Ok(Evaluation { per_task, average })
}

/// Mean of the per-boundary average accuracies.
pub fn average_incremental_accuracy(averages: &[f64]) -> f64 {
    if averages.is_empty() {
        return 0.0;
    }
    averages.iter().sum::<f64>() / averages.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdPoint {
    pub n_cycles: usize,
    pub fd: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrdSummary {
    pub clusters: usize,
    /// Recall-weighted `max F_8`.
    pub f8: f64,
    /// Precision-weighted `max F_1/8`.
    pub f1_8: f64,
}

impl PrdSummary {
    pub fn of(curve: &PrdCurve) -> Self {
        Self {
            clusters: curve.clusters,
            f8: curve.max_f_beta(8.0),
            f1_8: curve.max_f_beta(1.0 / 8.0),
        }
    }
}

/// Diagnostics comparing posterior means of generated features with those
/// of real features.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentReport {
    pub fd: Option<f64>,
    pub fd_by_cycles: Vec<FdPoint>,
    pub prd: Option<PrdCurve>,
    /// PCA fitted on real latents, generated latents stacked below them.
    pub pca: Option<PcaProjection>,
    pub pca_labels: Vec<usize>,
}

/// Posterior means of generated samples after each requested cycle count.
/// One raw batch is shared by every count.
pub fn generated_latents(
    state: &ModelState,
    n: usize,
    cycles: &[usize],
    rng: &mut SeededRng,
) -> Result<(Vec<Tensor>, Vec<usize>)> {
    let classes = state.seen_vec();
    let (raw, labels) = generate(state, &classes, n, rng)?;
    let mut out = Vec::with_capacity(cycles.len());
    for &c in cycles {
        out.push(state.encode_mean(&cycle(&raw, state, c)?)?);
    }
    Ok((out, labels))
}

fn subsample(x: &Tensor, labels: &[usize], n: usize, rng: &mut SeededRng) -> Result<(Tensor, Vec<usize>)> {
    let mut idx: Vec<usize> = (0..x.rows()).collect();
    if idx.len() > n {
        rng.shuffle(&mut idx);
        idx.truncate(n);
        idx.sort_unstable();
    }
    Ok((x.gather_rows(&idx)?, idx.iter().map(|&i| labels[i]).collect()))
}

fn stack(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::matrix(a.rows() + b.rows(), a.cols(), data)
}

/// FD at `n_cycles` and over `opts.fd_cycles`, PRD and PCA, as enabled.
pub fn latent_report(
    state: &ModelState,
    real: &TaskData,
    n_cycles: usize,
    opts: &MetricOptions,
    rng: &mut SeededRng,
) -> Result<LatentReport> {
    let (real_x, real_y) = subsample(&real.features, &real.labels, opts.samples, rng)?;
    let real_z = state.encode_mean(&real_x)?;
    let mut cycles = vec![n_cycles];
    cycles.extend(&opts.fd_cycles);
    let (gen, gen_y) = generated_latents(state, opts.samples, &cycles, rng)?;
    let main = &gen[0];

    let fd = if opts.fd {
        Some(frechet_distance(main, &real_z)?)
    } else {
        None
    };
    let fd_by_cycles = opts
        .fd_cycles
        .iter()
        .zip(&gen[1..])
        .map(|(&c, z)| {
            Ok(FdPoint {
                n_cycles: c,
                fd: frechet_distance(z, &real_z)?,
            })
        })
        .collect::<Result<_>>()?;
    let prd = match &opts.prd {
        Some(cfg) => Some(prd_curve(&real_z, main, cfg)?),
        None => None,
    };
    let (pca, pca_labels) = match opts.pca_components {
        Some(k) => {
            let both = stack(&real_z, main)?;
            let p = pca_project(&both, k)?;
            let mut labels = real_y;
            labels.extend(gen_y);
            (Some(p), labels)
        }
        None => (None, Vec::new()),
    };
    Ok(LatentReport {
        fd,
        fd_by_cycles,
        prd,
        pca,
        pca_labels,
    })
}
