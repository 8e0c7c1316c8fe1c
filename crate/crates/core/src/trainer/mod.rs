//! The class-incremental training loop.
//!
//! Each task activates its classes in the prior table, snapshots the model
//! as the frozen teacher when replay is on, and then runs a fixed number of
//! Adam steps. Every step draws one batch of current-task data and, from
//! the second task on, one equally sized replay batch from the teacher.

mod config;
mod eval;
mod runlog;
mod step;

pub use step::{current_terms, replay_terms, train_step};

use std::path::Path;

use crate::data::{make_task_split, FeatureDataset, Split, TaskSplit};
use crate::error::{Error, Result};
use crate::losses::LossReport;
use crate::model::ModelState;
use crate::ndcore::{AdamState, SeededRng};
use crate::replay::{build_replay_batch, ReplayConfig};

pub use config::{MetricOptions, ModelOptions, ScenarioConfig};
pub use eval::{
    average_incremental_accuracy, evaluate, generated_latents, latent_report, Evaluation, FdPoint, LatentReport,
    PrdSummary, TaskData,
};
pub use runlog::{
    read_config, read_metrics, read_status, LossRecord, MetricRecord, RunLog, RunStatus, RunWriter, CONFIG_FILE,
    LOSSES_FILE, METRICS_FILE, SPLIT_FILE, STATUS_FILE,
};

/// Training rows of one task.
pub struct TaskBatchSource<'a> {
    pub data: &'a TaskData,
    /// Classes this task introduces.
    pub classes: &'a [usize],
}

/// Cycles through shuffled epochs of `0..n`.
struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    fn new(n: usize, rng: &mut SeededRng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        Self { order, pos: 0 }
    }

    fn next(&mut self, size: usize, rng: &mut SeededRng) -> Vec<usize> {
        let size = size.min(self.order.len());
        if self.pos + size > self.order.len() {
            rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + size].to_vec();
        self.pos += size;
        out
    }
}

/// Trains `state` on one task for `iterations` steps. `task` is 0-based.
/// With `old` present every step adds a replay batch generated by it.
/// `on_loss` receives `(iteration, report)` for every step.
///
/// Zero iterations leave `state` untouched.
#[allow(clippy::too_many_arguments)]
pub fn train_task(
    state: &mut ModelState,
    task: usize,
    source: &TaskBatchSource<'_>,
    old: Option<&ModelState>,
    cfg: &ScenarioConfig,
    iterations: usize,
    rng: &mut SeededRng,
    on_loss: &mut dyn FnMut(usize, &LossReport),
) -> Result<()> {
    if iterations == 0 {
        return Ok(());
    }
    let data = source.data;
    if data.is_empty() {
        return Err(Error::domain(
            "train_task",
            format!("task {} has no training rows", task + 1),
        ));
    }
    if let Some(y) = data.labels.iter().find(|y| !source.classes.contains(y)) {
        return Err(Error::Contract(format!(
            "label {y} does not belong to task {}",
            task + 1
        )));
    }
    if let Some(o) = old {
        if o.task == 0 {
            return Err(Error::Contract("the replay teacher has not been trained".into()));
        }
    }

    state.prior.activate(source.classes, rng)?;
    let mut adam = AdamState::new(cfg.adam, state.params());
    let mut batch_rng = rng.fork(1);
    let mut replay_rng = rng.fork(2);
    let mut noise_rng = rng.fork(3);
    let mut sampler = BatchSampler::new(data.len(), &mut batch_rng);

    for it in 0..iterations {
        let idx = sampler.next(cfg.batch_size, &mut batch_rng);
        let x = data.features.gather_rows(&idx)?;
        let y: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
        let replay = match old {
            Some(o) => Some(build_replay_batch(
                o,
                &ReplayConfig {
                    batch_size: idx.len(),
                    n_cycles: cfg.n_cycles,
                    temperature: cfg.temperature,
                },
                &mut replay_rng,
            )?),
            None => None,
        };
        let report = train_step(
            state,
            &mut adam,
            &x,
            &y,
            replay.as_ref(),
            &cfg.weights,
            cfg.temperature,
            &mut noise_rng,
        )
        .map_err(|e| match e {
            Error::NonFinite { op } => {
                log::error!("task {} iteration {it}: non-finite value in {op}", task + 1);
                Error::NonFiniteLoss {
                    task: task + 1,
                    iteration: it,
                    report: Box::new(LossReport {
                        total: f64::NAN,
                        ..Default::default()
                    }),
                }
            }
            other => other,
        })?;
        on_loss(it, &report);
    }
    state.task += 1;
    Ok(())
}

/// A run that stopped early, with everything recorded up to that point.
#[derive(Debug, thiserror::Error)]
#[error("run aborted after {} completed task(s): {error}", partial.metrics.len())]
pub struct ScenarioAbort {
    pub error: Error,
    pub partial: RunLog,
}

fn task_data(ds: &FeatureDataset, split: &TaskSplit, which: Split, t: usize) -> Result<TaskData> {
    let (features, labels) = ds.rows(&split.indices(ds, which, t))?;
    Ok(TaskData { features, labels })
}

/// Runs every task of the scenario on `dataset`, evaluating after each one.
/// With `out` set, artifacts are written there as they are produced.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    dataset: &FeatureDataset,
    out: Option<&Path>,
) -> std::result::Result<RunLog, Box<ScenarioAbort>> {
    let abort = |error: Error, partial: RunLog| Box::new(ScenarioAbort { error, partial });
    let split = match cfg
        .validate()
        .and_then(|_| make_task_split(dataset, &cfg.layout(), cfg.seed))
    {
        Ok(s) => s,
        Err(e) => return Err(abort(e, RunLog::new(cfg.seed, TaskSplit { tasks: vec![] }))),
    };
    let mut log = RunLog::new(cfg.seed, split.clone());
    let mut writer = match out.map(|d| RunWriter::create(d, cfg, &split)).transpose() {
        Ok(w) => w,
        Err(e) => return Err(abort(e, log)),
    };
    let result = run_tasks(cfg, dataset, &split, &mut log, writer.as_mut());
    let status = RunStatus {
        complete: result.is_ok(),
        tasks_completed: log.metrics.len(),
        average_incremental_accuracy: (!log.metrics.is_empty()).then(|| log.average_incremental_accuracy()),
        error: result.as_ref().err().map(|e| e.to_string()),
    };
    let finished = writer.as_ref().map(|w| w.finish(&status)).transpose();
    match (result, finished) {
        (Ok(()), Ok(_)) => Ok(log),
        (Err(e), _) | (Ok(()), Err(e)) => Err(abort(e, log)),
    }
}

fn run_tasks(
    cfg: &ScenarioConfig,
    dataset: &FeatureDataset,
    split: &TaskSplit,
    log: &mut RunLog,
    mut writer: Option<&mut RunWriter>,
) -> Result<()> {
    let mut base = SeededRng::new(cfg.seed);
    let mut init_rng = base.fork(0);
    let model_cfg = cfg.model.model_config(dataset.dim(), dataset.n_classes);
    let mut state = ModelState::new(model_cfg, &mut init_rng)?;

    let n_tasks = split.n_tasks();
    let train: Vec<TaskData> = (0..n_tasks)
        .map(|t| task_data(dataset, split, Split::Train, t))
        .collect::<Result<_>>()?;
    let test: Vec<TaskData> = (0..n_tasks)
        .map(|t| task_data(dataset, split, Split::Test, t))
        .collect::<Result<_>>()?;
    let val: Vec<TaskData> = (0..n_tasks)
        .map(|t| task_data(dataset, split, Split::Val, t))
        .collect::<Result<_>>()?;

    let mut steps = 0;
    for t in 0..n_tasks {
        let mut task_rng = base.fork(100 + t as u64);
        let mut metric_rng = base.fork(1000 + t as u64);
        let old = (t > 0 && cfg.replay).then(|| state.clone());
        let old_sum = old.as_ref().map(ModelState::checksum);
        let iterations = cfg.iterations(t);
        let mut losses = Vec::new();
        let step0 = steps;
        let every = cfg.log_every;
        train_task(
            &mut state,
            t,
            &TaskBatchSource {
                data: &train[t],
                classes: &split.tasks[t],
            },
            old.as_ref(),
            cfg,
            iterations,
            &mut task_rng,
            &mut |it, report| {
                if it % every == 0 || it + 1 == iterations {
                    losses.push(LossRecord {
                        task: t + 1,
                        iteration: it,
                        step: step0 + it + 1,
                        report: report.clone(),
                    });
                }
            },
        )?;
        steps += iterations;
        if let Some(w) = writer.as_deref_mut() {
            w.append_losses(&losses)?;
        }
        log.losses.extend(losses);
        if let (Some(o), Some(sum)) = (&old, old_sum) {
            if o.checksum() != sum {
                return Err(Error::Contract("the frozen teacher changed during training".into()));
            }
        }

        let eval = evaluate(&state, &test[..=t])?;
        let val_average = if val[..=t].iter().all(|v| !v.is_empty()) {
            Some(evaluate(&state, &val[..=t])?.average)
        } else {
            None
        };
        let mut record = MetricRecord {
            task: t + 1,
            classes_seen: state.seen().len(),
            steps,
            per_task_accuracy: eval.per_task,
            average_accuracy: eval.average,
            val_average_accuracy: val_average,
            fd: None,
            fd_by_cycles: Vec::new(),
            prd: None,
            pca_explained_variance: None,
            model_checksum: state.checksum(),
        };
        if cfg.metrics.any() {
            let (features, labels) = dataset.rows(&dataset.indices_for(Split::Train, &split.seen_through(t)))?;
            let seen_train = TaskData { features, labels };
            let lr = latent_report(&state, &seen_train, cfg.n_cycles, &cfg.metrics, &mut metric_rng)?;
            record.fd = lr.fd;
            record.fd_by_cycles = lr.fd_by_cycles;
            if let Some(curve) = lr.prd {
                record.prd = Some(PrdSummary::of(&curve));
                if let Some(w) = writer.as_deref() {
                    w.prd(t + 1, &curve)?;
                }
                log.prd_curves.push((t + 1, curve));
            }
            if let Some(p) = lr.pca {
                record.pca_explained_variance = Some(p.explained_variance_ratio.clone());
                if let Some(w) = writer.as_deref() {
                    w.pca(t + 1, &p, &lr.pca_labels)?;
                }
            }
        }
        log::info!(
            "seed {} task {}/{}: average accuracy {:.4}",
            cfg.seed,
            t + 1,
            n_tasks,
            record.average_accuracy
        );
        if let Some(w) = writer.as_deref_mut() {
            w.append_metric(&record)?;
            log.checkpoints.push(w.checkpoint(&state, t + 1)?);
        }
        log.metrics.push(record);
    }
    Ok(())
}
