//! Run records and their on-disk form.
//!
//! A run directory holds `config.json`, `split.json`, `metrics.jsonl` (one
//! [`MetricRecord`] per completed task, appended as tasks finish),
//! `losses.csv`, `checkpoints/task_NN.json`, optional `prd_task_NN.csv` and
//! `pca_task_NN.csv`, and `status.json`, written last.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::eval::{average_incremental_accuracy, FdPoint, PrdSummary};
use crate::data::TaskSplit;
use crate::error::{Error, Result};
use crate::losses::LossReport;
use crate::metrics::{write_pca_csv, write_prd_csv, PcaProjection, PrdCurve};
use crate::model::ModelState;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const LOSSES_FILE: &str = "losses.csv";
pub const STATUS_FILE: &str = "status.json";
pub const CONFIG_FILE: &str = "config.json";
pub const SPLIT_FILE: &str = "split.json";

/// Evaluation at one task boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    /// 1-based index of the task just completed.
    pub task: usize,
    pub classes_seen: usize,
    /// Optimizer steps taken so far in the run.
    pub steps: usize,
    pub per_task_accuracy: Vec<f64>,
    pub average_accuracy: f64,
    #[serde(default)]
    pub val_average_accuracy: Option<f64>,
    #[serde(default)]
    pub fd: Option<f64>,
    #[serde(default)]
    pub fd_by_cycles: Vec<FdPoint>,
    #[serde(default)]
    pub prd: Option<PrdSummary>,
    #[serde(default)]
    pub pca_explained_variance: Option<Vec<f64>>,
    pub model_checksum: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub task: usize,
    pub iteration: usize,
    pub step: usize,
    pub report: LossReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub complete: bool,
    pub tasks_completed: usize,
    pub average_incremental_accuracy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    pub seed: u64,
    pub task_split: TaskSplit,
    pub metrics: Vec<MetricRecord>,
    pub losses: Vec<LossRecord>,
    pub prd_curves: Vec<(usize, PrdCurve)>,
    pub checkpoints: Vec<PathBuf>,
}

impl RunLog {
    pub fn new(seed: u64, task_split: TaskSplit) -> Self {
        Self {
            seed,
            task_split,
            metrics: Vec::new(),
            losses: Vec::new(),
            prd_curves: Vec::new(),
            checkpoints: Vec::new(),
        }
    }

    pub fn average_incremental_accuracy(&self) -> f64 {
        let a: Vec<f64> = self.metrics.iter().map(|m| m.average_accuracy).collect();
        average_incremental_accuracy(&a)
    }

    pub fn is_complete(&self) -> bool {
        self.metrics.len() == self.task_split.n_tasks()
    }
}

/// Appends run artifacts to a directory as the run progresses.
pub struct RunWriter {
    dir: PathBuf,
    losses: csv::Writer<File>,
}

fn task_file(prefix: &str, task: usize, ext: &str) -> String {
    format!("{prefix}_task_{task:02}.{ext}")
}

impl RunWriter {
    pub fn create(dir: &Path, config: &ScenarioConfig, split: &TaskSplit) -> Result<Self> {
        fs::create_dir_all(dir.join("checkpoints"))?;
        let _ = fs::remove_file(dir.join(STATUS_FILE));
        fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(config)?)?;
        fs::write(dir.join(SPLIT_FILE), serde_json::to_string_pretty(split)?)?;
        File::create(dir.join(METRICS_FILE))?;
        let mut losses = csv::Writer::from_path(dir.join(LOSSES_FILE))?;
        losses.write_record([
            "task",
            "iteration",
            "step",
            "total",
            "recon",
            "latent",
            "class_ce",
            "distill",
            "latent_match",
            "latent_distill",
        ])?;
        losses.flush()?;
        Ok(Self {
            dir: dir.to_path_buf(),
            losses,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn append_losses(&mut self, records: &[LossRecord]) -> Result<()> {
        for r in records {
            let mut row = vec![
                r.task.to_string(),
                r.iteration.to_string(),
                r.step.to_string(),
                r.report.total.to_string(),
            ];
            row.extend(
                r.report
                    .terms()
                    .iter()
                    .map(|(_, v)| v.map(|v| v.to_string()).unwrap_or_default()),
            );
            self.losses.write_record(&row)?;
        }
        self.losses.flush()?;
        Ok(())
    }

    pub fn append_metric(&mut self, record: &MetricRecord) -> Result<()> {
        let mut f = OpenOptions::new().append(true).open(self.dir.join(METRICS_FILE))?;
        writeln!(f, "{}", serde_json::to_string(record)?)?;
        Ok(())
    }

    pub fn checkpoint(&self, state: &ModelState, task: usize) -> Result<PathBuf> {
        let p = self.dir.join("checkpoints").join(format!("task_{task:02}.json"));
        state.save_checkpoint(&p)?;
        Ok(p)
    }

    pub fn prd(&self, task: usize, curve: &PrdCurve) -> Result<()> {
        write_prd_csv(&self.dir.join(task_file("prd", task, "csv")), curve)
    }

    pub fn pca(&self, task: usize, pca: &PcaProjection, labels: &[usize]) -> Result<()> {
        write_pca_csv(&self.dir.join(task_file("pca", task, "csv")), pca, Some(labels))
    }

    pub fn finish(&self, status: &RunStatus) -> Result<()> {
        fs::write(self.dir.join(STATUS_FILE), serde_json::to_string_pretty(status)?)?;
        Ok(())
    }
}

/// Reads `metrics.jsonl`, reporting the line of any malformed record.
pub fn read_metrics(dir: &Path) -> Result<Vec<MetricRecord>> {
    let path = dir.join(METRICS_FILE);
    let name = path.display().to_string();
    let f = File::open(&path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::format(&name, Some(format!("line {}", i + 1)), e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_status(dir: &Path) -> Result<RunStatus> {
    let path = dir.join(STATUS_FILE);
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn read_config(dir: &Path) -> Result<ScenarioConfig> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join(CONFIG_FILE))?)?)
}
