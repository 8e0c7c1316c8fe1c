use serde::{Deserialize, Serialize};

use crate::data::TaskLayout;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::metrics::PrdConfig;
use crate::model::{ModelConfig, ReconKind};
use crate::ndcore::AdamConfig;

/// Architecture settings that do not depend on the dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelOptions {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub recon: ReconKind,
}

impl Default for ModelOptions {
    fn default() -> Self {
        let m = ModelConfig::new(1, 1);
        Self {
            latent_dim: m.latent_dim,
            hidden: m.hidden,
            recon: m.recon,
        }
    }
}

impl ModelOptions {
    pub fn model_config(&self, input_dim: usize, n_classes: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            latent_dim: self.latent_dim,
            hidden: self.hidden.clone(),
            n_classes,
            recon: self.recon,
        }
    }
}

/// Latent-space diagnostics computed after each task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricOptions {
    /// Fréchet distance between generated and real latents at `n_cycles`.
    pub fd: bool,
    /// Extra cycle counts for the FD-versus-cycles series.
    pub fd_cycles: Vec<usize>,
    pub prd: Option<PrdConfig>,
    pub pca_components: Option<usize>,
    /// Generated samples, and at most this many real samples, per metric.
    pub samples: usize,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            fd: false,
            fd_cycles: Vec::new(),
            prd: None,
            pca_components: None,
            samples: 1000,
        }
    }
}

impl MetricOptions {
    pub fn any(&self) -> bool {
        self.fd || !self.fd_cycles.is_empty() || self.prd.is_some() || self.pca_components.is_some()
    }
}

/// One class-incremental run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_classes: usize,
    pub first_task_classes: usize,
    /// Tasks after the first; the remaining classes are split equally.
    pub incremental_tasks: usize,
    #[serde(default = "default_first_iters")]
    pub first_task_iters: usize,
    #[serde(default = "default_later_iters")]
    pub later_task_iters: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub n_cycles: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Generative replay on later tasks. Off gives plain finetuning.
    #[serde(default = "default_true")]
    pub replay: bool,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub model: ModelOptions,
    #[serde(default)]
    pub metrics: MetricOptions,
    /// Keep every `log_every`-th iteration's losses.
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_first_iters() -> usize {
    10_000
}

fn default_later_iters() -> usize {
    5_000
}

fn default_batch() -> usize {
    128
}

fn default_temperature() -> f64 {
    2.0
}

fn default_true() -> bool {
    true
}

fn default_log_every() -> usize {
    1
}

impl ScenarioConfig {
    /// Defaults for everything but the class layout.
    pub fn new(n_classes: usize, first_task_classes: usize, incremental_tasks: usize) -> Self {
        Self {
            n_classes,
            first_task_classes,
            incremental_tasks,
            first_task_iters: default_first_iters(),
            later_task_iters: default_later_iters(),
            batch_size: default_batch(),
            n_cycles: 0,
            temperature: default_temperature(),
            replay: true,
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            model: ModelOptions::default(),
            metrics: MetricOptions::default(),
            log_every: default_log_every(),
            seed: 0,
        }
    }

    pub fn layout(&self) -> TaskLayout {
        TaskLayout {
            n_classes: self.n_classes,
            first_task_classes: self.first_task_classes,
            incremental_tasks: self.incremental_tasks,
        }
    }

    pub fn n_tasks(&self) -> usize {
        1 + self.incremental_tasks
    }

    pub fn iterations(&self, task: usize) -> usize {
        if task == 0 {
            self.first_task_iters
        } else {
            self.later_task_iters
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.layout().validate()?;
        if self.first_task_iters == 0 {
            return Err(Error::config("first_task_iters", "must be positive"));
        }
        if self.incremental_tasks > 0 && self.later_task_iters == 0 {
            return Err(Error::config("later_task_iters", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("temperature", "must be positive and finite"));
        }
        if !(self.adam.lr > 0.0)
            || !(0.0..1.0).contains(&self.adam.beta1)
            || !(0.0..1.0).contains(&self.adam.beta2)
            || !(self.adam.eps > 0.0)
        {
            return Err(Error::config("adam", "need lr > 0, eps > 0 and betas in [0, 1)"));
        }
        let w = &self.weights;
        for (name, v) in [
            ("weights.recon", w.recon),
            ("weights.latent", w.latent),
            ("weights.class_ce", w.class_ce),
            ("weights.distill", w.distill),
            ("weights.latent_match", w.latent_match),
            ("weights.latent_distill", w.latent_distill),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be finite and non-negative"));
            }
        }
        if self.model.latent_dim == 0 {
            return Err(Error::config("model.latent_dim", "must be positive"));
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::config("model.hidden", "widths must be positive"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every", "must be positive"));
        }
        if self.metrics.any() && self.metrics.samples < 2 {
            return Err(Error::config("metrics.samples", "need at least 2"));
        }
        if let Some(k) = self.metrics.pca_components {
            if k > self.model.latent_dim {
                return Err(Error::config("metrics.pca_components", "exceeds latent_dim"));
            }
        }
        if let Some(p) = &self.metrics.prd {
            if p.clusters < 2 || p.grid < 2 {
                return Err(Error::config("metrics.prd", "need clusters >= 2 and grid >= 2"));
            }
        }
        Ok(())
    }
}
