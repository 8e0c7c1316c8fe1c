//! Experiment configuration: a JSON document wrapping one scenario with
//! its dataset, seed list, output directory and ablation toggles. The
//! schema is documented in `docs/schema.md`.

use std::fs;
use std::path::{Path, PathBuf};

use featreplay_core::data::{synth_gaussian_clusters, FeatureDataset, SynthConfig};
use featreplay_core::trainer::ScenarioConfig;
use featreplay_core::Error as CoreError;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const EXPERIMENT_FILE: &str = "experiment.json";

fn default_true() -> bool {
    true
}

fn default_method() -> String {
    "full".into()
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

fn default_separation() -> f64 {
    3.0
}

fn default_sigma() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resplit {
    pub train: f64,
    pub val: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// A feature manifest or CSV fixture. Relative paths are resolved
    /// against the config file's directory.
    File {
        path: PathBuf,
        #[serde(default = "default_true")]
        normalize: bool,
        /// Reassign train/val/test per class, e.g. for CSV input where
        /// every row is loaded as training data.
        #[serde(default)]
        resplit: Option<Resplit>,
    },
    Synth {
        classes: usize,
        dim: usize,
        per_class: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_true")]
        normalize: bool,
    },
}

impl DatasetSource {
    pub fn load(&self) -> Result<FeatureDataset> {
        match self {
            DatasetSource::File {
                path,
                normalize,
                resplit,
            } => {
                let mut ds = FeatureDataset::load(path)?;
                if let Some(r) = resplit {
                    ds = ds.stratified_split(r.train, r.val, r.seed)?;
                }
                Ok(if *normalize { ds.normalize()? } else { ds })
            }
            DatasetSource::Synth {
                classes,
                dim,
                per_class,
                separation,
                sigma,
                seed,
                normalize,
            } => {
                let ds = synth_gaussian_clusters(&SynthConfig {
                    classes: *classes,
                    dim: *dim,
                    per_class: *per_class,
                    separation: *separation,
                    sigma: *sigma,
                    seed: *seed,
                })?;
                Ok(if *normalize { ds.normalize()? } else { ds })
            }
        }
    }

    fn check(&self, errors: &mut Vec<String>) {
        match self {
            DatasetSource::File { path, resplit, .. } => {
                if !path.exists() {
                    errors.push(format!("dataset.file.path: {} does not exist", path.display()));
                }
                if let Some(r) = resplit {
                    let ok = (0.0..=1.0).contains(&r.train) && (0.0..=1.0).contains(&r.val) && r.train + r.val <= 1.0;
                    if !ok {
                        errors.push("dataset.file.resplit: fractions must lie in [0, 1] and sum to at most 1".into());
                    }
                }
            }
            DatasetSource::Synth {
                classes,
                dim,
                per_class,
                separation,
                sigma,
                ..
            } => {
                for (name, v) in [("classes", classes), ("dim", dim), ("per_class", per_class)] {
                    if *v == 0 {
                        errors.push(format!("dataset.synth.{name}: must be positive"));
                    }
                }
                for (name, v) in [("separation", separation), ("sigma", sigma)] {
                    if !(*v >= 0.0 && v.is_finite()) {
                        errors.push(format!("dataset.synth.{name}: must be finite and non-negative"));
                    }
                }
            }
        }
    }

    fn resolve(&mut self, base: &Path) {
        if let DatasetSource::File { path, .. } = self {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Label used in reports. Also the comparison-table row name.
    #[serde(default = "default_method")]
    pub method: String,
    pub dataset: DatasetSource,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Overrides `scenario.n_cycles` when present.
    #[serde(default)]
    pub n_cycles: Option<usize>,
    /// Off forces the latent-match weight to zero.
    #[serde(default = "default_true")]
    pub latent_match: bool,
    /// Off forces the latent-distillation weight to zero.
    #[serde(default = "default_true")]
    pub latent_distill: bool,
    pub scenario: ScenarioConfig,
}

/// Command-line values that replace top-level config fields.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub method: Option<String>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    pub n_cycles: Option<usize>,
    pub no_latent_match: bool,
    pub no_latent_distill: bool,
}

impl ExperimentConfig {
    /// Parses a config file. Syntax and schema violations are config
    /// errors. A relative dataset path is taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::config(path.display(), e))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| CliError::config(path.display(), e))?;
        cfg.dataset.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(m) = &o.method {
            self.method = m.clone();
        }
        if let Some(s) = &o.seeds {
            self.seeds = s.clone();
        }
        if let Some(d) = &o.out {
            self.out = d.clone();
        }
        if o.n_cycles.is_some() {
            self.n_cycles = o.n_cycles;
        }
        if o.no_latent_match {
            self.latent_match = false;
        }
        if o.no_latent_distill {
            self.latent_distill = false;
        }
    }

    /// The scenario actually trained for `seed`, with toggles applied.
    pub fn scenario_for(&self, seed: u64) -> ScenarioConfig {
        let mut s = self.scenario.clone();
        s.seed = seed;
        if let Some(n) = self.n_cycles {
            s.n_cycles = n;
        }
        if !self.latent_match {
            s.weights.latent_match = 0.0;
        }
        if !self.latent_distill {
            s.weights.latent_distill = 0.0;
        }
        s
    }

    /// Every field-level problem that can be found without loading data.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.method.trim().is_empty() {
            errors.push("method: must not be empty".to_string());
        }
        if self.seeds.is_empty() {
            errors.push("seeds: at least one seed is required".to_string());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            errors.push("seeds: must be distinct".to_string());
        }
        self.dataset.check(&mut errors);
        match self.scenario_for(self.seeds.first().copied().unwrap_or(0)).validate() {
            Ok(()) => {}
            Err(CoreError::Config { field, detail }) => errors.push(format!("scenario.{field}: {detail}")),
            Err(e) => errors.push(format!("scenario: {e}")),
        }
        if let DatasetSource::Synth { classes, .. } = &self.dataset {
            if *classes != self.scenario.n_classes {
                errors.push(format!(
                    "dataset.synth.classes: {classes} differs from scenario.n_classes {}",
                    self.scenario.n_classes
                ));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(errors))
        }
    }

    /// Checks the loaded dataset against the scenario.
    pub fn check_dataset(&self, ds: &FeatureDataset) -> Result<()> {
        if ds.n_classes != self.scenario.n_classes {
            return Err(CliError::config(
                "scenario.n_classes",
                format!(
                    "dataset has {} classes, scenario expects {}",
                    ds.n_classes, self.scenario.n_classes
                ),
            ));
        }
        if ds.split_counts().test == 0 {
            return Err(CliError::config(
                "dataset",
                "no test rows to evaluate on; set dataset.file.resplit",
            ));
        }
        Ok(())
    }

    /// Creates the output directory and proves it is writable.
    pub fn prepare_out(&self) -> Result<()> {
        let probe = self.out.join(".write-probe");
        fs::create_dir_all(&self.out)
            .and_then(|_| fs::write(&probe, b""))
            .and_then(|_| fs::remove_file(&probe))
            .map_err(|e| CliError::config("out", format!("{} is not writable: {e}", self.out.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{
            "dataset": {"synth": {"classes": 4, "dim": 3, "per_class": 10}},
            "scenario": {"n_classes": 4, "first_task_classes": 2, "incremental_tasks": 2}
        }"#
    }

    #[test]
    fn defaults_fill_the_top_level() {
        let c: ExperimentConfig = serde_json::from_str(minimal()).unwrap();
        assert_eq!(c.method, "full");
        assert_eq!(c.seeds, vec![0]);
        assert!(c.latent_match && c.latent_distill);
        assert_eq!(c.n_cycles, None);
        c.validate().unwrap();
    }

    #[test]
    fn toggles_are_independent() {
        let mut c: ExperimentConfig = serde_json::from_str(minimal()).unwrap();
        c.scenario.n_cycles = 2;
        c.apply(&Overrides {
            no_latent_match: true,
            ..Default::default()
        });
        let s = c.scenario_for(9);
        assert_eq!((s.seed, s.n_cycles), (9, 2));
        assert_eq!(s.weights.latent_match, 0.0);
        assert_eq!(s.weights.latent_distill, 1.0);
        c.apply(&Overrides {
            n_cycles: Some(5),
            no_latent_distill: true,
            ..Default::default()
        });
        let s = c.scenario_for(9);
        assert_eq!(s.n_cycles, 5);
        assert_eq!((s.weights.latent_match, s.weights.latent_distill), (0.0, 0.0));
    }

    #[test]
    fn every_bad_field_is_reported() {
        let mut c: ExperimentConfig = serde_json::from_str(minimal()).unwrap();
        c.seeds.clear();
        c.scenario.batch_size = 0;
        c.dataset = DatasetSource::Synth {
            classes: 5,
            dim: 0,
            per_class: 1,
            separation: 1.0,
            sigma: 1.0,
            seed: 0,
            normalize: true,
        };
        let CliError::Config(errs) = c.validate().unwrap_err() else {
            panic!()
        };
        let joined = errs.join("\n");
        for field in [
            "seeds",
            "scenario.batch_size",
            "dataset.synth.dim",
            "dataset.synth.classes",
        ] {
            assert!(joined.contains(field), "{field} missing from {joined}");
        }
    }

    #[test]
    fn unknown_keys_are_schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, minimal().replace("\"dataset\"", "\"cycles\": 3, \"dataset\"")).unwrap();
        let e = ExperimentConfig::load(&p).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("cycles"));
    }
}
