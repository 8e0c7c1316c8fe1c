//! Multi-seed runs and the ablation sweep.
//!
//! An experiment directory holds `experiment.json` (the resolved config),
//! one `seed_<s>/` run directory per seed, and `long.csv`, `aggregate.csv`
//! and `comparison.csv` over every task that finished.

use std::fs;
use std::path::{Path, PathBuf};

use featreplay_core::data::FeatureDataset;
use featreplay_core::trainer::{run_scenario, MetricRecord};

use crate::aggregate::{
    aggregate, comparison, long_rows, write_csv, ComparisonRow, LongRow, AGGREGATE_FILE, COMPARISON_FILE, LONG_FILE,
};
use crate::config::{ExperimentConfig, EXPERIMENT_FILE};
use crate::error::{CliError, Result};

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

/// Per-seed records of an experiment plus its comparison row.
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub method: String,
    pub runs: Vec<(u64, Vec<MetricRecord>)>,
    pub comparison: Option<ComparisonRow>,
    /// `(seed, message)` for every seed that aborted.
    pub failures: Vec<(u64, String)>,
}

impl ExperimentResult {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Completed task records, or the partial records and the abort message.
type SeedOutcome = std::result::Result<Vec<MetricRecord>, (Vec<MetricRecord>, String)>;

/// Trains every seed on its own thread and writes the aggregate files.
/// A seed that aborts keeps the tasks it completed, and those still enter
/// the aggregate.
pub fn run_experiment(cfg: &ExperimentConfig, dataset: &FeatureDataset) -> Result<ExperimentResult> {
    cfg.validate()?;
    cfg.check_dataset(dataset)?;
    cfg.prepare_out()?;
    fs::write(cfg.out.join(EXPERIMENT_FILE), serde_json::to_string_pretty(cfg)?)?;

    let outcomes: Vec<(u64, SeedOutcome)> = std::thread::scope(|s| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| {
                let scenario = cfg.scenario_for(seed);
                let dir = seed_dir(&cfg.out, seed);
                s.spawn(move || match run_scenario(&scenario, dataset, Some(&dir)) {
                    Ok(log) => Ok(log.metrics),
                    Err(abort) => Err((abort.partial.metrics.clone(), abort.to_string())),
                })
            })
            .collect();
        cfg.seeds
            .iter()
            .zip(handles)
            .map(|(&seed, h)| {
                let r = h
                    .join()
                    .unwrap_or_else(|_| Err((Vec::new(), "worker thread panicked".to_string())));
                (seed, r)
            })
            .collect()
    });

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in outcomes {
        match r {
            Ok(m) => runs.push((seed, m)),
            Err((m, msg)) => {
                log::error!("{} seed {seed}: {msg}", cfg.method);
                failures.push((seed, msg));
                runs.push((seed, m));
            }
        }
    }
    let long: Vec<LongRow> = runs
        .iter()
        .flat_map(|(seed, m)| long_rows(&cfg.method, *seed, m))
        .collect();
    let agg = aggregate(&long);
    let cmp = comparison(&agg);
    write_csv(&cfg.out.join(LONG_FILE), &long)?;
    write_csv(&cfg.out.join(AGGREGATE_FILE), &agg)?;
    write_csv(&cfg.out.join(COMPARISON_FILE), &cmp)?;
    Ok(ExperimentResult {
        method: cfg.method.clone(),
        runs,
        comparison: cmp.into_iter().next(),
        failures,
    })
}

/// The four ablation arms, each adding one refinement to plain replay.
pub const ABLATION: [(&str, &str); 4] = [
    ("baseline", "baseline"),
    ("+match", "match"),
    ("+match+distill", "match_distill"),
    ("+all+cycles", "all_cycles"),
];

pub const ABLATION_FILE: &str = "ablation.csv";

/// Config for arm `k` of [`ABLATION`], written under `out/<dir>`.
pub fn ablation_arm(base: &ExperimentConfig, k: usize, cycles: usize) -> ExperimentConfig {
    let (method, dir) = ABLATION[k];
    let mut c = base.clone();
    c.method = method.to_string();
    c.out = base.out.join(dir);
    c.latent_match = k >= 1;
    c.latent_distill = k >= 2;
    c.n_cycles = Some(if k == 3 { cycles } else { 0 });
    c
}

/// Runs every arm in table order and writes `ablation.csv`. The cycle
/// count for the last arm comes from `cycles`, else the config, and must
/// be positive.
pub fn run_ablation(
    base: &ExperimentConfig,
    cycles: Option<usize>,
    dataset: &FeatureDataset,
) -> Result<Vec<ExperimentResult>> {
    let cycles = cycles.or(base.n_cycles).unwrap_or(base.scenario.n_cycles);
    if cycles == 0 {
        return Err(CliError::config(
            "n_cycles",
            "the cycling arm needs a positive cycle count",
        ));
    }
    for k in 0..ABLATION.len() {
        ablation_arm(base, k, cycles).validate()?;
    }
    let mut results = Vec::new();
    for k in 0..ABLATION.len() {
        let arm = ablation_arm(base, k, cycles);
        log::info!("ablation arm {}", arm.method);
        results.push(run_experiment(&arm, dataset)?);
    }
    let rows: Vec<ComparisonRow> = results.iter().filter_map(|r| r.comparison.clone()).collect();
    write_csv(&base.out.join(ABLATION_FILE), &rows)?;
    Ok(results)
}
