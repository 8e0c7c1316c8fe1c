//! Experiment driver: multi-seed runs, the ablation sweep, synthetic
//! feature files and plot-ready reports.

pub mod aggregate;
pub mod config;
pub mod error;
pub mod report;
pub mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use featreplay_core::data::{synth_gaussian_clusters, SynthConfig};

use crate::aggregate::format_table;
use crate::config::{ExperimentConfig, Overrides};
pub use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "featreplay",
    version,
    about = "Class-incremental learning with generative feature replay"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags that replace the matching top-level config keys.
#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<String>,
    /// Cycles through the previous autoencoder before replay.
    #[arg(long = "cycles")]
    pub n_cycles: Option<usize>,
    #[arg(long)]
    pub no_latent_match: bool,
    #[arg(long)]
    pub no_latent_distill: bool,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            method: self.method.clone(),
            seeds: self.seeds.clone(),
            out: self.out.clone(),
            n_cycles: self.n_cycles,
            no_latent_match: self.no_latent_match,
            no_latent_distill: self.no_latent_distill,
        }
    }

    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        cfg.apply(&self.overrides());
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every seed of one experiment and aggregate the results.
    Run(RunArgs),
    /// Run baseline, +match, +match+distill and +all+cycles.
    Ablate(RunArgs),
    /// Merge run directories into long-format and comparison CSVs.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Write a Gaussian-cluster feature file.
    Synth {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        per_class: usize,
        /// Manifest path, or a `.csv` fixture.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3.0)]
        separation: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run(args) => {
            let cfg = args.load()?;
            let ds = cfg.dataset.load()?;
            let res = run::run_experiment(&cfg, &ds)?;
            print!("{}", format_table(res.comparison.as_slice()));
            failures(&[res])
        }
        Command::Ablate(args) => {
            let cfg = args.load()?;
            let ds = cfg.dataset.load()?;
            let results = run::run_ablation(&cfg, args.n_cycles, &ds)?;
            let rows: Vec<_> = results.iter().filter_map(|r| r.comparison.clone()).collect();
            print!("{}", format_table(&rows));
            failures(&results)
        }
        Command::Report { dirs, out } => {
            let outcome = report::report(&dirs, &out)?;
            for f in &outcome.files {
                println!("{}", f.display());
            }
            for (d, msg) in &outcome.flagged {
                log::warn!("{}: {msg}", d.display());
            }
            if outcome.flagged.is_empty() {
                Ok(())
            } else {
                Err(CliError::Runtime(format!(
                    "{} director(ies) flagged",
                    outcome.flagged.len()
                )))
            }
        }
        Command::Synth {
            classes,
            dim,
            per_class,
            out,
            separation,
            sigma,
            seed,
        } => {
            let ds = synth_gaussian_clusters(&SynthConfig {
                classes,
                dim,
                per_class,
                separation,
                sigma,
                seed,
            })
            .map_err(|e| CliError::config("synth", e))?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            ds.save(&out)?;
            Ok(())
        }
    }
}

fn failures(results: &[run::ExperimentResult]) -> Result<()> {
    let failed: Vec<String> = results
        .iter()
        .flat_map(|r| {
            r.failures
                .iter()
                .map(move |(s, m)| format!("{} seed {s}: {m}", r.method))
        })
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "runs aborted, partial results kept:\n  {}",
            failed.join("\n  ")
        )))
    }
}
