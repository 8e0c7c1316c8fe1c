//! Merges run directories into plot-ready CSVs.
//!
//! Every directory argument is searched recursively for run directories
//! (those holding `config.json`). A run's method is the `method` of the
//! nearest enclosing `experiment.json`, or the run directory's own name
//! when there is none. Problems are flagged per directory and the rest is
//! still processed.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use featreplay_core::trainer::{read_config, read_metrics, read_status, MetricRecord, CONFIG_FILE};

use crate::aggregate::{
    aggregate, comparison, fd_cycles_rows, long_rows, read_csv, write_csv, FdCyclesRow, LongRow, PrdRow,
    AGGREGATE_FILE, COMPARISON_FILE, FD_CYCLES_FILE, LONG_FILE, PRD_FILE,
};
use crate::config::{ExperimentConfig, EXPERIMENT_FILE};
use crate::error::Result;

/// A run directory with everything `report` needs from it.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub dir: PathBuf,
    pub method: String,
    pub seed: u64,
    pub metrics: Vec<MetricRecord>,
    pub prd: Vec<PrdRow>,
}

#[derive(Clone, Debug, Default)]
pub struct ReportOutcome {
    pub runs: Vec<RunRecord>,
    /// `(directory, problem)`; flagged runs may still contribute rows.
    pub flagged: Vec<(PathBuf, String)>,
    pub files: Vec<PathBuf>,
}

fn run_dirs(root: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    if root.join(CONFIG_FILE).is_file() {
        out.push(root.to_path_buf());
        return Ok(());
    }
    let mut children: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    children.sort();
    for c in children {
        run_dirs(&c, out)?;
    }
    Ok(())
}

fn method_of(run: &Path, root: &Path) -> String {
    let mut d = Some(run);
    while let Some(dir) = d {
        let p = dir.join(EXPERIMENT_FILE);
        if p.is_file() {
            if let Ok(cfg) = fs::read_to_string(&p)
                .map_err(|e| e.to_string())
                .and_then(|t| serde_json::from_str::<ExperimentConfig>(&t).map_err(|e| e.to_string()))
            {
                return cfg.method;
            }
        }
        if dir == root {
            break;
        }
        d = dir.parent();
    }
    run.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into())
}

fn prd_rows(dir: &Path, method: &str, seed: u64, records: &[MetricRecord]) -> Result<Vec<PrdRow>> {
    #[derive(serde::Deserialize)]
    struct Point {
        lambda: f64,
        precision: f64,
        recall: f64,
    }
    let mut out = Vec::new();
    for r in records {
        let p = dir.join(format!("prd_task_{:02}.csv", r.task));
        if !p.is_file() {
            continue;
        }
        for pt in read_csv::<Point>(&p)? {
            out.push(PrdRow {
                method: method.to_string(),
                seed,
                task: r.task,
                lambda: pt.lambda,
                precision: pt.precision,
                recall: pt.recall,
            });
        }
    }
    Ok(out)
}

/// Loads one run directory. `Err` means nothing usable was found; a
/// returned flag marks a run that is usable but incomplete.
fn load_run(dir: &Path, root: &Path) -> std::result::Result<(RunRecord, Option<String>), String> {
    let cfg = read_config(dir).map_err(|e| format!("unreadable config: {e}"))?;
    let metrics = read_metrics(dir).map_err(|e| format!("unreadable metrics: {e}"))?;
    let method = method_of(dir, root);
    let prd = prd_rows(dir, &method, cfg.seed, &metrics).map_err(|e| format!("unreadable PRD curve: {e}"))?;
    let expected = cfg.n_tasks();
    let flag = match read_status(dir) {
        Ok(s) if s.complete && metrics.len() == expected => None,
        Ok(s) if !s.complete => Some(format!(
            "partial run, {} of {expected} tasks: {}",
            metrics.len(),
            s.error.unwrap_or_else(|| "aborted".into())
        )),
        Ok(_) => Some(format!("metrics list {} of {expected} tasks", metrics.len())),
        Err(_) => Some(format!("no status file, {} of {expected} tasks logged", metrics.len())),
    };
    Ok((
        RunRecord {
            dir: dir.to_path_buf(),
            method,
            seed: cfg.seed,
            metrics,
            prd,
        },
        flag,
    ))
}

/// Collects runs under `dirs`. Two runs with the same method and seed are
/// a collision: the first wins and the second is flagged.
pub fn collect(dirs: &[PathBuf]) -> ReportOutcome {
    let mut outcome = ReportOutcome::default();
    let mut seen = HashSet::new();
    for root in dirs {
        let mut found = Vec::new();
        if let Err(e) = run_dirs(root, &mut found) {
            outcome
                .flagged
                .push((root.clone(), format!("cannot read directory: {e}")));
            continue;
        }
        if found.is_empty() {
            outcome.flagged.push((root.clone(), "no run logs found".into()));
            continue;
        }
        for dir in found {
            match load_run(&dir, root) {
                Ok((run, flag)) => {
                    if let Some(f) = flag {
                        outcome.flagged.push((dir.clone(), f));
                    }
                    if !seen.insert((run.method.clone(), run.seed)) {
                        outcome.flagged.push((
                            dir.clone(),
                            format!("duplicate method {:?} seed {}, skipped", run.method, run.seed),
                        ));
                        continue;
                    }
                    outcome.runs.push(run);
                }
                Err(e) => outcome.flagged.push((dir, e)),
            }
        }
    }
    outcome
}

/// Writes `long.csv`, `aggregate.csv`, `comparison.csv`, and `prd.csv`
/// and `fd_cycles.csv` when there is data for them.
pub fn report(dirs: &[PathBuf], out: &Path) -> Result<ReportOutcome> {
    let mut outcome = collect(dirs);
    fs::create_dir_all(out)?;
    let long: Vec<LongRow> = outcome
        .runs
        .iter()
        .flat_map(|r| long_rows(&r.method, r.seed, &r.metrics))
        .collect();
    let agg = aggregate(&long);
    let prd: Vec<PrdRow> = outcome.runs.iter().flat_map(|r| r.prd.iter().cloned()).collect();
    let fd: Vec<FdCyclesRow> = outcome
        .runs
        .iter()
        .flat_map(|r| fd_cycles_rows(&r.method, r.seed, &r.metrics))
        .collect();
    let mut emit = |name: &str, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        let p = out.join(name);
        f(&p)?;
        outcome.files.push(p);
        Ok(())
    };
    emit(LONG_FILE, &|p| write_csv(p, &long))?;
    emit(AGGREGATE_FILE, &|p| write_csv(p, &agg))?;
    emit(COMPARISON_FILE, &|p| write_csv(p, &comparison(&agg)))?;
    if !prd.is_empty() {
        emit(PRD_FILE, &|p| write_csv(p, &prd))?;
    }
    if !fd.is_empty() {
        emit(FD_CYCLES_FILE, &|p| write_csv(p, &fd))?;
    }
    Ok(outcome)
}
