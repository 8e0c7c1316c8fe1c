//! Long-format metric rows and their aggregation across seeds.

use std::collections::HashMap;
use std::path::Path;

use featreplay_core::trainer::{average_incremental_accuracy, MetricRecord};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::Result;

pub const LONG_FILE: &str = "long.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const PRD_FILE: &str = "prd.csv";
pub const FD_CYCLES_FILE: &str = "fd_cycles.csv";

pub const AVERAGE_ACCURACY: &str = "average_accuracy";
pub const AIA: &str = "average_incremental_accuracy";

/// One value of one metric for one seed at one task boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub method: String,
    pub seed: u64,
    pub task: usize,
    pub metric: String,
    pub value: f64,
}

/// Mean over seeds, population standard deviation and standard error of
/// the mean (sample deviation over √n, empty for a single seed).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub task: usize,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub stderr: Option<f64>,
}

/// Final-task accuracy and average incremental accuracy of one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub seeds: usize,
    pub tasks: usize,
    pub final_accuracy_mean: f64,
    pub final_accuracy_std: f64,
    pub aia_mean: f64,
    pub aia_std: f64,
    pub aia_stderr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrdRow {
    pub method: String,
    pub seed: u64,
    pub task: usize,
    pub lambda: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdCyclesRow {
    pub method: String,
    pub seed: u64,
    pub task: usize,
    pub n_cycles: usize,
    pub fd: f64,
}

/// Flattens a run's task records. Accuracies of individual tasks appear as
/// `accuracy_task_K`, and the running average incremental accuracy is
/// emitted at every boundary.
pub fn long_rows(method: &str, seed: u64, records: &[MetricRecord]) -> Vec<LongRow> {
    let mut out = Vec::new();
    let mut averages = Vec::new();
    for r in records {
        averages.push(r.average_accuracy);
        let mut push = |metric: String, value: f64| {
            out.push(LongRow {
                method: method.to_string(),
                seed,
                task: r.task,
                metric,
                value,
            })
        };
        push(AVERAGE_ACCURACY.into(), r.average_accuracy);
        push(AIA.into(), average_incremental_accuracy(&averages));
        for (k, a) in r.per_task_accuracy.iter().enumerate() {
            push(format!("accuracy_task_{}", k + 1), *a);
        }
        if let Some(v) = r.val_average_accuracy {
            push("val_average_accuracy".into(), v);
        }
        if let Some(v) = r.fd {
            push("fd".into(), v);
        }
        if let Some(p) = &r.prd {
            push("prd_f8".into(), p.f8);
            push("prd_f1_8".into(), p.f1_8);
        }
    }
    out
}

pub fn fd_cycles_rows(method: &str, seed: u64, records: &[MetricRecord]) -> Vec<FdCyclesRow> {
    records
        .iter()
        .flat_map(|r| {
            r.fd_by_cycles.iter().map(move |p| FdCyclesRow {
                method: method.to_string(),
                seed,
                task: r.task,
                n_cycles: p.n_cycles,
                fd: p.fd,
            })
        })
        .collect()
}

pub fn summarize(values: &[f64]) -> (f64, f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let std = (ss / n).sqrt();
    let stderr = (values.len() > 1).then(|| (ss / (n - 1.0)).sqrt() / n.sqrt());
    (mean, std, stderr)
}

/// Groups by `(method, task, metric)`. Methods and metrics keep their
/// first-seen order, tasks are ascending within a method.
pub fn aggregate(rows: &[LongRow]) -> Vec<AggregateRow> {
    let mut keys: Vec<(&str, usize, &str)> = Vec::new();
    let mut groups: HashMap<(&str, usize, &str), Vec<f64>> = HashMap::new();
    for r in rows {
        let key = (r.method.as_str(), r.task, r.metric.as_str());
        groups
            .entry(key)
            .or_insert_with(|| {
                keys.push(key);
                Vec::new()
            })
            .push(r.value);
    }
    let method_rank: HashMap<&str, usize> = {
        let mut m = HashMap::new();
        for (method, _, _) in &keys {
            let n = m.len();
            m.entry(*method).or_insert(n);
        }
        m
    };
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by_key(|&i| (method_rank[keys[i].0], keys[i].1, i));
    order
        .into_iter()
        .map(|i| {
            let key = keys[i];
            let (mean, std, stderr) = summarize(&groups[&key]);
            AggregateRow {
                method: key.0.to_string(),
                task: key.1,
                metric: key.2.to_string(),
                n: groups[&key].len(),
                mean,
                std,
                stderr,
            }
        })
        .collect()
}

/// One row per method, from its last aggregated task boundary.
pub fn comparison(agg: &[AggregateRow]) -> Vec<ComparisonRow> {
    let mut methods: Vec<&str> = Vec::new();
    for r in agg {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    methods
        .into_iter()
        .filter_map(|m| {
            let rows: Vec<&AggregateRow> = agg.iter().filter(|r| r.method == m).collect();
            let last = rows.iter().map(|r| r.task).max()?;
            let find = |metric: &str| rows.iter().find(|r| r.task == last && r.metric == metric).copied();
            let acc = find(AVERAGE_ACCURACY)?;
            let aia = find(AIA)?;
            Some(ComparisonRow {
                method: m.to_string(),
                seeds: aia.n,
                tasks: last,
                final_accuracy_mean: acc.mean,
                final_accuracy_std: acc.std,
                aia_mean: aia.mean,
                aia_std: aia.std,
                aia_stderr: aia.stderr,
            })
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Plain-text table of a comparison, in row order.
pub fn format_table(rows: &[ComparisonRow]) -> String {
    let width = rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
    let mut s = format!("{:<width$}  seeds  final acc (%)   AIA (%)\n", "method");
    for r in rows {
        let line = format!(
            "{:<width$}  {:>5}  {:>6.2} ± {:<5.2}  {:>6.2} ± {:<5.2}\n",
            r.method,
            r.seeds,
            100.0 * r.final_accuracy_mean,
            100.0 * r.final_accuracy_std,
            100.0 * r.aia_mean,
            100.0 * r.aia_std,
        );
        s.push_str(line.trim_end());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(method: &str, seed: u64, task: usize, metric: &str, value: f64) -> LongRow {
        LongRow {
            method: method.into(),
            seed,
            task,
            metric: metric.into(),
            value,
        }
    }

    #[test]
    fn single_seed_has_zero_std_and_no_stderr() {
        assert_eq!(summarize(&[0.25]), (0.25, 0.0, None));
    }

    #[test]
    fn two_seeds_by_hand() {
        let (m, s, se) = summarize(&[0.5, 0.7]);
        assert!((m - 0.6).abs() < 1e-15);
        assert!((s - 0.1).abs() < 1e-15);
        // sample std 0.1·√2, over √2
        assert!((se.unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn methods_keep_order_and_tasks_sort() {
        let rows = vec![
            row("b", 0, 2, AVERAGE_ACCURACY, 0.1),
            row("a", 0, 1, AVERAGE_ACCURACY, 0.2),
            row("b", 0, 1, AVERAGE_ACCURACY, 0.3),
            row("b", 1, 1, AVERAGE_ACCURACY, 0.5),
        ];
        let agg = aggregate(&rows);
        let keys: Vec<(&str, usize)> = agg.iter().map(|r| (r.method.as_str(), r.task)).collect();
        assert_eq!(keys, vec![("b", 1), ("b", 2), ("a", 1)]);
        assert_eq!(agg[0].n, 2);
        assert!((agg[0].mean - 0.4).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn aggregate_matches_hand_mean(values in prop::collection::vec(0.0f64..1.0, 1..8)) {
            let rows: Vec<LongRow> =
                values.iter().enumerate().map(|(s, v)| row("m", s as u64, 1, AIA, *v)).collect();
            let agg = aggregate(&rows);
            prop_assert_eq!(agg.len(), 1);
            let hand = values.iter().sum::<f64>() / values.len() as f64;
            prop_assert!((agg[0].mean - hand).abs() <= 1e-12);
            let var = values.iter().map(|v| (v - hand).powi(2)).sum::<f64>() / values.len() as f64;
            prop_assert!((agg[0].std - var.sqrt()).abs() <= 1e-12);
        }

        #[test]
        fn long_csv_round_trips_exactly(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..20)) {
            let dir = tempfile::tempdir().unwrap();
            let rows: Vec<LongRow> =
                values.iter().enumerate().map(|(i, v)| row("m,\"q\"", i as u64, i, "fd", *v)).collect();
            let p = dir.path().join(LONG_FILE);
            write_csv(&p, &rows).unwrap();
            let back: Vec<LongRow> = read_csv(&p).unwrap();
            prop_assert_eq!(back, rows);
        }
    }
}
