//! Class-incremental task splits.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{FeatureDataset, Split};
use crate::error::{Error, Result};
use crate::ndcore::SeededRng;

/// How classes are dealt out to tasks: `first_task_classes` in the first
/// task, the rest in `incremental_tasks` equal chunks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskLayout {
    pub n_classes: usize,
    pub first_task_classes: usize,
    pub incremental_tasks: usize,
}

impl TaskLayout {
    pub fn validate(&self) -> Result<()> {
        if self.first_task_classes == 0 || self.first_task_classes > self.n_classes {
            return Err(Error::config(
                "first_task_classes",
                format!("must be in 1..={}, got {}", self.n_classes, self.first_task_classes),
            ));
        }
        let rest = self.n_classes - self.first_task_classes;
        match (rest, self.incremental_tasks) {
            (0, 0) => Ok(()),
            (0, _) => Err(Error::config(
                "incremental_tasks",
                "no classes left after the first task",
            )),
            (_, 0) => Err(Error::config(
                "incremental_tasks",
                format!("{rest} classes are not covered by any task"),
            )),
            (r, k) if r % k != 0 => Err(Error::config(
                "incremental_tasks",
                format!("{r} remaining classes do not split into {k} equal tasks"),
            )),
            _ => Ok(()),
        }
    }

    pub fn n_tasks(&self) -> usize {
        1 + self.incremental_tasks
    }

    pub fn sizes(&self) -> Result<Vec<usize>> {
        self.validate()?;
        let mut sizes = vec![self.first_task_classes];
        if let Some(each) = (self.n_classes - self.first_task_classes).checked_div(self.incremental_tasks) {
            sizes.extend(std::iter::repeat_n(each, self.incremental_tasks));
        }
        Ok(sizes)
    }
}

/// Ordered, disjoint class sets, one per task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSplit {
    pub tasks: Vec<Vec<usize>>,
}

impl TaskSplit {
    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.tasks.iter().map(Vec::len).collect()
    }

    pub fn classes(&self, t: usize) -> BTreeSet<usize> {
        self.tasks[t].iter().copied().collect()
    }

    /// Union of the classes of tasks `0..=t`.
    pub fn seen_through(&self, t: usize) -> BTreeSet<usize> {
        self.tasks[..=t].iter().flatten().copied().collect()
    }

    pub fn task_of(&self, class: usize) -> Option<usize> {
        self.tasks.iter().position(|ts| ts.contains(&class))
    }

    /// Row indices of task `t` within one split of `dataset`.
    pub fn indices(&self, dataset: &FeatureDataset, split: Split, t: usize) -> Vec<usize> {
        dataset.indices_for(split, &self.classes(t))
    }
}

/// Seeded shuffle of `0..n_classes`, partitioned by `layout`.
pub fn split_classes(layout: &TaskLayout, seed: u64) -> Result<TaskSplit> {
    let sizes = layout.sizes()?;
    let mut order: Vec<usize> = (0..layout.n_classes).collect();
    SeededRng::new(seed).shuffle(&mut order);
    let mut tasks = Vec::with_capacity(sizes.len());
    let mut at = 0;
    for s in sizes {
        tasks.push(order[at..at + s].to_vec());
        at += s;
    }
    Ok(TaskSplit { tasks })
}

pub fn make_task_split(dataset: &FeatureDataset, layout: &TaskLayout, seed: u64) -> Result<TaskSplit> {
    if layout.n_classes != dataset.n_classes {
        return Err(Error::config(
            "n_classes",
            format!(
                "scenario has {} classes, dataset has {}",
                layout.n_classes, dataset.n_classes
            ),
        ));
    }
    split_classes(layout, seed)
}
