//! Feature datasets: storage, normalization, synthetic clusters and
//! class-incremental task splits.

mod io;
mod split;
mod synth;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{SeededRng, Tensor};

pub use io::{Manifest, SplitCounts, FEATURE_FORMAT, FEATURE_FORMAT_VERSION};
pub use split::{make_task_split, split_classes, TaskLayout, TaskSplit};
pub use synth::{synth_gaussian_clusters, SynthConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Per-dimension affine map fitted on the training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationRecord {
    pub fn fit(rows: &[&[f64]]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::domain("normalize", "train split is empty"))?;
        let mut min = first.to_vec();
        let mut max = first.to_vec();
        for r in &rows[1..] {
            for (j, &v) in r.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Maps one value of dimension `j`. Constant dimensions go to 0.5 and
    /// everything is clamped to `[0, 1]`.
    pub fn map(&self, j: usize, v: f64) -> f64 {
        let span = self.max[j] - self.min[j];
        if span <= 0.0 {
            0.5
        } else {
            ((v - self.min[j]) / span).clamp(0.0, 1.0)
        }
    }

    /// Inverse map for unclamped values; constant dimensions return their
    /// single training value.
    pub fn invert(&self, j: usize, u: f64) -> f64 {
        let span = self.max[j] - self.min[j];
        if span <= 0.0 {
            self.min[j]
        } else {
            self.min[j] + u * span
        }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (r, c) = x.dims2()?;
        if c != self.dim() {
            return Err(Error::dim("normalize", x.shape(), &[self.dim()]));
        }
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            out.extend(x.row(i).iter().enumerate().map(|(j, &v)| self.map(j, v)));
        }
        Tensor::matrix(r, c, out)
    }
}

/// Labelled feature vectors with a train/val/test assignment per row.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDataset {
    /// `[n_samples, dim]`
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
    pub n_classes: usize,
    pub normalization: Option<NormalizationRecord>,
}

impl FeatureDataset {
    pub fn new(features: Tensor, labels: Vec<usize>, splits: Vec<Split>, n_classes: usize) -> Result<Self> {
        let (n, _) = features.dims2()?;
        if labels.len() != n || splits.len() != n {
            return Err(Error::dim(
                "feature_dataset",
                features.shape(),
                &[labels.len(), splits.len()],
            ));
        }
        if n_classes == 0 {
            return Err(Error::domain("feature_dataset", "class count must be positive"));
        }
        if let Some((i, y)) = labels.iter().enumerate().find(|(_, &y)| y >= n_classes) {
            return Err(Error::domain(
                "feature_dataset",
                format!("label {y} of row {i} is outside 0..{n_classes}"),
            ));
        }
        Ok(Self {
            features,
            labels,
            splits,
            n_classes,
            normalization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn classes(&self) -> BTreeSet<usize> {
        self.labels.iter().copied().collect()
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Rows of `split` whose label is in `classes`.
    pub fn indices_for(&self, split: Split, classes: &BTreeSet<usize>) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.splits[i] == split && classes.contains(&self.labels[i]))
            .collect()
    }

    pub fn rows(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let x = self.features.gather_rows(indices)?;
        let y = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((x, y))
    }

    pub fn split_counts(&self) -> SplitCounts {
        let count = |s| self.splits.iter().filter(|&&x| x == s).count();
        SplitCounts {
            train: count(Split::Train),
            val: count(Split::Val),
            test: count(Split::Test),
        }
    }

    /// Whether rows appear as all train, then all val, then all test.
    pub fn is_grouped(&self) -> bool {
        self.splits.windows(2).all(|w| w[0] <= w[1])
    }

    /// Stable reorder into train, val, test groups.
    pub fn grouped(&self) -> Result<Self> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&i| self.splits[i]);
        let (features, labels) = self.rows(&order)?;
        Ok(Self {
            features,
            labels,
            splits: order.iter().map(|&i| self.splits[i]).collect(),
            n_classes: self.n_classes,
            normalization: self.normalization.clone(),
        })
    }

    /// Reassigns splits per class: a seeded shuffle of each class's rows,
    /// the first `train` fraction to train, the next `val` fraction to val
    /// and the remainder to test.
    pub fn stratified_split(&self, train: f64, val: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&train) || !(0.0..=1.0).contains(&val) || train + val > 1.0 {
            return Err(Error::domain(
                "stratified_split",
                "fractions must lie in [0, 1] and sum to at most 1",
            ));
        }
        let mut rng = SeededRng::new(seed);
        let mut splits = vec![Split::Test; self.len()];
        for c in self.classes() {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == c).collect();
            rng.shuffle(&mut idx);
            let (n_train, n_val) = split_sizes(idx.len(), train, val);
            for (k, &i) in idx.iter().enumerate() {
                splits[i] = if k < n_train {
                    Split::Train
                } else if k < n_train + n_val {
                    Split::Val
                } else {
                    Split::Test
                };
            }
        }
        let mut out = self.clone();
        out.splits = splits;
        out.grouped()
    }

    /// Min-max normalization fitted on the train rows and applied to every
    /// row, clamped to `[0, 1]`.
    pub fn normalize(&self) -> Result<Self> {
        let train: Vec<&[f64]> = self
            .split_indices(Split::Train)
            .into_iter()
            .map(|i| self.features.row(i))
            .collect();
        let record = NormalizationRecord::fit(&train)?;
        self.normalize_with(&record)
    }

    pub fn normalize_with(&self, record: &NormalizationRecord) -> Result<Self> {
        let mut out = self.clone();
        out.features = record.apply(&self.features)?;
        out.normalization = Some(record.clone());
        Ok(out)
    }
}

pub(crate) fn split_sizes(n: usize, train: f64, val: f64) -> (usize, usize) {
    let n_train = ((n as f64) * train).round() as usize;
    let n_val = (((n as f64) * val).round() as usize).min(n - n_train.min(n));
    (n_train.min(n), n_val)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> FeatureDataset {
        let x = Tensor::from_rows(&[vec![0.0, 5.0, 2.0], vec![1.0, 5.0, 4.0], vec![0.5, 5.0, 9.0]]).unwrap();
        FeatureDataset::new(x, vec![0, 1, 1], vec![Split::Train, Split::Train, Split::Test], 2).unwrap()
    }

    #[test]
    fn rejects_out_of_range_label() {
        let x = Tensor::zeros(&[2, 1]);
        let err = FeatureDataset::new(x, vec![0, 3], vec![Split::Train; 2], 3).unwrap_err();
        assert!(err.to_string().contains("row 1"));
    }

    #[test]
    fn unit_data_is_unchanged() {
        let x = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![0.25, 0.5]]).unwrap();
        let ds = FeatureDataset::new(x.clone(), vec![0; 3], vec![Split::Train; 3], 1).unwrap();
        assert_eq!(ds.normalize().unwrap().features, x);
    }

    #[test]
    fn constant_dimension_maps_to_half() {
        let n = tiny().normalize().unwrap();
        for i in 0..3 {
            assert_eq!(n.features.get(i, 1), 0.5);
        }
    }

    #[test]
    fn test_rows_are_clamped() {
        let n = tiny().normalize().unwrap();
        assert_eq!(n.features.get(2, 2), 1.0);
        assert_eq!(n.features.get(2, 0), 0.5);
    }

    #[test]
    fn normalization_is_idempotent() {
        let once = tiny().normalize().unwrap();
        let twice = once.normalize().unwrap();
        assert_eq!(once.features, twice.features);
    }

    #[test]
    fn empty_train_split_cannot_be_normalized() {
        let x = Tensor::zeros(&[1, 2]);
        let ds = FeatureDataset::new(x, vec![0], vec![Split::Test], 1).unwrap();
        assert!(ds.normalize().is_err());
    }

    #[test]
    fn invert_undoes_map_inside_range() {
        let r = NormalizationRecord {
            min: vec![-2.0],
            max: vec![6.0],
        };
        for v in [-2.0, 0.0, 3.5, 6.0] {
            assert!((r.invert(0, r.map(0, v)) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn stratified_split_is_disjoint_and_covering() {
        let n = 50;
        let x = Tensor::matrix(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % 5).collect();
        let ds = FeatureDataset::new(x, labels, vec![Split::Train; n], 5).unwrap();
        let s = ds.stratified_split(0.8, 0.1, 3).unwrap();
        assert!(s.is_grouped());
        let counts = s.split_counts();
        assert_eq!((counts.train, counts.val, counts.test), (40, 5, 5));
        let mut seen: Vec<f64> = s.features.data().to_vec();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, (0..n).map(|i| i as f64).collect::<Vec<_>>());
        for c in 0..5 {
            let tr = s.indices_for(Split::Train, &BTreeSet::from([c])).len();
            assert_eq!(tr, 8);
        }
    }
}
