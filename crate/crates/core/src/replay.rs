//! Rehearsal batches drawn from the frozen previous model.
//!
//! A batch is built in three steps: sample a class uniformly from the classes
//! the old model has seen and decode a draw from its prior component, push
//! the result `n_cycles` times through the old encoder (posterior mean) and
//! decoder, then label the cycled features with the old classifier's
//! softened predictions and cache the old encoder's posterior for latent
//! distillation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{FeatureDataset, Split};
use crate::error::{Error, Result};
use crate::losses::SoftTargets;
use crate::model::ModelState;
use crate::ndcore::{SeededRng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub batch_size: usize,
    pub n_cycles: usize,
    pub temperature: f64,
}

/// Generated features ready for the replay objective.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBatch {
    /// `[batch, N]`, after cycling.
    pub features: Tensor,
    /// Old classifier's softened output on `features`.
    pub targets: SoftTargets,
    /// Old encoder posterior on `features`.
    pub old_mu: Tensor,
    pub old_logvar: Tensor,
    /// Class each sample was drawn from.
    pub source_classes: Vec<usize>,
    pub cycles_applied: usize,
}

/// Decodes one prior draw per sample, classes chosen uniformly from
/// `classes`.
pub fn generate(
    old: &ModelState,
    classes: &[usize],
    batch: usize,
    rng: &mut SeededRng,
) -> Result<(Tensor, Vec<usize>)> {
    if classes.is_empty() {
        return Err(Error::EmptyClassSet);
    }
    let d = old.latent_dim();
    let mut labels = Vec::with_capacity(batch);
    let mut z = Vec::with_capacity(batch * d);
    for _ in 0..batch {
        let c = classes[rng.below(classes.len())];
        z.extend(old.sample_conditional_prior(c, rng)?);
        labels.push(c);
    }
    let z = Tensor::matrix(batch, d, z)?;
    Ok((old.decode(&z)?, labels))
}

/// `x ← Dec(μ_Enc(x))`, `n_cycles` times. Zero cycles is the identity.
pub fn cycle(features: &Tensor, old: &ModelState, n_cycles: usize) -> Result<Tensor> {
    let mut x = features.clone();
    for _ in 0..n_cycles {
        x = old.decode(&old.encode_mean(&x)?)?;
    }
    Ok(x)
}

/// Softened old-model predictions over its seen classes, plus the old
/// posterior `(μ, log σ²)` on the same features.
pub fn soft_targets(features: &Tensor, old: &ModelState, temperature: f64) -> Result<(SoftTargets, Tensor, Tensor)> {
    let classes = old.seen_vec();
    if classes.is_empty() {
        return Err(Error::EmptyClassSet);
    }
    let (mu, logvar) = old.encode(features)?;
    let logits = old.classifier_logits(&mu)?.select_columns(&classes)?;
    let probs = logits.softmax_t(temperature)?;
    let targets = SoftTargets::new(classes, probs, temperature)?;
    Ok((targets, mu, logvar))
}

/// Generate, cycle, then label. Targets and cached posteriors describe the
/// post-cycling features.
pub fn build_replay_batch(old: &ModelState, config: &ReplayConfig, rng: &mut SeededRng) -> Result<ReplayBatch> {
    if old.task == 0 {
        return Err(Error::Contract(
            "replay needs a model trained on at least one task".into(),
        ));
    }
    let classes = old.seen_vec();
    let (raw, source_classes) = generate(old, &classes, config.batch_size, rng)?;
    let features = cycle(&raw, old, config.n_cycles)?;
    let (targets, old_mu, old_logvar) = soft_targets(&features, old, config.temperature)?;
    Ok(ReplayBatch {
        features,
        targets,
        old_mu,
        old_logvar,
        source_classes,
        cycles_applied: config.n_cycles,
    })
}

impl ReplayBatch {
    pub fn len(&self) -> usize {
        self.source_classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_classes.is_empty()
    }

    /// Writes the features, tagged with their source class, in the feature
    /// file format.
    pub fn dump(&self, path: &Path, n_classes: usize) -> Result<()> {
        let ds = FeatureDataset::new(
            self.features.clone(),
            self.source_classes.clone(),
            vec![Split::Train; self.len()],
            n_classes,
        )?;
        ds.save(path)
    }
}
