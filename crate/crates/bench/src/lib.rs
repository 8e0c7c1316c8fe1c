//! Shared fixtures for the benchmarks.

use featreplay_core::losses::LossWeights;
use featreplay_core::model::{ModelConfig, ModelState, ReconKind};
use featreplay_core::ndcore::{SeededRng, Tensor};

/// A model over `dim` inputs and `classes` classes with every class active
/// and marked as trained on one task.
pub fn trained_model(dim: usize, classes: usize, latent: usize, hidden: usize) -> ModelState {
    let mut rng = SeededRng::new(11);
    let cfg = ModelConfig {
        input_dim: dim,
        latent_dim: latent,
        hidden: vec![hidden],
        n_classes: classes,
        recon: ReconKind::Bernoulli,
    };
    let mut state = ModelState::new(cfg, &mut rng).expect("valid model config");
    let all: Vec<usize> = (0..classes).collect();
    state.prior.activate(&all, &mut rng).expect("classes in range");
    state.task = 1;
    state
}

/// Uniform features in `[0, 1)` with round-robin labels.
pub fn batch(rows: usize, dim: usize, classes: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut rng = SeededRng::new(seed);
    let data = (0..rows * dim).map(|_| rng.uniform()).collect();
    let x = Tensor::matrix(rows, dim, data).expect("shape matches data");
    (x, (0..rows).map(|i| i % classes).collect())
}

pub fn weights() -> LossWeights {
    LossWeights::default()
}
