//! Generative feature replay for class-incremental learning.
//!
//! A VAE trained on frozen feature vectors doubles as the classifier's
//! bottleneck and as a class-conditional generator of rehearsal features.
//! On top of the plain replay objective the trainer supports three
//! refinements, each independently switchable: matching the posterior of a
//! reconstruction to that of its source, distilling the previous encoder's
//! posterior into the current one, and cycling generated features through
//! the frozen previous autoencoder before they are replayed.

// Negated comparisons on floats are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod ndcore;
pub mod replay;
pub mod trainer;

// The oracles shared with the integration tests refer to the crate by name.
#[cfg(test)]
extern crate self as featreplay_core;
#[cfg(test)]
mod gradient_checks;
#[cfg(test)]
#[path = "../tests/common/mod.rs"]
mod test_oracles;

pub use data::{FeatureDataset, TaskLayout, TaskSplit};
pub use error::{Error, Result};
pub use losses::{LossReport, LossWeights};
pub use model::{ModelConfig, ModelState, ReconKind};
pub use trainer::{run_scenario, RunLog, ScenarioConfig};
