//! Minimal dense numerical core: tensors, reverse-mode autodiff and Adam.

pub mod adam;
pub mod graph;
pub mod rng;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use graph::{Gradients, Graph, NodeId};
pub use rng::SeededRng;
pub use tensor::Tensor;
