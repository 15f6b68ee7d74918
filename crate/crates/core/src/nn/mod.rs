//! Tensor layers and reverse-mode differentiation shared by both generators.

pub mod graph;
pub mod kernels;
pub mod layers;
pub mod ops;
pub mod params;

pub use graph::{Graph, Var};
pub use layers::AttentionConfig;
pub use params::{Gradients, ParamStore};
