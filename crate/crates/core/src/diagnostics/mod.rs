//! Trajectory-conflict measurements, the mixture variance decomposition and
//! a sample-quality probe.

pub mod conflict;
pub mod mixture;
pub mod quality;

pub use conflict::{
    cfg_rel_distance, compare_traces, pairwise_conflict, trace_conflict, ConflictConfig, ConflictPoint, ConflictSummary,
    ConflictTrace,
};
pub use mixture::{decompose_at, variance_decomposition, MixtureComponent, MixtureSpec, VarianceReport};
pub use quality::ToyClassifier;
