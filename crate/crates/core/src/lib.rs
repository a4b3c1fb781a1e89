//! Core library for a repository-level code-completion data pipeline:
//! corpus ingestion and filtering, exact/near dedup, lightweight code
//! graphs, completion-task extraction, fill-in-the-middle prompt assembly,
//! DPO preference data, a toy trainable model with exact SFT/DPO losses,
//! and evaluation metrics.

pub mod codegraph;
pub mod contextgen;
pub mod corpus;
pub mod dedup;
pub mod evalmetrics;
pub mod lex;
pub mod pipeline;
pub mod preference;
pub mod taskgen;
pub mod traincore;
pub mod util;

/// Default-precision toy model used by the pipeline.
pub type ToyModel64 = traincore::ToyModel<f64>;
/// Single-precision instantiation of the same math.
pub type ToyModel32 = traincore::ToyModel<f32>;
