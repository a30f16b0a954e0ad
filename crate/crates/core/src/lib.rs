//! Checkpoints-across-time pruning of parallel corpora.
//!
//! A small conditional model is trained on the full corpus for a few epochs;
//! each pair's target perplexity under the early snapshots becomes a
//! trajectory, and selectors keep the pairs whose trajectory looks most
//! informative. Baseline selectors, subset statistics and MT metrics for
//! judging the result live alongside.

pub mod analysis;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod scoring;
pub mod selection;
pub mod synth;

pub use error::{Error, Result};
