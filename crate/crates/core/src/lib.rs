//! Financial misinformation detection pipeline.
//!
//! The pieces, in pipeline order:
//!
//! - [`dataset`] — ingestion, validation, stratified train/dev splitting,
//!   and justification-sentence augmentation
//! - [`prompts`] — the two instruction templates and the label token codec
//! - [`orchestrator`] — stage configs, schedule presets, and the training
//!   loop over pluggable [`orchestrator::TrainerBackend`]s
//! - [`backend`] — built-in backends (deterministic memorizing mock plus
//!   test wrappers)
//! - [`inference`] — generation over rendered prompts and total parsing of
//!   completions into structured predictions
//! - [`metrics`] — micro F1, confusion matrices, ROUGE-1/2/L, and the
//!   composite overall score
//! - [`cli`] — the `fmd` command-line surface tying it all together

pub mod backend;
pub mod cli;
pub mod dataset;
pub mod inference;
pub mod metrics;
pub mod orchestrator;
pub mod prompts;

/// Crate version, recorded in every manifest.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
