//! The `codelens` command line: gallery manifests, synthetic galleries,
//! accuracy reports and the two-image code inference pipeline.

pub mod adapter;
pub mod commands;
pub mod error;
pub mod pipeline;

pub use commands::{run, Cli, Output};
pub use error::{CliError, EXIT_ADAPTER, EXIT_VALIDATION};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineResult};
