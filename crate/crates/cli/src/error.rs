use std::path::PathBuf;

use codelens_core::{EmbeddingError, EvalError, GalleryError, RetrievalError, SynthError};
use thiserror::Error;

/// Exit status for validation and configuration failures.
pub const EXIT_VALIDATION: u8 = 2;
/// Exit status when an external adapter command fails.
pub const EXIT_ADAPTER: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Gallery { path: PathBuf, source: GalleryError },
    #[error(transparent)]
    GalleryValidation(#[from] GalleryError),
    #[error("{path}: {source}")]
    Embedding { path: PathBuf, source: EmbeddingError },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("adapter `{command}` failed ({status}){}", diagnostics(.stderr))]
    Adapter { command: String, status: String, stderr: String },
    #[error("adapter `{command}` produced an unusable file {path}: {source}")]
    AdapterOutput { command: String, path: PathBuf, source: EmbeddingError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn diagnostics(stderr: &str) -> String {
    let trimmed = stderr.trim();
    if trimmed.is_empty() {
        String::new()
    } else {
        format!(":\n{trimmed}")
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Adapter { .. } | CliError::AdapterOutput { .. } => EXIT_ADAPTER,
            _ => EXIT_VALIDATION,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(e.to_string())
    }
}
