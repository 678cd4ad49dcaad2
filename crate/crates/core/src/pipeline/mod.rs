//! File formats, configuration and the stage runners behind the `glis` CLI.
//!
//! Every interchange file is JSON (or JSON lines for logs) and list files are
//! wrapped as `{"schema_version": 1, "records": [...]}`; bare arrays are
//! accepted on input. Files are validated before they are deserialized, and
//! outputs are written atomically.

pub mod checks;
pub mod config;
pub mod schema;
pub mod stages;
pub mod validate;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{load_config, Config, LlmBackend};
pub use schema::SchemaName;
pub use stages::{run_stage, RunOptions, Stage};
pub use validate::{validate_file, validate_value, Violation};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("{path}: {count} schema violation(s): {details}")]
    Invalid {
        path: PathBuf,
        count: usize,
        details: String,
    },
    #[error("language model transport: {0}")]
    Transport(String),
    #[error("missing input {path}: {reason}")]
    MissingInput { path: PathBuf, reason: String },
    #[error("{0}")]
    Other(String),
}

impl PipelineError {
    /// Process exit code for this failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Schema(_) | PipelineError::Invalid { .. } => 2,
            PipelineError::Transport(_) => 3,
            PipelineError::MissingInput { .. } => 4,
            PipelineError::Other(_) => 1,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        PipelineError::Other(format!("{}: {e}", path.display()))
    }
}

/// Writes `contents` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), PipelineError> {
    use std::io::Write;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| PipelineError::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| PipelineError::io(path, e))?;
    tmp.persist(path)
        .map_err(|e| PipelineError::io(path, e.error))?;
    Ok(())
}
