use std::path::PathBuf;

use thiserror::Error;

/// Exit status when a checked property is violated or a check fails.
pub const EXIT_VIOLATED: i32 = 1;
/// Exit status for stuck runs, malformed input and usage errors.
pub const EXIT_FAILED: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}:{col}: {msg}")]
    Parse { path: PathBuf, line: usize, col: usize, msg: String },
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("model extraction failed: {0}")]
    Extract(String),
    #[error("translation failed: {0}")]
    Translate(String),
}

impl CliError {
    pub fn parse(path: impl Into<PathBuf>, e: cvmx_core::syntax::ParseError) -> Self {
        CliError::Parse { path: path.into(), line: e.line, col: e.col, msg: e.msg }
    }
}

pub fn read_file(path: &std::path::Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_owned(), source })
}

pub fn write_file(path: &std::path::Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Write { path: path.to_owned(), source })
}
