use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid value for `{field}`: {msg}")]
    Validation { field: String, msg: String },
    #[error(transparent)]
    Core(#[from] cascade_core::error::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn validation(field: &str, msg: impl Into<String>) -> Self {
        CliError::Validation { field: field.to_string(), msg: msg.into() }
    }

    /// Field named by a validation error, if any.
    pub fn field(&self) -> Option<&str> {
        match self {
            CliError::Validation { field, .. } => Some(field),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
