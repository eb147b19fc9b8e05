// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes do not agree.
    #[error("shape error: {0}")]
    Shape(String),

    /// A distribution or operator parameter is outside its domain.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Invalid or inconsistent configuration. Carries every problem found.
    #[error("config error: {}", .0.join("; "))]
    Config(Vec<String>),

    /// Input data cannot be used (too few rows, not PSD, zero variance).
    #[error("data error: {0}")]
    Data(String),

    /// Malformed binary container.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Operation requested on a model whose architecture does not support it.
    #[error("mode error: {0}")]
    Mode(String),

    /// A cached forward pass no longer matches the model it came from.
    #[error("state error: {0}")]
    State(String),

    /// Training produced a NaN or infinite loss.
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(vec![msg.into()])
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Parameter(_) | Error::Shape(_) | Error::Json(_)
        )
    }
}
