//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by any operation in this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter lies outside its mathematical domain (e.g. non-positive
    /// temperature, empty histogram).
    #[error("domain error: {0}")]
    Domain(String),

    /// Tensor or raster dimensions do not conform.
    #[error("shape error: {0}")]
    Shape(String),

    /// A configuration value is invalid or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A persisted file is malformed. Names the offending path.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// Slide synthesis could not satisfy the placement constraints.
    #[error("generation error: {0}")]
    Generation(String),

    /// The tile grid has no foreground tiles to build a graph from.
    #[error("empty graph: {0}")]
    EmptyGraph(String),

    /// A node or element index is out of range.
    #[error("index error: {0}")]
    Index(String),

    /// A supervision label is out of range for the configured class count.
    #[error("label error: {0}")]
    Label(String),

    /// Evaluation cannot produce a result (e.g. every class excluded).
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// A required per-tile artifact is missing.
    #[error("completeness error: {0}")]
    Completeness(String),

    /// Command-line or config-file usage error (exit code 2).
    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(String),
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Image(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
