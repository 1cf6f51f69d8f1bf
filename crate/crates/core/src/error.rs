//! Shared error type for geometry and fitting operations.

use thiserror::Error;

/// Errors raised by grid, mesh, slice and phantom operations.
#[derive(Debug, Error)]
pub enum CoreError {
    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation that requires geometry received none.
    #[error("empty geometry: {0}")]
    EmptyGeometry(String),

    /// An operation that requires a closed 2-manifold received an open mesh.
    #[error("open surface: {0}")]
    OpenSurface(String),

    /// The optimizer produced a non-finite loss it could not recover from.
    #[error("fit diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },

    /// A class surface vanished during fitting.
    #[error("degenerate class {class}: {detail}")]
    DegenerateClass { class: usize, detail: String },

    /// Observations do not intersect any class surface at warm start.
    #[error("no overlap at frame {frame}: {detail}")]
    NoOverlap { frame: usize, detail: String },

    /// Filesystem or serialization failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed JSON payload.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::InvalidArgument(msg.into())
    }

    pub fn empty(msg: impl Into<String>) -> Self {
        CoreError::EmptyGeometry(msg.into())
    }

    pub fn open(msg: impl Into<String>) -> Self {
        CoreError::OpenSurface(msg.into())
    }
}
