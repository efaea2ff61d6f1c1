//! Crate-wide error type.

use thiserror::Error;

/// Unified error for every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument is malformed or out of range.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A truncation/evolution policy is internally inconsistent or infeasible.
    #[error("invalid policy: {0}")]
    Policy(String),

    /// The requested computation exceeds a hard resource guard.
    #[error("resource limit: {0}")]
    Resource(String),

    /// A numerical routine failed or a monitored quantity left its safe range.
    #[error("numerical failure: {0}")]
    Numeric(String),

    /// Input data (tables, reference files, checkpoints) are malformed.
    #[error("bad data: {0}")]
    Data(String),

    /// A requested analysis window contains no usable points.
    #[error("empty window: {0}")]
    Window(String),

    /// A nonlinear fit failed to converge or produced an invalid parameter.
    #[error("fit failure: {0}")]
    Fit(String),

    /// The combination of options is recognized but not supported.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Configuration file is missing, unreadable, or fails validation.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
