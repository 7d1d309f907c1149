use std::io;

use thiserror::Error;

/// Errors raised across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("bad magic in volume file (expected BVOL1)")]
    BadMagic,

    #[error("truncated volume payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("volume dimensions {0}x{1}x{2} overflow the addressable size")]
    DimensionOverflow(u32, u32, u32),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("missing parameter group: {0}")]
    MissingGroup(String),

    #[error("checkpoint integrity error: {0}")]
    Integrity(String),

    #[error("provenance error: {0}")]
    Provenance(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
