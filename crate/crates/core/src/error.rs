use thiserror::Error;

/// Errors produced across the planning toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("free space not found after {0} attempts")]
    FreeSpaceNotFound(usize),

    #[error("obstacle placement failed after {0} attempts")]
    PlacementFailed(usize),

    #[error("cache does not match the parameters it is used with")]
    StaleCache,

    #[error("normalization singularity: vector norm {0:e} is below threshold")]
    Singular(f64),

    #[error("episodic memory is empty")]
    EmptyMemory,

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checksum mismatch in block `{0}`")]
    Checksum(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
