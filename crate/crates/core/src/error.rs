use std::io;

use thiserror::Error;

/// Errors produced anywhere in the discovery pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error at byte offset {offset}: {source}")]
    Io {
        offset: u64,
        #[source]
        source: io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("length error: expected {expected} payload bytes, found {found}")]
    Length { expected: u64, found: u64 },

    #[error("data error: non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate embedding: row {row} has (near-)zero norm")]
    DegenerateEmbedding { row: usize },

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal residual {residual:.3e})")]
    Convergence { sweeps: usize, residual: f64 },

    #[error("numeric gradient probe produced a non-finite loss at coordinate {coordinate}")]
    Probe { coordinate: usize },

    #[error("training diverged: non-finite loss at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },

    #[error("{0}")]
    Harness(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(offset: u64, source: io::Error) -> Self {
        Error::Io { offset, source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
