use std::path::PathBuf;

use thiserror::Error;

use crate::lbm::VelocityField;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied parameter is outside its documented range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Input data is inconsistent (size mismatch, non-finite values, ...).
    #[error("invalid data: {0}")]
    Data(String),

    #[error("structure does not percolate along the flow axis")]
    NotPercolating,

    #[error("tortuosity undefined: mean streamwise velocity over pore space is zero")]
    UndefinedTortuosity,

    #[error("solver diverged at iteration {iteration}")]
    Divergence { iteration: u64 },

    /// The iteration budget ran out; the last velocity field is kept.
    #[error("no convergence after {iterations} iterations (last relative change {last_change:e})")]
    NonConvergence {
        iterations: u64,
        last_change: f64,
        field: Box<VelocityField>,
    },

    #[error("too few samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("bad magic bytes in record file")]
    BadMagic,

    #[error("unsupported record version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("record truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 1 = usage/parameter, 2 = data, 3 = solver did not converge.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_) => 1,
            Error::Divergence { .. } | Error::NonConvergence { .. } => 3,
            _ => 2,
        }
    }
}
