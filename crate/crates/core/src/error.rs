use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
///
/// `is_data_error` separates problems with the input data from usage errors
/// so that front ends can map them onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header {path}: {message}")]
    Header { path: PathBuf, message: String },
    #[error("payload size mismatch: header declares {expected} values, payload holds {found_bytes} bytes")]
    SizeMismatch { expected: usize, found_bytes: u64 },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("energies must be strictly increasing (index {index})")]
    NonIncreasingEnergies { index: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("factorization did not converge: {0}")]
    NonConvergence(String),
    #[error("noise level is zero; use a fixed-rank threshold instead of SURE selection")]
    ZeroSigma,
    #[error("flat spectrum: zero edge step")]
    FlatSpectrum,
    #[error("no upward 0.5 crossing in spectrum")]
    NoEdge,
    #[error("too many references: {0} (at most 8 supported)")]
    TooManyReferences(usize),
    #[error("{invalid} of {total} pixels could not be fitted")]
    TooManyInvalid { invalid: usize, total: usize },
    #[error("degenerate map: {0}")]
    DegenerateMap(String),
    #[error("constant input: correlation undefined")]
    ConstantInput,
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("PNG error: {0}")]
    Png(#[from] png::EncodingError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad or unusable input data (as opposed to
    /// invalid parameters supplied by the caller).
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::InvalidParameter(_) | Error::ZeroSigma)
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
