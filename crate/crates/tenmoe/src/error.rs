//! Error type shared by all modules.

/// Errors reported by tensor construction, spectra, estimators, and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A mode index was outside `0..ndim`.
    #[error("mode {mode} out of range for a {ndim}-way tensor")]
    ModeOutOfRange { mode: usize, ndim: usize },

    /// Shapes of two operands do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An operation requires a nonzero tensor.
    #[error("tensor has zero Frobenius norm")]
    ZeroTensor,

    /// A tensor contains NaN or infinite entries.
    #[error("tensor contains non-finite values")]
    NonFinite,

    /// The eigenvalue profile cannot support the requested analysis.
    #[error("degenerate profile: {0}")]
    DegenerateProfile(String),

    /// A requested rank cannot be served for this input.
    #[error("infeasible rank {rank}: {reason}")]
    InfeasibleRank { rank: usize, reason: String },

    /// A column-correlation coefficient was outside `[0, 1)`.
    #[error("invalid correlation coefficient {0}; must lie in [0, 1)")]
    InvalidCorrelation(f64),

    /// A scenario or option set is inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A tensor file failed structural validation.
    #[error("unsupported tensor file: {0}")]
    Format(String),

    /// An underlying I/O operation failed.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
