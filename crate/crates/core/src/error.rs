use thiserror::Error;

/// Everything that can go wrong inside the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent shapes or parameters supplied by the caller.
    #[error("configuration error: {0}")]
    Config(String),

    /// A tag or option that does not name anything known.
    #[error("usage error: {0}")]
    Usage(String),

    /// Norm pushed out of a truncated Fock space.
    #[error("truncation error: leaked {leaked:e} exceeds tolerance {tol:e}")]
    Truncation { leaked: f64, tol: f64 },

    /// Operation refused because a dense representation would be too large.
    #[error("dense cap exceeded: dimension {dim} > cap {cap}")]
    DenseCap { dim: usize, cap: usize },

    #[error("matrix is not Hermitian (deviation {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("no convergence: {0}")]
    Convergence(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    /// Zero-energy solution crossed zero; the potential binds.
    #[error("attractive potential: {0}")]
    Attractive(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
