use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the laboratory.
#[derive(Error, Debug)]
pub enum Error {
    /// A belief update was asked to condition on a token whose probability is
    /// at or below the zero tolerance (1e-12): the observation is impossible
    /// under the current state.
    #[error("token {token} has probability {prob:.3e} <= {tol:.0e} under the current state")]
    ZeroProbabilityToken { token: usize, prob: f64, tol: f64 },

    /// Breadth-first state enumeration would exceed the configured cap.
    #[error("enumeration of {requested} contexts exceeds cap {cap}")]
    EnumerationTooLarge { requested: u128, cap: u128 },

    /// Total correlation is defined only for compositions of HMM-kind factors.
    #[error("total correlation requires HMM-kind factors; factor {factor} is not classical")]
    NonClassicalState { factor: usize },

    /// A constructor or operation was given an out-of-range parameter.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Matrix or batch dimensions do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A capture point name does not exist for the given architecture.
    #[error("unknown capture point: {0}")]
    UnknownCapturePoint(String),

    /// A spectrum with no variance cannot support CEV queries.
    #[error("degenerate spectrum: total variance is zero")]
    DegenerateSpectrum,

    /// Training produced a non-finite loss.
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: u64, loss: f64 },

    /// A linear-algebra backend call failed.
    #[error("linear algebra error: {0}")]
    Linalg(String),

    /// Config parsing or validation failed; the message carries a field path.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed tensor dump or checkpoint.
    #[error("dump format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}
