use thiserror::Error;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid node count {n} for {kind}: {reason}")]
    InvalidN {
        kind: String,
        n: usize,
        reason: String,
    },
    #[error("graph is disconnected")]
    Disconnected,
    #[error("delta {delta} out of range [0, {max})")]
    DeltaOutOfRange { delta: f64, max: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("insufficient samples: have {have}, need {need}")]
    InsufficientSamples { have: usize, need: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("no root: recursion is unstable (rho_hat = {rho_hat})")]
    NoRootUnstable { rho_hat: f64 },
    #[error("no root: moment function stays below one up to s = {s_max}")]
    NoRootLight { s_max: f64 },
    #[error("quadrature did not converge: estimated error {error:e}")]
    Quadrature { error: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("problem too large for dense evaluation: {0}")]
    TooLarge(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
