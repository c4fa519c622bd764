/// Errors produced by the risk kernel and the path engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument fell outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A constructor rejected structurally invalid inputs.
    #[error("invalid input: {0}")]
    Validation(String),

    /// Two objects that must be used together do not fit each other.
    #[error("incompatible inputs: {0}")]
    Incompatible(String),

    /// The cross-sectional regression at one exercise date could not be solved.
    #[error("regression failed at date {date}: {reason}")]
    Regression { date: usize, reason: String },

    /// Streams that must be independent were keyed with the same seed.
    #[error("seed collision: {0}")]
    SeedCollision(String),

    /// An enumeration would exceed the configured work budget.
    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn incompatible(msg: impl Into<String>) -> Self {
        Error::Incompatible(msg.into())
    }
}
