use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The identification batch is not rich enough to recover the model.
    #[error("persistency of excitation violated: rank {achieved}, required {required}")]
    PeViolation { achieved: usize, required: usize },

    #[error("integration diverged at t = {time}: state {state:?}")]
    IntegrationDiverged { time: f64, state: Vec<f64> },

    #[error("model evaluation produced a non-finite value: {0}")]
    ModelEvaluation(String),

    /// The reconstruction window does not hold enough samples yet.
    #[error("estimator window not ready: {have} of {need} samples")]
    NotReady { have: usize, need: usize },

    #[error("sweep point T = {sampling_time} failed: {source}")]
    SweepPoint {
        sampling_time: f64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Strips sweep tagging to expose the underlying failure.
    pub fn root(&self) -> &Error {
        match self {
            Error::SweepPoint { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
