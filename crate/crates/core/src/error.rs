use thiserror::Error;

/// Errors raised by model construction, simulation and estimation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("simulation diverged at t = {time} (fine step {step}): non-finite state")]
    SimulationDiverged { time: f64, step: usize },

    #[error("{estimator} diverged at step {step}: non-finite estimate")]
    EstimationDiverged {
        estimator: &'static str,
        step: usize,
    },

    #[error("Kalman gain is singular at step {step}")]
    SingularGain { step: usize },

    #[error("normal matrix is rank deficient (condition estimate {condition:e})")]
    RankDeficient { condition: f64 },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
