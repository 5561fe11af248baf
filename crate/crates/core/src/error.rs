use thiserror::Error;

/// Failure of an environment handler (the authoritative API).
#[derive(Clone, Debug, PartialEq, Error)]
#[error("handler `{handler}` failed: {message}")]
pub struct HandlerError {
    pub handler: String,
    pub message: String,
}

impl HandlerError {
    pub fn new(handler: impl Into<String>, message: impl Into<String>) -> Self {
        Self { handler: handler.into(), message: message.into() }
    }
}

/// Failure of a guess source. The executor treats every variant as "no
/// guesses this step" and carries on sequentially.
#[derive(Clone, Debug, PartialEq, Error)]
pub enum SpeculatorError {
    #[error("speculator timed out")]
    Timeout,
    #[error("speculator failed: {0}")]
    Failed(String),
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: HandlerError,
    },
    #[error("step {step}: no handler registered for `{handler}`")]
    UnknownHandler { step: usize, handler: String },
    #[error("invalid run parameters: {0}")]
    InvalidArgument(String),
}

impl ExecError {
    /// Step index of the failing step, when the error is tied to one.
    pub fn step(&self) -> Option<usize> {
        match self {
            ExecError::Step { step, .. } | ExecError::UnknownHandler { step, .. } => Some(*step),
            ExecError::InvalidArgument(_) => None,
        }
    }
}
