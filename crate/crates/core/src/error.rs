use thiserror::Error;

/// Errors shared by all analysis modules.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A precondition on the parameter combination is violated; the message
    /// names the violated bound.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A numerical procedure failed to reach its accuracy target.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// The queueing system is unstable at the probed transform parameter.
    #[error("unstable at theta={theta}: consult snc::stability before evaluating the kernel")]
    Unstable { theta: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
