use thiserror::Error;

pub type Result<T, E = KamError> = std::result::Result<T, E>;

/// Best iterate carried by a convergence failure so callers can still
/// report it.
#[derive(Debug, Clone, PartialEq)]
pub struct BestIterate {
    pub values: Vec<f64>,
    /// Scalar unknown of the iterate (`H_N` estimate), when there is one.
    pub scalar: Option<f64>,
}

#[derive(Debug, Error)]
pub enum KamError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{context} did not converge after {iterations} iterations (residual {residual:.3e})")]
    Convergence {
        context: &'static str,
        residual: f64,
        iterations: usize,
        best: Option<Box<BestIterate>>,
    },

    #[error("linear program {0}")]
    Lp(&'static str),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl KamError {
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        KamError::Argument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        KamError::Config(msg.into())
    }

    pub(crate) fn convergence(context: &'static str, residual: f64, iterations: usize) -> Self {
        KamError::Convergence {
            context,
            residual,
            iterations,
            best: None,
        }
    }
}
