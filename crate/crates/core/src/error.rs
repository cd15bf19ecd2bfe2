use thiserror::Error;

/// Errors raised by the filtering kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate depth: |kappa| = {kappa:e} is at or below 1e-9")]
    DegenerateDepth { kappa: f64 },

    #[error("rotation angle {angle} is too close to pi for the principal logarithm")]
    LogBranch { angle: f64 },

    #[error("matrix is not an element of se(3) (deviation {deviation:e})")]
    NotInAlgebra { deviation: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("lie midpoint fixed point diverged after {iterations} iterations (|xi| = {norm:e})")]
    FixedPointDiverged { iterations: usize, norm: f64 },

    #[error("riccati step failed: {reason}")]
    RiccatiSolveFailed { reason: String },

    #[error("innovation covariance is singular (condition number {cond:e})")]
    SingularInnovation { cond: f64 },

    #[error("C(S) is only available for diagonal process covariance")]
    NonDiagonalCovariance,

    #[error("observation kind does not match the configured weight matrix")]
    WeightMismatch,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("frame {frame}: {source}")]
    AtFrame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at_frame(self, frame: usize) -> Error {
        Error::AtFrame {
            frame,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
