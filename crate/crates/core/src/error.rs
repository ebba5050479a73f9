use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("weight matrix W must be symmetric positive definite")]
    InvalidWeight,

    /// `∫F − I` is (numerically) singular, i.e. `s = 0` is an eigenvalue.
    #[error("H(0) = I - ∫F is numerically singular (condition estimate {cond:.3e})")]
    SingularAtZero { cond: f64 },

    #[error("step {step} too coarse: trapezoid end-weight matrix is singular")]
    StepTooCoarse { step: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("argument {arg} outside [{lo}, {hi}]")]
    OutOfRange { arg: f64, lo: f64, hi: f64 },

    /// The fundamental matrix does not decay, so the improper integral
    /// defining U diverges.
    #[error("fundamental matrix does not decay over [T/2, T] (shrink ratio {ratio:.3e})")]
    NonDecayingTail { ratio: f64 },

    #[error(
        "collocation system ill-conditioned (estimate {cond:.3e}); \
         the Lyapunov matrix may not exist or be unique"
    )]
    IllConditioned { cond: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
