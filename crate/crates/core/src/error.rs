use thiserror::Error;

/// Errors raised by the solver and the certificate checks.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown kernel family `{0}`")]
    UnknownFamily(String),

    #[error("kernel support radius must be positive, got {0}")]
    NonpositiveSupport(f64),

    #[error("bad kernel parameters: {0}")]
    BadKernelParams(String),

    #[error("adaptive quadrature did not converge on [{a}, {b}]")]
    QuadratureFailure { a: f64, b: f64 },

    #[error("indices {0:?} do not form one contiguous block")]
    NonAdjacentMerge(Vec<usize>),

    #[error("collision localization failed at t = {time}: {reason}")]
    StepSizeUnderflow { time: f64, reason: String },

    #[error("cumulative value {value} is not a breakpoint of the flux grid")]
    GridMismatch { value: f64 },

    #[error("bad mass rule: {0}")]
    BadMassRule(String),

    #[error("time quadrature error estimate {estimate:e} exceeds tolerance {tolerance:e}")]
    InsufficientSnapshots { estimate: f64, tolerance: f64 },

    #[error("invalid particle system: {0}")]
    InvalidSystem(String),

    #[error("invalid initial datum: {0}")]
    InvalidDatum(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
