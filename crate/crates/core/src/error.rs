use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("characteristic left the evaluation box at t = {time}: {point:?}")]
    EndpointOutOfBox { time: f64, point: Vec<f64> },

    #[error("initial profile is outside the admissible class: {0}")]
    ProfileOutOfClass(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("pushback gain regime violated: <p,m> = {weighted} < delta/2 = {half_delta}")]
    RegimeViolated { weighted: f64, half_delta: f64 },

    #[error("infeasible start: eta = {eta} < 0")]
    InfeasibleStart { eta: f64 },

    #[error("corrected trajectory violates the constraint at t = {time} (eta = {eta})")]
    CertificationFailed { time: f64, eta: f64 },

    #[error("pushback construction failed: {0}")]
    ConstructionFailed(String),

    #[error("samples violate the Lipschitz bound between {i} and {j}")]
    InconsistentSamples { i: usize, j: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
