use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e}, tolerance {tolerance:e})")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("Jacobi eigensolver did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("activation `{name}` violates its declared bounds: {detail}")]
    AssumptionViolated { name: String, detail: String },

    #[error("unknown activation `{0}`")]
    UnknownActivation(String),

    #[error("unknown function family `{0}`")]
    UnknownFamily(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("training diverged at step {step} (loss {loss:e})")]
    Divergence { step: usize, loss: f64 },

    #[error("least eigenvalue of H∞ is not positive ({0:e})")]
    NonPositiveLambda0(f64),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("gradient paths disagree by {0:e}")]
    PathMismatch(f64),

    #[error("no separating projection found in {0} attempts")]
    AttemptsExhausted(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
