//! Gradient descent on over-parameterized two-layer networks, with the
//! limiting Gram matrix, its least eigenvalue, the width threshold, and
//! numerical certificates for every step of the convergence argument.
//!
//! The network is `f(W, x, a) = m^{-1/2} Σ_r a_r σ(w_rᵀx)` with only the
//! input weights `W` trained. See the README for the CLI.

pub mod activation;
pub mod error;
pub mod gram;
pub mod harness;
pub mod lazy;
pub mod linalg;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod theory;
pub mod trainer;

pub use activation::{softplus, Activation, AssumptionReport};
pub use error::{Error, Result};
pub use gram::{GramEstimate, GramKind};
pub use linalg::{Matrix, SymmetricSpectrum};
pub use model::{Dataset, KhatriRaoFactors, NetworkState};
pub use theory::TheoremReport;
pub use trainer::{CertificateReport, EtaPolicy, TraceRow, TrainConfig, TrainingTrace};

/// Format a float with 17 significant digits, the precision used for every
/// numeric value this crate writes out.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
