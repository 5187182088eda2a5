use thiserror::Error;

/// Errors produced by kernel evaluation, path construction, integration and
/// the Monte Carlo engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{kernel} is undefined at s = {s}: {reason}")]
    OutOfDomain {
        kernel: String,
        s: f64,
        reason: String,
    },

    #[error("non-integrable singularity of exponent {exponent} at s = {location} inside [{lo}, {hi}]")]
    NonIntegrableSingularity {
        exponent: f64,
        location: f64,
        lo: f64,
        hi: f64,
    },

    #[error("kernel has a singularity at s = {location} inside [{lo}, {hi}]; integration by parts requires a C^1 integrand")]
    SingularityInInterval { location: f64, lo: f64, hi: f64 },

    #[error("t = {t} outside path domain [{lo}, {hi}]")]
    OutOfPathDomain { t: f64, lo: f64, hi: f64 },

    #[error("paths have mismatched domains: [{lo_a}, {hi_a}] vs [{lo_b}, {hi_b}]")]
    DomainMismatch {
        lo_a: f64,
        hi_a: f64,
        lo_b: f64,
        hi_b: f64,
    },

    #[error("Gram matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("quadrature failed to converge on [{lo}, {hi}] (requested tolerance {tol:e})")]
    QuadratureNonConvergence { lo: f64, hi: f64, tol: f64 },

    #[error("{failed} of {total} replicas failed ({first_error}); abort threshold is 0.1%")]
    ReplicaFailures {
        failed: usize,
        total: usize,
        first_error: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
