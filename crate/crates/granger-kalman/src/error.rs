//! Error type shared by the solvers, realization, and analysis routines.

/// Library-wide result alias.
pub type Result<V> = std::result::Result<V, Error>;

/// Errors produced by the analysis pipeline.
///
/// Numerical payloads are reported as `f64` regardless of the scalar type the
/// computation ran in, so that the enum stays free of type parameters.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An input value violated one of its documented invariants. The message
    /// lists every violated invariant together with the offending quantity.
    #[error("invalid input: {0}")]
    Validation(String),

    /// Two arguments have incompatible shapes.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A matrix that must be Schur stable has spectral radius at or above the
    /// allowed limit.
    #[error("matrix is not stable: spectral radius {rho} >= {limit}")]
    NotStable { rho: f64, limit: f64 },

    /// An iterative solver exhausted its iteration budget.
    #[error("no convergence after {iterations} iterations (last residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// The innovation covariance became singular or indefinite while solving
    /// the Riccati equation; the underlying process is not full rank.
    #[error("innovation covariance is singular or indefinite (min eigenvalue {min_eig:.3e})")]
    SingularInnovation { min_eig: f64 },

    /// A covariance sequence does not provide enough lags for the requested
    /// Hankel block count.
    #[error("covariance sequence provides {got} lags but {needed} are required")]
    InsufficientLags { needed: usize, got: usize },

    /// Realization from covariance data produced an unstable state matrix,
    /// which signals noisy or inconsistent covariances.
    #[error("recovered state matrix is unstable (spectral radius {rho}); covariance data are too noisy or inconsistent")]
    UnstableRealization { rho: f64 },

    /// An operation that requires a minimal realization received a
    /// non-minimal one.
    #[error("representation is not minimal: {0}")]
    NotMinimal(String),

    /// The coordinated structure does not exist: a Granger non-causality
    /// condition between the named output blocks (1-based) failed.
    #[error("coordinated structure violated for output blocks ({i}, {j}): {detail}")]
    StructureViolation { i: usize, j: usize, detail: String },

    /// The coordinator subsystems recovered from different agent pairs could
    /// not be aligned by a similarity transform within tolerance.
    #[error("coordinator alignment failed for agent {agent}: residual {residual:.3e} exceeds {tol:.3e}")]
    AlignmentFailure { agent: usize, residual: f64, tol: f64 },

    /// Underlying I/O failure while reading or writing files.
    #[error("i/o error: {0}")]
    Io(String),

    /// A document could not be parsed into the expected format.
    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
