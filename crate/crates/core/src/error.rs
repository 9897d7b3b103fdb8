//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value that must satisfy a unit-norm or orthogonality constraint does not.
    #[error(
        "constraint violation in {what}: deviation {deviation:.3e} exceeds tolerance {tol:.1e}"
    )]
    ConstraintViolation {
        what: &'static str,
        deviation: f64,
        tol: f64,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("matrix is not symmetric: max asymmetry {asymmetry:.3e}")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive definite in {context}")]
    NotPositiveDefinite { context: &'static str },

    #[error("singular linear system in {context}")]
    Singular { context: &'static str },

    #[error("force magnitude {magnitude:.3e} N below degeneracy threshold {threshold:.1e} N")]
    DegenerateForce { magnitude: f64, threshold: f64 },

    #[error("eigensolver failed to converge after {sweeps} sweeps (off-diagonal {offdiag:.3e})")]
    EigenDiverged { sweeps: usize, offdiag: f64 },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    #[error("robot network is not connected ({reachable} of {nodes} nodes reachable from node 0)")]
    Disconnected { nodes: usize, reachable: usize },

    #[error(
        "consensus did not converge within {max_iters} rounds (residual {residual:.3e}, tol {tol:.1e})"
    )]
    ConsensusDiverged {
        max_iters: usize,
        residual: f64,
        tol: f64,
    },

    #[error("invalid scenario configuration: {0}")]
    InvalidConfig(String),

    #[error(
        "phase-2 requires converged phase-1 poses (worst eigengap {gap:.3}) — rerun with a longer \
         phase 1 or pass --true-poses"
    )]
    PosesNotConverged { gap: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
