//! Crate-wide error type.

/// Errors shared by all modules. Variants carry a short human-readable
/// context string rather than structured payloads; callers that need to
/// distinguish cases match on the variant.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// The requested integral provably diverges (e.g. `|x|^g` with `g <= -n`
    /// against a region containing the singular point).
    #[error("integral diverges: {0}")]
    NonIntegrable(String),

    #[error("unsupported domain: {0}")]
    UnsupportedDomain(String),

    /// Weight kind outside what the requested operation can handle
    /// (e.g. a fractional power of the point-mass weight).
    #[error("unsupported weight: {0}")]
    UnsupportedWeight(String),

    /// Weight pair not in the supported list for two-metric estimates.
    #[error("unsupported weight pair: {0}")]
    UnsupportedPair(String),

    #[error("derivative of order {order} requested but only order {available} is available")]
    DerivativeUnavailable { order: usize, available: usize },

    /// Adaptive quadrature hit its level cap before meeting the tolerance,
    /// or a verification of a built rule failed.
    #[error("quadrature failure: {0}")]
    QuadratureFailure(String),

    #[error("point ({0}, {1}) lies outside the mesh")]
    PointOutsideMesh(f64, f64),

    /// A point source must sit strictly inside the domain.
    #[error("point ({0}, {1}) lies on the domain boundary")]
    PointOnBoundary(f64, f64),

    #[error("assembly failed: {0}")]
    SingularAssembly(String),

    #[error("matrix is singular or not positive definite: {0}")]
    SingularMatrix(String),

    #[error("solver did not converge: {0}")]
    SolverDiverged(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
