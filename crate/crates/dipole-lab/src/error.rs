//! Error type shared by every module of the laboratory.

use thiserror::Error;

/// Failures raised by evaluators, quadrature, root finders and topology probes.
///
/// Every error is recoverable: callers either shrink a step, discard a probe or
/// surface the failure to the report layer, which maps it to an exit code.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// The point lies outside the domain B(0,3) or outside the queried region.
    #[error("point outside the domain: {0}")]
    OutOfDomain(String),
    /// A frame-dependent quantity was requested exactly on the symmetry axis.
    #[error("evaluation on the symmetry axis requires the axis limit")]
    AxisSingular,
    /// A finite-difference stencil straddles a region interface.
    #[error("finite-difference stencil crosses a region interface")]
    StepTooLarge,
    /// Adaptive quadrature ran out of cells; the partial value and its error estimate are kept.
    #[error("quadrature budget exceeded: value {value:.6e}, error estimate {error:.3e}")]
    BudgetExceeded { value: f64, error: f64 },
    /// A scalar root finder failed to bracket or to converge.
    #[error("root finder did not converge: {0}")]
    NoConvergence(String),
    /// A degree probe lies too close to the image of the boundary sphere.
    #[error("probe at distance {0:.3e} from the boundary image")]
    ProbeTooClose(f64),
    /// Membership of a probe in the geometric image could not be decided.
    #[error("image membership ambiguous at {0}")]
    MembershipAmbiguous(String),
    /// A hypothesis of a lemma or of the H-function contract fails for the given input.
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    /// An integrand or evaluator produced a non-finite value.
    #[error("non-finite value: {0}")]
    NonFinite(String),
    /// The run configuration is invalid.
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
