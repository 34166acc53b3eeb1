use alloc::string::String;

/// Errors raised by the accounting, channel, simulation and verification code.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A scalar parameter is outside its admissible domain.
    #[error("invalid parameter `{field}`: {reason}")]
    Domain {
        /// Offending field name.
        field: &'static str,
        /// Human readable constraint.
        reason: String,
    },
    /// An accounting query was made before any round was recorded.
    #[error("privacy ledger is empty")]
    EmptyLedger,
    /// Every recorded alignment factor is zero, so nothing was transmitted.
    #[error("no signal transmitted (accumulated gamma is zero); only the delta term applies")]
    NoSignal,
    /// Vector lengths disagree.
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch {
        /// Expected length.
        expected: usize,
        /// Observed length.
        found: usize,
    },
    /// The fading distribution cannot produce positive gains.
    #[error("fading configuration error: {0}")]
    Fading(String),
    /// The initial loss is below the claimed optimum.
    #[error("initial loss {initial} is below the optimal value {optimum}")]
    BelowOptimum {
        /// f(theta_0)
        initial: f64,
        /// f*
        optimum: f64,
    },
    /// Density mass is not negligible at the edge of the quadrature grid.
    #[error("quadrature support too narrow: integrand at grid edge is {edge_ratio:e} of its peak")]
    QuadratureSupport {
        /// Edge-to-peak ratio of the integrand.
        edge_ratio: f64,
    },
    /// Too many sampling outcomes to enumerate exactly.
    #[error("{outcomes} sampling outcomes exceed the enumeration limit of {limit}")]
    OutcomeLimit {
        /// Number of outcomes the instance would need.
        outcomes: u128,
        /// Cap.
        limit: u128,
    },
}

/// Crate result alias.
pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Domain { field, reason: reason.into() }
    }
}
