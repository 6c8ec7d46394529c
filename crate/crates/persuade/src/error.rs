use thiserror::Error;

/// Everything that can go wrong while building or solving a problem.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Input data violated a documented invariant. `field` names the offending part.
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    /// A distribution failed the obedience constraint at the given grid time.
    #[error("obedience violated at t = {time} (residual {residual:.3e})")]
    Disobedient { time: f64, residual: f64 },

    /// The linear program has no feasible point.
    #[error("linear program is infeasible")]
    Infeasible,

    /// The linear program is unbounded.
    #[error("linear program is unbounded")]
    Unbounded,

    /// An iterative routine ran out of budget.
    #[error("{what} did not converge: {detail}")]
    NoConvergence { what: String, detail: String },

    /// A closed form was requested outside the region where it exists.
    #[error("outside the domain of {what}: {detail}")]
    Domain { what: String, detail: String },

    /// The operation refuses this input and points at an alternative.
    #[error("refused: {0}")]
    Refused(String),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Error {
        Error::Invalid { field: field.into(), reason: reason.into() }
    }

    pub(crate) fn domain(what: impl Into<String>, detail: impl Into<String>) -> Error {
        Error::Domain { what: what.into(), detail: detail.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
