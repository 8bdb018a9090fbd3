use thiserror::Error;

/// Errors shared by all engines in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A scenario process carries non-finite values, inconsistent grids, or
    /// values outside its claimed ambiguity set.
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    /// A configuration document or parameter set failed validation.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Two sequences that must share a time grid do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A matrix that must be invertible is numerically singular.
    #[error("singular matrix while computing {context}")]
    SingularMatrix { context: &'static str },

    /// Inputs outside the mathematical domain of an operation
    /// (e.g. nonpositive consumption with a negative power felicity).
    #[error("domain error: {0}")]
    Domain(String),

    /// The explicit finite-difference scheme is unstable on the requested grid.
    #[error(
        "explicit scheme violates the stability bound; \
         use at least {suggested_n_time} time steps or the implicit scheme"
    )]
    CflViolation { suggested_n_time: usize },

    /// A candidate measure failed the dynamic-minimizer verification.
    #[error("dynamic minimizer check failed: max conditional gap {max_gap:.3e} at t = {at_time}")]
    MinimizerCheck { max_gap: f64, at_time: f64 },

    /// Black-Scholes implied-volatility inversion failed.
    #[error("implied volatility inversion failed: {0}")]
    ImpliedVol(String),

    /// A Monte-Carlo bound was requested over an empty scenario family.
    #[error("scenario family is empty")]
    EmptyFamily,

    /// A query point lies outside the solved grid.
    #[error("point (t = {t}, s = {s}) lies outside the solved grid")]
    OutsideGrid { t: f64, s: f64 },

    /// The supergradient weight exp(int f_v ds) is not deterministic for this
    /// plan, so a node-indexed supergradient does not exist on the lattice.
    #[error("supergradient is path-dependent: f_v varies across layer nodes by {spread:.3e}")]
    PathDependentSupergradient { spread: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed JSON document: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
