use crate::cl::FitResult;

/// Errors reported by the estimation and evaluation routines.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An infinite series or iterative scheme did not converge within its
    /// term budget. Carries the partial sum accumulated so far.
    #[error("series did not converge after {terms} terms (partial sum {partial:e}): {what}")]
    Convergence {
        what: String,
        partial: f64,
        terms: usize,
    },

    /// A caller-supplied argument is invalid (bad shape, empty input, ...).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A linear system is singular or rank deficient.
    #[error("singular system: {0}")]
    Singular(String),

    /// The data admit no meaningful fit (e.g. exact-fit residuals).
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// Malformed or inconsistent input data.
    #[error("data error{}: {what}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Data { line: Option<usize>, what: String },

    /// No admissible point satisfies the stated constraints.
    #[error("infeasible: no point satisfies {}", violated.join(", "))]
    Infeasible { violated: Vec<String> },

    /// Every optimizer start failed to converge. Carries the best run.
    #[error("optimization did not converge from any start (best objective {:e})", best.objective)]
    NonConvergence { best: Box<FitResult> },
}

impl Error {
    pub(crate) fn domain(what: impl Into<String>) -> Self {
        Error::Domain(what.into())
    }

    pub(crate) fn argument(what: impl Into<String>) -> Self {
        Error::Argument(what.into())
    }
}
