use std::fmt;

/// Errors shared by the prior, estimator, solver and harness layers.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Fewer than two samples; a sample covariance is undefined.
    InsufficientSamples { got: usize },
    /// Non-finite entries or otherwise unusable numeric input.
    InvalidData(String),
    /// A matrix expected to be symmetric is not, beyond tolerance.
    NotSymmetric { relative_asymmetry: f64 },
    /// A covariance has eigenvalues below the allowed negative tolerance.
    InvalidPrior(String),
    /// Dimension mismatch between operands.
    ShapeError(String),
    /// The innovation matrix (or a row-space Gramian) is numerically singular.
    DegenerateDesign(String),
    /// m exceeds the effective rank of the prior; the optimum is non-unique.
    RankDeficientPrior { m: usize, effective_rank: usize },
    /// The noisy closed form needs an invertible noise covariance.
    SingularNoise,
    /// Subset enumeration would exceed the configured budget.
    CombinatorialBudget { subsets: u128, budget: u128 },
    /// The initial iterate violates the constraint or has a non-finite objective.
    InvalidStart(String),
    /// Every restart of a multi-start solve failed.
    NoFeasibleResult,
    /// No restart converged close enough to a selection matrix.
    PermutationNeighborhood { best_residual: f64 },
    /// Operation called on a design of the wrong mode.
    ModeError(String),
    /// Options are inconsistent with the requested operation.
    InvalidOptions(String),
    /// CSV or JSON input could not be parsed.
    Parse { line: usize, column: usize, message: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InsufficientSamples { got } => {
                write!(f, "insufficient samples: need at least 2, got {got}")
            }
            Error::InvalidData(msg) => write!(f, "invalid data: {msg}"),
            Error::NotSymmetric { relative_asymmetry } => {
                write!(f, "not symmetric: relative asymmetry {relative_asymmetry:.3e}")
            }
            Error::InvalidPrior(msg) => write!(f, "invalid prior: {msg}"),
            Error::ShapeError(msg) => write!(f, "shape error: {msg}"),
            Error::DegenerateDesign(msg) => write!(f, "degenerate design: {msg}"),
            Error::RankDeficientPrior { m, effective_rank } => write!(
                f,
                "rank-deficient prior: m exceeds effective rank (m = {m}, rank = {effective_rank})"
            ),
            Error::SingularNoise => {
                write!(f, "noisy closed form requires SPD R; use noiseless form")
            }
            Error::CombinatorialBudget { subsets, budget } => write!(
                f,
                "combinatorial budget exceeded; use flow solver ({subsets} subsets > budget {budget})"
            ),
            Error::InvalidStart(msg) => write!(f, "invalid start: {msg}"),
            Error::NoFeasibleResult => write!(f, "no feasible result: all starts failed"),
            Error::PermutationNeighborhood { best_residual } => write!(
                f,
                "failed to reach permutation neighborhood: best rounding residual {best_residual:.4}"
            ),
            Error::ModeError(msg) => write!(f, "mode error: {msg}"),
            Error::InvalidOptions(msg) => write!(f, "invalid options: {msg}"),
            Error::Parse { line, column, message } => {
                write!(f, "parse error at line {line}, column {column}: {message}")
            }
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
