use thiserror::Error;

pub type Result<T> = std::result::Result<T, CgfError>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CgfError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("incomplete input: missing {0}")]
    IncompleteInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("empty data")]
    EmptyData,

    #[error("matrix is singular or not positive definite: {0}")]
    Singular(String),

    #[error("saddlepoint solve did not converge after {iterations} iterations (residual {residual:e}, last iterate {last:?})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
    },

    #[error("quadrature did not converge: coarse {coarse}, refined {fine}")]
    QuadratureNotConverged { coarse: f64, fine: f64 },

    #[error("cumulant of order {order} needs coefficient c_{needed}, model has {available}")]
    InsufficientCoefficients {
        order: usize,
        needed: usize,
        available: usize,
    },

    #[error("index sets overlap at index {0}")]
    OverlappingSets(usize),

    #[error("invalid aggregation map: {0}")]
    InvalidAggregation(String),

    #[error("column {column} is constant")]
    ConstantColumn { column: usize },

    #[error("Kendall's tau is undefined: {0}")]
    UndefinedTau(String),

    #[error("gamma mixture fit failed, best max relative residual {residual:e}")]
    FitFailure { residual: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("invalid simulation plan: {0}")]
    InvalidPlan(String),

    #[error("need at least {needed} observations for block size {block}, got {found}")]
    TooFewBlocks { block: usize, needed: usize, found: usize },
}

impl CgfError {
    /// True for failures of a numerical procedure (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            CgfError::Singular(_)
                | CgfError::NonConvergence { .. }
                | CgfError::QuadratureNotConverged { .. }
                | CgfError::FitFailure { .. }
                | CgfError::InsufficientCoefficients { .. }
        )
    }
}
