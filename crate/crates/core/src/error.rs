use thiserror::Error;

/// Errors produced by panel construction, estimation and the supporting
/// modules.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MplError {
    #[error("duplicate record for entity `{entity}` in period `{period}`")]
    DuplicateCell { entity: String, period: String },

    #[error(
        "record for entity `{entity}` in period `{period}` has a non-positive quantity or value"
    )]
    NonPositiveRecord { entity: String, period: String },

    #[error("at least two periods are required, found {0}")]
    TooFewPeriods(usize),

    #[error("no entity is present in the number of periods the basket requires")]
    EmptyBasket,

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("covariance block is not positive definite: {0}")]
    SingularBlock(String),

    #[error("entity {entity} has no present residual to estimate its variance")]
    DegenerateResiduals { entity: usize },

    #[error("singular estimation kernel: {0}")]
    SingularKernel(String),

    #[error("stale estimate: {0}")]
    StaleEstimate(String),

    #[error("no commodity is present in both periods")]
    AllWeightsZero,

    #[error("index denominator is zero")]
    ZeroDenominator,

    #[error("weighted norm of the base price vector is zero")]
    DegenerateNorm,

    #[error("design matrix is rank deficient: {0}")]
    RankDeficientDesign(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("cell ({entity}, {period}) is outside a {rows}x{cols} panel")]
    OutOfRange {
        entity: usize,
        period: usize,
        rows: usize,
        cols: usize,
    },

    #[error("normal equations of the stacked system are singular")]
    SingularNormalEquations,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl MplError {
    /// True for errors caused by a numerically singular or rank deficient
    /// system rather than by malformed input.
    pub fn is_singular(&self) -> bool {
        matches!(
            self,
            MplError::SingularBlock(_)
                | MplError::SingularKernel(_)
                | MplError::SingularNormalEquations
                | MplError::RankDeficientDesign(_)
                | MplError::DegenerateResiduals { .. }
                | MplError::AllWeightsZero
                | MplError::ZeroDenominator
                | MplError::DegenerateNorm
        )
    }
}

pub type Result<T> = std::result::Result<T, MplError>;
