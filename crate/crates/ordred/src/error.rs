//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by model construction, estimation, and reduction.
#[derive(Debug, Error)]
pub enum Error {
    /// A declared predictor column has fewer than two observed levels, or
    /// its values cannot be read as ordinal codes.
    #[error("column '{column}' is not an ordinal predictor: {reason}")]
    NonOrdinalColumn { column: String, reason: String },

    /// A cell of the input table is empty or unparseable.
    #[error("missing value in column '{column}', row {row}")]
    MissingValue { column: String, row: usize },

    /// A column named in the schema does not exist in the input table.
    #[error("unknown column '{column}'")]
    UnknownColumn { column: String },

    /// The centered basis matrix has (numerically) dependent columns.
    #[error("degenerate basis: {0}")]
    DegenerateBasis(String),

    /// A response slice received no observations.
    #[error("empty slice: {0}")]
    InvalidSlice(String),

    /// The probability of a truncation cell underflowed even in the log
    /// domain.
    #[error("truncation cell [{lower}, {upper}] has vanishing probability")]
    EmptyCell { lower: f64, upper: f64 },

    /// Rejection sampling acceptance rate fell below the workable floor.
    #[error("sampling budget exhausted: acceptance rate {rate:.3e}")]
    BudgetExhausted { rate: f64 },

    /// The sample marginal covariance is rank-deficient and ridging is
    /// disabled.
    #[error("singular covariance: smallest eigenvalue {min_eig:.3e}")]
    SingularCovariance { min_eig: f64 },

    /// A cumulative level count is 0 or n, so the threshold equation has no
    /// root. Carries enough context for the caller to merge levels.
    #[error("level {level} of predictor {predictor} not observed")]
    LevelNotObserved { predictor: usize, level: usize },

    /// The projected residual matrix is numerically singular in the M-step.
    #[error("near-singular residual matrix: condition number {cond:.3e}")]
    NearSingularResidual { cond: f64 },

    /// The group-lasso penalty removed every row; carries the zero pattern
    /// so a path driver can record the extinction point.
    #[error("penalty lambda={lambda} removed all rows of alpha")]
    AllRowsKilled { lambda: f64 },

    /// Every posterior mixture weight underflowed even in the log domain.
    #[error("all posterior weights underflowed")]
    AllWeightsUnderflow,

    /// A single-index output was requested from a model with d != 1.
    #[error("ses index requires d = 1, model has d = {d}")]
    DimensionNotOne { d: usize },

    /// A normalization step received a constant vector.
    #[error("zero variance: {0}")]
    ZeroVariance(String),

    /// A subspace argument does not have full column rank.
    #[error("rank deficient matrix: {0}")]
    RankDeficient(String),

    /// A distance-correlation block has zero distance variance.
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    /// Invalid argument or inconsistent dimensions.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Numerical failure not covered by a more specific variant.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Failure with dataset/iteration context attached by the fit driver.
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// Wrap with a human-readable context string (iteration, observation...).
    pub fn with_context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Whether the error stems from invalid user input rather than a
    /// numerical failure. Drives the CLI exit code.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::NonOrdinalColumn { .. }
            | Error::MissingValue { .. }
            | Error::UnknownColumn { .. }
            | Error::Invalid(_)
            | Error::DimensionNotOne { .. } => true,
            Error::Context { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
