//! Error type shared by all modules of the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by estimators, filters and the experiment harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input failed a structural precondition (shape, finiteness, parameter range).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Row `row` has zero sample variance, so correlations involving it are undefined.
    #[error("row {row} has zero variance")]
    ZeroVariance { row: usize },

    /// Diagonal entry `index` is not strictly positive, so the matrix cannot be
    /// renormalized to a correlation matrix.
    #[error("diagonal entry {index} is not strictly positive ({value})")]
    NonpositiveDiagonal { index: usize, value: f64 },

    /// The iterative eigenvalue kernel did not converge.
    #[error("eigendecomposition failed to converge: {detail}")]
    ConvergenceFailure { detail: String },

    /// Covariance matrix is numerically singular; `condition` is the ratio of the
    /// largest to the smallest eigenvalue magnitude.
    #[error("covariance matrix is numerically singular (condition number {condition:.3e})")]
    SingularCovariance { condition: f64 },

    /// A bootstrap copy kept producing zero-variance rows after exhausting redraws.
    #[error("bootstrap {bootstrap} degenerate after {attempts} redraws")]
    DegenerateBootstrap { bootstrap: usize, attempts: usize },

    /// An eigenvalue required to be positive was not.
    #[error("nonpositive eigenvalue {value} at rank {rank}")]
    NonpositiveEigenvalue { rank: usize, value: f64 },

    /// A cophenetic matrix is constant, so its correlation with another is undefined.
    #[error("cophenetic matrix is constant; correlation undefined")]
    DegenerateCophenetic,

    /// Not enough observations for the requested operation.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// The long-only solver hit its iteration cap; carries the best feasible
    /// iterate found and its KKT residual.
    #[error("quadratic program did not converge (kkt residual {kkt_residual:.3e})")]
    QpNonConvergence {
        kkt_residual: f64,
        best_weights: Vec<f64>,
    },

    /// A price required to be strictly positive was not.
    #[error("nonpositive price for asset {asset} at column {column}: {value}")]
    NonpositivePrice {
        asset: usize,
        column: usize,
        value: f64,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
