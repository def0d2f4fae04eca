
/// Errors raised by validation, assembly and analysis.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("negative rate in {what} at ({row}, {col}): {value}")]
    NegativeRate { what: String, row: usize, col: usize, value: f64 },
    #[error("row {row} of C + D sums to {residual:e}")]
    RowSumNonzero { row: usize, residual: f64 },
    #[error("generator is reducible: phase {unreachable} not reachable from phase 0")]
    ReducibleGenerator { unreachable: usize },
    #[error("singular linear system: {0}")]
    SingularSolve(String),
    #[error("negative probability {value} at index {index}")]
    NegativeProbability { index: usize, value: f64 },
    #[error("initial vector sums to {sum}")]
    BetaSumNotOne { sum: f64 },
    #[error("invalid subgenerator: {0}")]
    InvalidSubgenerator(String),
    #[error("subgenerator is singular")]
    SingularH,
    #[error("K must be at least 1, got {0}")]
    InvalidK(usize),
    #[error("composite {name} row {row} sums to {residual:e}")]
    GeneratorRowSumNonzero { name: String, row: usize, residual: f64 },
    #[error("{name} is not row-stochastic at row {row} (sum {sum})")]
    NonStochasticU { name: String, row: usize, sum: f64 },
    #[error("{name} has negative off-diagonal entry {value} at ({row}, {col})")]
    NegativeOffDiagonal { name: String, row: usize, col: usize, value: f64 },
    #[error("states {from:?} and {to:?} are more than one step apart")]
    SkipFreeViolation { from: [usize; 4], to: [usize; 4] },
    #[error("nu = {nu} is below the largest exit rate {required}")]
    NuTooSmall { nu: f64, required: f64 },
    #[error("saturated subset must be nonempty")]
    EmptySubset,
    #[error("induced chain {subset} not converged: {detail}")]
    NotConverged { subset: String, detail: String },
    #[error("subset {0} is not one of N, 123, 134, 14, 23")]
    UnsupportedSubset(String),
    #[error("closed form unavailable: {0}")]
    ClosedFormUnavailable(String),
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("sign condition violated: {0}")]
    SignConditionViolated(String),
    #[error("no certificate found down to epsilon = {epsilon:e}, delta = {delta:e}")]
    CertificateNotFound { epsilon: f64, delta: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors that reject model input (as opposed to analysis outcomes).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch(_)
                | Error::NegativeRate { .. }
                | Error::RowSumNonzero { .. }
                | Error::ReducibleGenerator { .. }
                | Error::NegativeProbability { .. }
                | Error::BetaSumNotOne { .. }
                | Error::InvalidSubgenerator(_)
                | Error::SingularH
                | Error::InvalidK(_)
                | Error::GeneratorRowSumNonzero { .. }
                | Error::NonStochasticU { .. }
                | Error::NegativeOffDiagonal { .. }
                | Error::InvalidArgument(_)
        )
    }
}
