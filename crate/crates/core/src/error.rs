use thiserror::Error;

/// A single problem found while validating a dataset.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("missing column `{column}`")]
    MissingColumn { column: String },
    #[error("non-finite value in column `{column}` at row {row}")]
    NonFiniteValue { column: String, row: usize },
    #[error("subject {subject}: time index {time} {problem}")]
    DuplicateSubjectTime {
        subject: i64,
        time: i64,
        problem: String,
    },
    #[error("role conflict on `{column}`: {reason}")]
    RoleConflict { column: String, reason: String },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset validation failed: {}", join(.0))]
    Validation(Vec<Violation>),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("all weights are zero")]
    AllZeroWeights,

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("response has a single class; logistic regression needs both 0 and 1")]
    SingleClassResponse,

    #[error("response must be coded 0/1 (column `{0}`)")]
    NonBinary(String),

    #[error("invalid DGP specification: {0}")]
    InvalidSpec(String),

    #[error("degenerate probability: {0}")]
    DegenerateProbability(String),

    #[error("invalid joint law: {0}")]
    InvalidLaw(String),

    #[error("conditioning event has zero probability: {0}")]
    ZeroMassCell(String),

    #[error("weak proxy: W-Z association {association:.3e} is below tolerance")]
    WeakProxy { association: f64 },

    #[error("bridge equation has no solution (residual {residual:.3e})")]
    NoSolution { residual: f64 },

    #[error("optimizer did not converge (gradient norm {gradient_norm:.3e})")]
    OptimizerNotConverged { gradient_norm: f64 },

    #[error("layout error: {0}")]
    Layout(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("no candidate proxies supplied")]
    EmptyCandidates,

    #[error("{failed} of {total} bootstrap replicates failed")]
    TooManyFailedReplicates { failed: usize, total: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn join(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
