use thiserror::Error;

/// Errors raised across the solvers, the data pipeline and the experiment drivers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("support {support:?} is rank deficient")]
    RankDeficient { support: Vec<usize> },

    #[error("column {column} is collinear with the current support")]
    Collinear { column: usize },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("iteration diverged after {iterations} steps (sse {sse:.3e})")]
    Diverged { iterations: usize, sse: f64 },

    #[error("coordinate descent did not converge at lambda {lambda:.6e}")]
    NonConvergence { lambda: f64 },

    #[error("invalid subset size {k}: {reason}")]
    InvalidK { k: usize, reason: String },

    #[error("insufficient history: need {needed} usable rows, have {available}")]
    InsufficientHistory { needed: usize, available: usize },

    #[error("column {0} has too few observed entries")]
    TooSparseColumn(String),

    #[error("missing or malformed transform-code row: {0}")]
    MissingTransformRow(String),

    #[error("dates are not strictly increasing monthly at row {row}")]
    NonMonotoneDates { row: usize },

    #[error("unparseable cell at row {row}, column {col}: {value:?}")]
    UnparseableCell { row: usize, col: usize, value: String },

    #[error("series {series} has a non-positive value at index {t} for a log transform")]
    NonPositiveForLog { series: String, t: usize },

    #[error("target series {0} not present")]
    TargetMissing(String),

    #[error("invalid config field `{field}`: {reason}")]
    ConfigInvalid { field: String, reason: String },

    #[error("input missing: {0}")]
    InputMissing(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl Error {
    /// Short machine-readable tag used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "InvalidInput",
            Error::RankDeficient { .. } => "RankDeficient",
            Error::Collinear { .. } => "Collinear",
            Error::NotApplicable(_) => "NotApplicable",
            Error::Diverged { .. } => "Diverged",
            Error::NonConvergence { .. } => "NonConvergence",
            Error::InvalidK { .. } => "InvalidK",
            Error::InsufficientHistory { .. } => "InsufficientHistory",
            Error::TooSparseColumn(_) => "TooSparseColumn",
            Error::MissingTransformRow(_) => "MissingTransformRow",
            Error::NonMonotoneDates { .. } => "NonMonotoneDates",
            Error::UnparseableCell { .. } => "UnparseableCell",
            Error::NonPositiveForLog { .. } => "NonPositiveForLog",
            Error::TargetMissing(_) => "TargetMissing",
            Error::ConfigInvalid { .. } => "ConfigInvalid",
            Error::InputMissing(_) => "InputMissing",
            Error::Io(_) => "Io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
