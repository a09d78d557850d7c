use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the analysis pipeline.
///
/// Every variant carries a stable, module-qualified code (see [`Error::code`])
/// and maps onto one of three process exit classes (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot open {path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("row {row}, column {column}: cannot parse {value:?}")]
    Parse {
        row: usize,
        column: usize,
        value: String,
    },

    #[error("malformed input: {0}")]
    Format(String),

    #[error("non-uniform sample spacing at row {row}: expected {expected}s, found {found}s")]
    Spacing { row: usize, expected: f64, found: f64 },

    #[error("insufficient data: need at least {needed} samples, found {found}")]
    InsufficientData { needed: usize, found: usize },

    #[error("invalid range: {0}")]
    Range(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("nonpositive or non-finite bandwidth {value} for pair ({i}, {j})")]
    Bandwidth { i: usize, j: usize, value: f64 },

    #[error("point {0} has no positive kernel entry")]
    IsolatedPoint(usize),

    #[error("eigen-solver failure: {message} (max residual {max_residual:e})")]
    Solver {
        message: String,
        max_residual: f64,
        residuals: Vec<f64>,
    },

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("only {available} finite eigenvalues available, {requested} requested")]
    Truncation { requested: usize, available: usize },

    #[error("eigenfunction {index} is ill-conditioned for extension: {reason}")]
    IllConditioned { index: usize, reason: String },

    #[error("incomplete delay history: need {needed} samples, got {found}")]
    History { needed: usize, found: usize },

    #[error("mode set is not closed under conjugation: {0}")]
    Pairing(String),

    #[error("least-squares fit failed: {0}")]
    Fit(String),

    #[error("forecast diverged at step {step}")]
    Divergence { step: usize },

    #[error("serialization error: {0}")]
    Serialize(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable identifier of the form `<module>/<kind>`.
    pub fn code(&self) -> &'static str {
        match self {
            Error::File { .. } => "data-io/file",
            Error::Io(_) => "data-io/io",
            Error::Parse { .. } => "data-io/parse",
            Error::Format(_) => "data-io/format",
            Error::Spacing { .. } => "data-io/spacing",
            Error::InsufficientData { .. } => "data-io/insufficient-data",
            Error::Range(_) => "data-io/range",
            Error::Alignment(_) => "data-io/alignment",
            Error::Config(_) => "config/invalid",
            Error::Bandwidth { .. } => "embedding-kernel/bandwidth",
            Error::IsolatedPoint(_) => "embedding-kernel/isolated-point",
            Error::Solver { .. } => "koopman-spectral/solver",
            Error::DegenerateSpectrum(_) => "koopman-spectral/degenerate-spectrum",
            Error::Truncation { .. } => "koopman-spectral/truncation",
            Error::IllConditioned { .. } => "koopman-spectral/ill-conditioned",
            Error::History { .. } => "koopman-spectral/history",
            Error::Pairing(_) => "spatiotemporal/pairing",
            Error::Fit(_) => "forecast/fit",
            Error::Divergence { .. } => "forecast/divergence",
            Error::Serialize(_) => "data-io/serialize",
        }
    }

    /// Process exit status: 2 configuration, 3 data, 4 solver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::File { .. }
            | Error::Io(_)
            | Error::Parse { .. }
            | Error::Format(_)
            | Error::Spacing { .. }
            | Error::InsufficientData { .. }
            | Error::Range(_)
            | Error::Alignment(_)
            | Error::History { .. }
            | Error::Serialize(_) => 3,
            Error::Bandwidth { .. }
            | Error::IsolatedPoint(_)
            | Error::Solver { .. }
            | Error::DegenerateSpectrum(_)
            | Error::Truncation { .. }
            | Error::IllConditioned { .. }
            | Error::Pairing(_)
            | Error::Fit(_)
            | Error::Divergence { .. } => 4,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Format(err.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Serialize(err.to_string())
    }
}
