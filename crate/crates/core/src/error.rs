use thiserror::Error;

/// Errors raised by estimation, inference, simulation and I/O.
#[derive(Debug, Error)]
pub enum RgivError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("weak instrument: sum of z_t * r_St is {value:e} (scale {scale:e})")]
    WeakInstrument { value: f64, scale: f64 },

    #[error("singular GIV estimand: denominator is zero")]
    SingularEstimand,

    #[error("degenerate regressor: {0}")]
    DegenerateRegressor(String),

    #[error("rank-deficient G'WG (condition number {condition:e}); weakest direction {direction:?}")]
    RankDeficient { condition: f64, direction: Vec<f64> },

    #[error("model is not over-identified: {moments} moments for {params} parameters")]
    NotOverIdentified { moments: usize, params: usize },

    #[error("optimizer inconsistency: restricted objective {restricted:e} below unrestricted {unrestricted:e}")]
    OptimizerInconsistency { restricted: f64, unrestricted: f64 },

    #[error("estimation failed on all {} starts", .0.len())]
    Estimation(Vec<StartDiagnostic>),

    #[error("negative variance {0:e} in delta-method interval")]
    NegativeVariance(f64),

    #[error("unknown scenario '{0}'")]
    UnknownScenario(String),

    #[error("{failed} of {reps} replications failed (limit 1%)")]
    TooManyFailures { failed: usize, reps: usize },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

/// Outcome of a single optimizer start, kept for failure reports.
#[derive(Debug, Clone, PartialEq)]
pub struct StartDiagnostic {
    pub start: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub type Result<T> = std::result::Result<T, RgivError>;

impl RgivError {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            RgivError::Io(_) => 4,
            RgivError::Dimension(_)
            | RgivError::InvalidPanel(_)
            | RgivError::InvalidParameter(_)
            | RgivError::Config(_)
            | RgivError::UnknownScenario(_)
            | RgivError::Parse { .. }
            | RgivError::Csv(_)
            | RgivError::Serde(_) => 2,
            _ => 3,
        }
    }
}
