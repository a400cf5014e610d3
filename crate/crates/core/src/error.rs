use thiserror::Error;

pub type Result<T> = std::result::Result<T, MsgwrError>;

#[derive(Debug, Error)]
pub enum MsgwrError {
    /// Malformed or invalid input data.
    #[error("input error: {0}")]
    Input(String),

    /// A parameter outside its admissible range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// The local normal system at a regression point is numerically singular.
    #[error("singular local system at point {point}: reciprocal condition {rcond:.3e}")]
    Singular { point: usize, rcond: f64 },

    /// No feasible scale could be found.
    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// A statistic is undefined for the given input (constant residuals, zero TSS, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl MsgwrError {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            MsgwrError::Singular { .. } | MsgwrError::Calibration(_) | MsgwrError::Numeric(_) => 3,
            _ => 2,
        }
    }
}
