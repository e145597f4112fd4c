use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error(transparent)]
    Core(#[from] hmc_kappa::Error),
    #[error("y_true has zero variance")]
    ZeroVariance,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot parse {what}: {detail}")]
    Parse { what: String, detail: String },
}

impl LabError {
    /// Stable snake_case name used in the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            LabError::Core(e) => e.kind(),
            LabError::ZeroVariance => "zero_variance",
            LabError::InvalidConfig(_) => "invalid_config",
            LabError::Io(_) => "io",
            LabError::Csv(_) => "csv",
            LabError::Json(_) => "json",
            LabError::Parse { .. } => "parse",
        }
    }
}
