use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("scale not resolved by the grid: {constraint} ({detail})")]
    Unresolved {
        constraint: &'static str,
        detail: String,
    },

    #[error("stability condition violated: {0}")]
    Stability(String),

    #[error("paths are not compatible: {0}")]
    PathMismatch(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("query outside the supported domain: {0}")]
    OutOfDomain(String),

    #[error("not enough samples: need at least {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for LabError {
    fn from(e: serde_json::Error) -> Self {
        LabError::Config(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn positive(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(LabError::InvalidParameter {
            name,
            reason: format!("must be finite and > 0, got {value}"),
        })
    }
}
