use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate support: all quantiles equal {0}")]
    DegenerateSupport(f64),

    #[error("angle {0} degrees is outside [0, 90]")]
    InvalidAngle(f64),

    #[error("link transform produced decreasing knots (drop {0:e} in scaled units)")]
    NonMonotoneResult(f64),

    #[error("density undefined at x = {0} (knot or jump)")]
    UndefinedDensity(f64),

    #[error("trimming fraction {fraction} leaves no forecasts out of {k}")]
    InvalidFraction { fraction: f64, k: usize },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short kebab-case code, stable across releases, for machine consumption.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::DegenerateSupport(_) => "degenerate-support",
            Error::InvalidAngle(_) => "invalid-angle",
            Error::NonMonotoneResult(_) => "non-monotone-result",
            Error::UndefinedDensity(_) => "undefined-density",
            Error::InvalidFraction { .. } => "invalid-fraction",
            Error::InvalidWeights(_) => "invalid-weights",
            Error::Parse { .. } => "parse-error",
            Error::Config(_) => "invalid-config",
            Error::Io(_) => "io-error",
            Error::Json(_) => "json-error",
            Error::Csv(_) => "csv-error",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
