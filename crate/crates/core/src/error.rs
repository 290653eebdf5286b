use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{0}")]
    Usage(String),

    #[error("no records match {0}")]
    EmptySeries(String),

    #[error("insufficient data: need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("missing covariate: {0}")]
    MissingCovariate(String),

    #[error("collinear design: {0}")]
    Collinearity(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("all candidate models failed: {0}")]
    ModelFailure(String),

    #[error("{model}: {source}")]
    Model {
        model: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn in_model(self, model: impl Into<String>) -> Self {
        Error::Model {
            model: model.into(),
            source: Box::new(self),
        }
    }

    /// Short machine-readable reason code.
    pub fn reason(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse-error",
            Error::Usage(_) => "usage",
            Error::EmptySeries(_) => "empty-series",
            Error::InsufficientData { .. } => "insufficient-data",
            Error::DegenerateSeries(_) => "degenerate-series",
            Error::MissingCovariate(_) => "missing-covariate",
            Error::Collinearity(_) => "collinearity",
            Error::Shape(_) => "shape-mismatch",
            Error::Range(_) => "range",
            Error::Numeric(_) => "numeric",
            Error::ModelFailure(_) => "model-failure",
            Error::Model { source, .. } => source.reason(),
            Error::Invalid(_) => "invalid-value",
            Error::Io(_) => "io",
        }
    }

    /// Process exit code: 64 usage, 65 data or model error, 70 internal numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 64,
            Error::Numeric(_) => 70,
            Error::Model { source, .. } => source.exit_code(),
            _ => 65,
        }
    }
}
