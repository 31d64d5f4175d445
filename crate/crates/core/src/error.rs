use thiserror::Error;

pub type Result<T> = std::result::Result<T, LrCoxError>;

#[derive(Debug, Error)]
pub enum LrCoxError {
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("input contains non-finite values ({0})")]
    NonFinite(&'static str),

    #[error("linear system is numerically singular ({0}); increase the ridge weight")]
    Singular(&'static str),

    #[error("objective became non-finite at rho = {rho}, iteration {iteration}")]
    NonFiniteObjective { rho: f64, iteration: usize },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("cross-validation failed: {0}")]
    CrossValidation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl LrCoxError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        LrCoxError::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}
