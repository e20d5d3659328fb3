use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Building model or system matrices are not physically valid.
    #[error("model definition error: {0}")]
    Model(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    /// Iterative solver hit its cap; carries the last relative residual.
    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Caller broke an interface contract (wrong dimension, non-finite input).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Episode lifecycle misuse, e.g. stepping a finished episode.
    #[error("lifecycle error: {0}")]
    Lifecycle(String),

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Short category label, used for wire error codes and CLI exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Model(_) => "model",
            Error::Numerical(_) | Error::NonConvergence { .. } => "numerical",
            Error::Parameter(_) => "parameter",
            Error::Format(_) | Error::Json(_) => "format",
            Error::Config(_) | Error::Io { .. } => "config",
            Error::Contract(_) | Error::Lifecycle(_) => "contract",
            Error::UndefinedRatio(_) => "metrics",
        }
    }

    /// Process exit code for a failed CLI run. 2 is reserved for usage errors.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 3,
            "format" => 4,
            "model" | "parameter" => 5,
            "numerical" => 6,
            "contract" => 7,
            _ => 8,
        }
    }
}
