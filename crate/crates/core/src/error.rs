use thiserror::Error;

pub type Result<T> = std::result::Result<T, EamlError>;

#[derive(Debug, Error)]
pub enum EamlError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    /// Malformed or degenerate input data.
    #[error("data error: {0}")]
    Data(String),

    /// A parameter outside its admissible range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The solver hit its sweep budget; carries the objective trace so far.
    #[error("solver did not converge within {sweeps} sweeps (last objective {:?})", loss_trace.last())]
    NonConvergence { sweeps: usize, loss_trace: Vec<f64> },
}

impl EamlError {
    pub fn data(msg: impl Into<String>) -> Self {
        EamlError::Data(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        EamlError::InvalidArgument(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        EamlError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code used by the command line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            EamlError::InvalidArgument(_) => 2,
            EamlError::NonConvergence { .. } => 4,
            _ => 3,
        }
    }
}
