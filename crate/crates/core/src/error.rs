use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution spec: {0}")]
    InvalidSpec(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("no solution: {0}")]
    NoSolution(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("element state determination did not converge after {iterations} iterations")]
    ElementFailure { iterations: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("infeasible allocation: {0}")]
    Infeasible(String),

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
