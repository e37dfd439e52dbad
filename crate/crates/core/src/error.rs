use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor or layer received data of the wrong shape.
    #[error("shape error in layer {layer}: {msg}")]
    Shape { layer: usize, msg: String },

    #[error("invalid input: {0}")]
    Input(String),

    /// Operation called out of order (e.g. backward before forward).
    #[error("invalid state: {0}")]
    State(String),

    /// Config validation failure; `path` is the dotted key path.
    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("infeasible sparsity target: {0}")]
    Infeasible(String),

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("non-finite training loss {loss} at step {step} (phase {phase}, cycle {cycle})")]
    Diverged {
        step: u64,
        phase: String,
        cycle: u32,
        loss: f64,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
