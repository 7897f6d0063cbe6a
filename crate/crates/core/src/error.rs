use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Inconsistent or invalid configuration (shapes, alphabets, geometry).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller-supplied argument is out of its domain.
    #[error("argument error: {0}")]
    Argument(String),

    /// A non-finite value appeared inside the forward pass.
    #[error("numeric error at layer {layer}, neuron {neuron}, position {position}: {detail}")]
    Numeric {
        layer: u32,
        neuron: u32,
        position: usize,
        detail: String,
    },

    /// A statistic that needs at least one observation was requested without any.
    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),

    /// Binary file could not be decoded.
    #[error("parse error at byte offset {offset}: {reason}")]
    Parse { offset: u64, reason: String },

    /// Training loss became non-finite.
    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    /// Two artifacts disagree on model or statistics geometry.
    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Format(String),

    /// Wraps an error with the pipeline stage that produced it.
    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(offset: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            offset: offset as u64,
            reason: reason.into(),
        }
    }

    /// Tag this error with a pipeline stage name.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(format!("csv: {e}"))
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(format!("json: {e}"))
    }
}
