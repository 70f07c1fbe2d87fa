use std::path::PathBuf;

use crate::geometry::FrameId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("malformed TOML in {path}: {message}")]
    Toml { path: PathBuf, message: String },

    #[error("frame mismatch: expected {expected:?}, got {actual:?}")]
    FrameMismatch { expected: FrameId, actual: FrameId },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate rotation rows: {0}")]
    DegenerateRotation(&'static str),

    #[error("hand model error at line {line}: {message}")]
    HandModelParse { line: usize, message: String },

    #[error("invalid hand model: {0}")]
    InvalidModel(String),

    #[error("degenerate calibration geometry: {0}")]
    DegenerateGeometry(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("episode {episode}: frame {frame}: {source}")]
    AtFrame {
        episode: String,
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("episode {episode}: timestamps not strictly increasing at frame {index}")]
    NonMonotonicTime { episode: String, index: usize },

    #[error("invalid episode {episode}: {message}")]
    InvalidEpisode { episode: String, message: String },

    #[error("unsupported format version in {path}: {found}")]
    Version { path: PathBuf, found: String },

    #[error("corrupt file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("cotraining undefined: {0}")]
    EmptyDomain(String),

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("unknown task id: {0}")]
    UnknownTask(String),

    #[error("rubric error: {0}")]
    Rubric(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_frame(episode: &str, frame: usize, source: Error) -> Self {
        Error::AtFrame {
            episode: episode.to_string(),
            frame,
            source: Box::new(source),
        }
    }
}
