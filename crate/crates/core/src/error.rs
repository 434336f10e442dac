use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box ({x1},{y1})-({x2},{y2}) at frame {frame}")]
    InvalidBox {
        frame: u32,
        x1: u32,
        y1: u32,
        x2: u32,
        y2: u32,
    },

    #[error("score {value} at index {index} is outside [0, 1]")]
    ScoreOutOfRange { index: usize, value: f64 },

    #[error("score vector has length {got}, expected {expected}")]
    ScoreLength { expected: usize, got: usize },

    #[error("malformed track: {0}")]
    InvalidTrack(String),

    #[error("volume dimensions differ: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize, usize),
        right: (usize, usize, usize),
    },

    #[error("volume of {dims:?} needs {expected} values, got {got}")]
    VolumeLength {
        dims: (usize, usize, usize),
        expected: usize,
        got: usize,
    },

    #[error("value {value} at offset {offset} is outside [0, 1]")]
    ProbabilityOutOfRange { offset: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("pyramid level mismatch: {0}")]
    Pyramid(String),

    #[error("no score for tubelet {0}")]
    UnknownTubelet(String),

    #[error("tubelet starting at frame {got} arrived after one starting at frame {previous}")]
    OutOfOrder { previous: u32, got: u32 },

    #[error("ground truth set is empty")]
    EmptyGroundTruth,

    #[error("missing mask for clip {index} of video {video}")]
    MissingClip { video: String, index: usize },

    #[error("malformed mask header at byte {offset}: {reason}")]
    MaskHeader { offset: usize, reason: String },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error("{0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
