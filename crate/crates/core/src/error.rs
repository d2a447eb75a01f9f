use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: event ({u}, {v}) outside {width}x{height} sensor")]
    OutOfBounds {
        line: usize,
        u: u32,
        v: u32,
        width: u32,
        height: u32,
    },

    #[error("timestamp regression: {got}us after {last}us")]
    Ordering { last: i64, got: i64 },

    #[error("ground truth format: {0}")]
    Format(String),

    #[error("cannot finalize a surface that has received no events")]
    EmptyFrame,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("grid {p}x{q} of {r}px cells does not fit a {width}x{height} image")]
    GridSpec {
        p: usize,
        q: usize,
        r: usize,
        width: u32,
        height: u32,
    },

    #[error("calibration needs at least two samples, got {0}")]
    TooFewSamples(usize),

    #[error("calibration samples have zero spread; interval is degenerate")]
    DegenerateInterval,

    #[error("unsupported significance level {0}; the embedded table covers 0.05 and 0.01")]
    UnsupportedSignificance(f64),

    #[error("phi is only defined for positive arguments, got {0}")]
    Domain(f64),

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("scene script: {0}")]
    Script(String),

    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    IoBare(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
