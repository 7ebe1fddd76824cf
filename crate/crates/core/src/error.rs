use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the odometry library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not a rotation (orthonormality deviation {deviation:.3e})")]
    NotOrthonormal { deviation: f64 },

    #[error("timestamps not strictly increasing at sample {index} ({prev} -> {next})")]
    NonMonotonicTime { index: usize, prev: f64, next: f64 },

    #[error("imu step of {dt} s exceeds the 0.1 s limit")]
    StepTooLong { dt: f64 },

    #[error("need at least {needed} imu samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("point with zero range has no smoothness")]
    ZeroRange,

    #[error("smoothness window around index {index} leaves the ring (len {len}, half window {half_window})")]
    WindowOutOfRing {
        index: usize,
        len: usize,
        half_window: usize,
    },

    #[error("no timestamp pairs within {max_dt} s")]
    NoPairs { max_dt: f64 },

    #[error("{path}: malformed record at byte offset {offset}: {reason}")]
    Malformed {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("imu samples do not cover [{t0:.3}, {t1:.3}] s")]
    ImuCoverage { t0: f64, t1: f64 },

    #[error("sensor stream gap of {gap:.3} s before t = {at:.3} exceeds {limit} s")]
    StreamGap { gap: f64, at: f64, limit: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
