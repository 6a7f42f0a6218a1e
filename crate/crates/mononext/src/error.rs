//! Crate-wide error type.
//!
//! Fallible I/O, parsing and configuration return [`Error`]; violations of
//! in-memory API contracts (shape mismatches, out-of-range class ids,
//! non-finite angles) panic, as is usual for programmer errors.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{file}:{line}: field {field}: {msg}")]
    Parse {
        file: String,
        line: usize,
        field: usize,
        msg: String,
    },

    #[error("{path}: {msg}")]
    Calib { path: PathBuf, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training aborted at step {step} (frames {frame_ids:?}): non-finite loss conf={conf} cls={cls} box={box_} total={total}")]
    NonFiniteLoss {
        step: usize,
        frame_ids: Vec<String>,
        conf: f64,
        cls: f64,
        box_: f64,
        total: f64,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {msg}")]
    Image { path: PathBuf, msg: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
