use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("asset mask is empty")]
    EmptyAsset,

    #[error("invalid attribute `{field}`: {reason}")]
    InvalidAttribute { field: &'static str, reason: String },

    #[error("invalid subgroup: {0}")]
    InvalidSubgroup(String),

    #[error("segmentation failed: {0}")]
    SegmentationFailed(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("stage `{stage}` (backend `{backend}`) failed: {message}")]
    Stage {
        stage: String,
        backend: String,
        message: String,
    },

    #[error("placement failed: {0}")]
    Placement(String),

    #[error("detector `{detector_id}` failed: {message}")]
    Detector { detector_id: String, message: String },

    #[error("subgroup has no matching records: {0}")]
    EmptySubgroup(String),

    #[error("image skipped: {0}")]
    SkipImage(String),

    #[error("report error: {0}")]
    Report(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn stage(stage: impl Into<String>, backend: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            backend: backend.into(),
            message: message.into(),
        }
    }

    pub fn detector(detector_id: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Detector {
            detector_id: detector_id.into(),
            message: message.into(),
        }
    }
}
