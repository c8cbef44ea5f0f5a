use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library. Shape mismatches inside the autodiff engine
/// panic instead (they are programming errors); everything reachable from user
/// input ends up here.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("unknown scene profile `{0}` (valid profiles: plane, two_object_occlusion, street, random)")]
    UnknownProfile(String),

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("cannot partition {0} frame(s) into loss and render sets (need at least 2)")]
    TooFewFrames(usize),

    #[error("density model has no input image; call set_input first")]
    MissingInput,

    #[error("no valid pixels to evaluate")]
    NoValidPixels,

    #[error("bad checkpoint magic {0:?} (expected \"BTSF\")")]
    BadMagic([u8; 4]),

    #[error("checkpoint version {found} is not supported (this build reads version {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("malformed {format} file {path}: {reason}")]
    MalformedFile {
        format: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(u64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("png encoding failed: {0}")]
    Png(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
