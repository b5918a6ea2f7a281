use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate camera direction: {0}")]
    DegenerateDirection(&'static str),

    #[error("hash grid level {level} out of range (grid has {levels} levels)")]
    LevelOutOfRange { level: usize, levels: usize },

    #[error("position ({0}, {1}, {2}) lies outside the encodable domain")]
    Domain(f64, f64, f64),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("no views given to fit")]
    EmptyViews,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite loss {loss} at inner step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error("model has {params} parameters, second-order meta-gradient is capped at {cap}")]
    ModelTooLarge { params: usize, cap: usize },

    #[error("{steps} unrolled inner steps requested, at most {max} allowed")]
    TooManySteps { steps: usize, max: usize },

    #[error("{frames} frames cannot provide {requested} input views plus a held-out view")]
    TooFewFrames { frames: usize, requested: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed metadata in {path}: {msg}")]
    Metadata { path: PathBuf, msg: String },

    #[error("malformed image {path}: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error("bad checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    #[error("bad report {path}: {msg}")]
    Report { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("scene {scene_id}: {source}")]
    Scene {
        scene_id: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_scene(self, scene_id: &str) -> Self {
        Error::Scene {
            scene_id: scene_id.to_string(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping scene attribution layers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Scene { source, .. } => source.root(),
            other => other,
        }
    }
}
