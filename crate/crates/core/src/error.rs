use thiserror::Error;

/// Errors raised by the pipeline components.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind the camera (camera-frame depth {depth})")]
    BehindCamera { depth: f64 },

    #[error("pixel ({u}, {v}) lies outside the {width}x{height} image")]
    OutOfImage {
        u: f64,
        v: f64,
        width: usize,
        height: usize,
    },

    #[error("point ({}, {}, {}) lies outside the volume bounds", .0[0], .0[1], .0[2])]
    OutOfBounds([f64; 3]),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("ray budget of {requested} exceeds the {available} available pixels")]
    BudgetTooLarge { requested: usize, available: usize },

    #[error("degenerate sampling interval [{near}, {far}]")]
    DegenerateInterval { near: f64, far: f64 },

    #[error("ray does not intersect the feature volume")]
    DegenerateRay,

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("backward called without a recorded forward pass")]
    GraphNotRecorded,

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
