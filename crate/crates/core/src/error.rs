use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("neighbor search needs at least two points, got {0}")]
    NoNeighbors(usize),

    #[error("point set has no box annotations")]
    MissingBoxes,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("canvas has zero size ({width}x{height})")]
    EmptyCanvas { width: usize, height: usize },

    #[error("no data: {0}")]
    NoData(String),

    #[error("ground-truth map is all zero, peak is undefined")]
    UndefinedPeak,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    /// Stable variant name, used by front ends that surface errors by kind.
    pub fn name(&self) -> &'static str {
        match self {
            Error::NoNeighbors(_) => "NoNeighbors",
            Error::MissingBoxes => "MissingBoxes",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::EmptyCanvas { .. } => "EmptyCanvas",
            Error::NoData(_) => "NoData",
            Error::UndefinedPeak => "UndefinedPeak",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::NotScalar(_) => "NotScalar",
            Error::InvalidAnnotation(_) => "InvalidAnnotation",
            Error::Format(_) => "Format",
            Error::Json(_) => "Json",
            Error::Io(_) => "Io",
        }
    }
}
