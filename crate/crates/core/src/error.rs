use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("probability map not normalized: pixel ({x}, {y}) sums to {sum} (deviation {deviation:.3e})")]
    Normalization {
        x: usize,
        y: usize,
        sum: f64,
        deviation: f64,
    },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("invalid label {label} at pixel {index}")]
    InvalidLabel { label: u8, index: usize },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("sample {0} has no mask")]
    MissingLabels(u64),

    #[error("source dataset is empty")]
    MissingSourceData,

    #[error("unknown image id {0}")]
    UnknownImage(u64),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset format error in {path}: {message}")]
    Format { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Stable machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Normalization { .. } => "normalization",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::InvalidLabel { .. } => "invalid_label",
            Error::Geometry(_) => "geometry",
            Error::EmptyDataset => "empty_dataset",
            Error::MissingLabels(_) => "missing_labels",
            Error::MissingSourceData => "missing_source_data",
            Error::UnknownImage(_) => "unknown_image",
            Error::InvalidSplit(_) => "invalid_split",
            Error::Config(_) => "config",
            Error::Format { .. } => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Image(_) => "image",
        }
    }
}
