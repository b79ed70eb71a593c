use alloc::string::String;

/// Errors raised by model construction and the numerical operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("decoded length of bone {bone} is {length} mm (must be > 0)")]
    NonPositiveBoneLength { bone: usize, length: f64 },
    #[error("point at depth {z} mm is not in front of the camera")]
    BehindCamera { z: f64 },
    #[error("no valid depth pixel falls inside the crop cube")]
    EmptyCrop,
    #[error("image encoding has no blobs")]
    EmptyImage,
    #[error("2D joint target {joint} needs camera intrinsics")]
    MissingIntrinsics { joint: usize },
    #[error("neither image blobs nor joint targets were provided")]
    NoSignal,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("all vectors are identical; clustering is degenerate")]
    DegenerateClusters,
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Stable machine-readable name of the error variant.
    pub fn class(&self) -> &'static str {
        match self {
            Error::NonPositiveBoneLength { .. } => "NonPositiveBoneLength",
            Error::BehindCamera { .. } => "BehindCamera",
            Error::EmptyCrop => "EmptyCrop",
            Error::EmptyImage => "EmptyImage",
            Error::MissingIntrinsics { .. } => "MissingIntrinsics",
            Error::NoSignal => "NoSignal",
            Error::EmptyCloud => "EmptyCloud",
            Error::DegenerateClusters => "DegenerateClusters",
            Error::Validation { .. } => "ValidationError",
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
