//! Crate-wide error type.

use thiserror::Error;

/// Coarse classification used by callers (the CLI maps these to exit codes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Malformed, inconsistent, or missing input data.
    Data,
    /// A numeric procedure failed or its preconditions do not hold.
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("degenerate pose: {0}")]
    DegeneratePose(String),

    #[error("point is behind the camera (depth {depth_mm} mm)")]
    BehindCamera { depth_mm: f64 },

    #[error("no usable observations: {0}")]
    NoObservations(String),

    #[error("insufficient views for triangulation: got {got}, need at least 2")]
    InsufficientViews { got: usize },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("underdetermined fit: {observed} observed joints, need at least {needed}")]
    Underdetermined { observed: usize, needed: usize },

    #[error("prior required but not provided (prior weight is {lambda})")]
    MissingPrior { lambda: f64 },

    #[error("degenerate registration: {0}")]
    RegistrationDegenerate(String),

    #[error("degenerate ground truth: {0}")]
    DegenerateTruth(String),

    #[error("no periodicity detected: {0}")]
    NoPeriodicity(String),

    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("missing pipeline stage: {0}")]
    StageMissing(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether this error reflects bad input data versus a numeric failure.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::ShapeMismatch(_)
            | Error::InvalidSkeleton(_)
            | Error::InvalidCamera(_)
            | Error::InvalidSpec(_)
            | Error::Format(_)
            | Error::FormatVersion { .. }
            | Error::StageMissing(_)
            | Error::NoObservations(_)
            | Error::InsufficientData(_)
            | Error::InsufficientViews { .. }
            | Error::Underdetermined { .. }
            | Error::MissingPrior { .. }
            | Error::Io(_) => ErrorCategory::Data,
            Error::NonFinite(_)
            | Error::DegeneratePose(_)
            | Error::BehindCamera { .. }
            | Error::DegenerateGeometry(_)
            | Error::RegistrationDegenerate(_)
            | Error::DegenerateTruth(_)
            | Error::NoPeriodicity(_) => ErrorCategory::Numeric,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
