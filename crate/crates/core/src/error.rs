use std::path::PathBuf;

use thiserror::Error;

/// Every failure the pipeline can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt image data: {0}")]
    CorruptData(String),
    #[error("box {box_:?} lies outside a {width}x{height} image")]
    OutOfBounds {
        box_: crate::image::BoundingBox,
        width: usize,
        height: usize,
    },
    #[error("image too small: {0}")]
    ImageTooSmall(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("focal stack is empty")]
    EmptyStack,

    #[error("k-means clustering is degenerate: all pixels are equal")]
    DegenerateClustering,
    #[error("contour collapsed to fewer than 3 distinct points")]
    ContourCollapsed,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate image: {0}")]
    DegenerateImage(String),
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("mask has {0} foreground components, expected exactly one")]
    MultipleComponents(usize),

    #[error("feature matrix is empty")]
    EmptyMatrix,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("need at least two categories, found {0}")]
    TooFewCategories(usize),
    #[error("count {count} out of range 1..={max}")]
    CountOutOfRange { count: usize, max: usize },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("unknown category: {0}")]
    UnknownCategory(String),
    #[error("node holds no samples")]
    EmptyNode,
    #[error("model is untrained")]
    UntrainedModel,
    #[error("unknown {kind}: {name}")]
    UnknownStrategy { kind: &'static str, name: String },
    #[error("unsupported model format: {0}")]
    ModelFormat(String),

    #[error("no true-positive profile for category {0}")]
    MissingProfile(String),

    #[error("too few samples: {0}")]
    TooFewSamples(String),
    #[error("outlier categories overlap training categories: {0}")]
    CategoryOverlap(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable identifier of the variant, for diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::FileNotFound(_) => "file_not_found",
            Error::UnsupportedFormat(_) => "unsupported_format",
            Error::CorruptData(_) => "corrupt_data",
            Error::OutOfBounds { .. } => "out_of_bounds",
            Error::ImageTooSmall(_) => "image_too_small",
            Error::InvalidImage(_) => "invalid_image",
            Error::EmptyStack => "empty_stack",
            Error::DegenerateClustering => "degenerate_clustering",
            Error::ContourCollapsed => "contour_collapsed",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::DegenerateImage(_) => "degenerate_image",
            Error::EmptyMask => "empty_mask",
            Error::MultipleComponents(_) => "multiple_components",
            Error::EmptyMatrix => "empty_matrix",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::TooFewCategories(_) => "too_few_categories",
            Error::CountOutOfRange { .. } => "count_out_of_range",
            Error::SchemaMismatch(_) => "schema_mismatch",
            Error::UnknownCategory(_) => "unknown_category",
            Error::EmptyNode => "empty_node",
            Error::UntrainedModel => "untrained_model",
            Error::UnknownStrategy { .. } => "unknown_strategy",
            Error::ModelFormat(_) => "model_format",
            Error::MissingProfile(_) => "missing_profile",
            Error::TooFewSamples(_) => "too_few_samples",
            Error::CategoryOverlap(_) => "category_overlap",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
