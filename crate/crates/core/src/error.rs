use alloc::string::String;

/// Errors raised by the core pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("slide context has no regional side")]
    SlideContextHasNoSide,
    #[error("invalid slide grid {slide}: {reason}")]
    InvalidGrid { slide: String, reason: String },
    #[error("conflicting annotation for slide {slide} at ({row}, {col})")]
    ConflictingAnnotation { slide: String, row: u32, col: u32 },
    #[error("annotation for slide {slide} at ({row}, {col}) is not a tissue patch")]
    AnnotationOutsideTissue { slide: String, row: u32, col: u32 },
    #[error("annotation belongs to slide {found}, expected {expected}")]
    ForeignAnnotation { expected: String, found: String },
    #[error("missing embedding for slide {slide} at ({row}, {col})")]
    MissingEmbedding { slide: String, row: u32, col: u32 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("empty bag")]
    EmptyBag,
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("balanced accuracy undefined: {0}")]
    BalancedAccuracyUndefined(&'static str),
    #[error("region ({row}, {col}) lies outside the grid")]
    RegionOutsideGrid { row: u32, col: u32 },
    #[error("region ({row}, {col}) contains no tissue")]
    RegionWithoutTissue { row: u32, col: u32 },
    #[error("lesion of side {side} does not fit a {rows}x{cols} grid")]
    LesionDoesNotFit { side: u32, rows: u32, cols: u32 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no test bags with both labels at context {0}")]
    DegenerateTestSet(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
