use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // ingest
    #[error("malformed annotation document: {0}")]
    MalformedDocument(String),
    #[error("annotation {annotation_id}: run-length-encoded segmentation is not supported")]
    UnsupportedSegmentation { annotation_id: u64 },
    #[error("annotation {annotation_id} references unknown image {image_id}")]
    DanglingReference { annotation_id: u64, image_id: u64 },
    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),

    // raster
    #[error("unknown raster format: {0}")]
    UnknownFormat(String),
    #[error("raster header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("non-finite raster header field `{0}`")]
    NonFiniteHeader(String),
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("rasters not aligned with images: {0}")]
    Misaligned(String),

    // geometry
    #[error("zero-sized grid ({width}x{height})")]
    ZeroDimension { width: usize, height: usize },

    // heightclass
    #[error("no valid height samples under the footprint")]
    NoValidSamples,
    #[error("footprint rasterizes to zero pixels")]
    EmptyMask,
    #[error("negative height {0} m")]
    NegativeHeight(i64),
    #[error("height class {0} outside 1..=5")]
    InvalidClass(i64),

    // labels
    #[error("{}:{line}: {message}", path.display())]
    TokenCountMismatch {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}:{line}: class index {value} outside 0..=4", path.display())]
    OutOfRangeClass {
        path: PathBuf,
        line: usize,
        value: String,
    },
    #[error("{}:{line}: coordinate {value} outside [0, 1]", path.display())]
    OutOfRangeCoordinate {
        path: PathBuf,
        line: usize,
        value: String,
    },
    #[error("{}:{line}: confidence {value} outside [0, 1]", path.display())]
    OutOfRangeConfidence {
        path: PathBuf,
        line: usize,
        value: String,
    },
    #[error("label file mixes ground-truth and prediction instances")]
    MixedKinds,
    #[error("invalid label instance: {0}")]
    InvalidInstance(String),

    // balance
    #[error("label corpus contains no instances")]
    EmptyDataset,
    #[error("value outside domain: {0}")]
    DomainError(String),

    // eval
    #[error("no image size known for `{0}`")]
    DimensionUnknown(String),
    #[error("{}:{line}: {message}", path.display())]
    MalformedSizes {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
