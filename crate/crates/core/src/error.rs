use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the renderer, aligner, tracker or evaluation code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("invalid geo transform: {0}")]
    GeoTransform(String),

    #[error("query ({easting}, {northing}) lies outside the raster extent")]
    OutOfExtent { easting: f64, northing: f64 },

    #[error("elevation at ({easting}, {northing}) touches a nodata cell")]
    NoData { easting: f64, northing: f64 },

    #[error("empty intersection: {0}")]
    EmptyRegion(String),

    #[error("rotation angle {0} rad is too close to pi for a unique logarithm")]
    LogBranch(f64),

    #[error("point depth {0} m is not in front of the camera")]
    BehindCamera(f64),

    #[error("undistortion failed at normalized ({x}, {y})")]
    Undistortion { x: f64, y: f64 },

    #[error("invalid camera: {0}")]
    Camera(String),

    #[error("cannot render an empty mesh")]
    EmptyMesh,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("not enough valid reference rows at level {level}: {rows} < {required}")]
    TooFewRows {
        level: usize,
        rows: usize,
        required: usize,
    },

    #[error("degenerate normal equations: {0}")]
    Degenerate(String),

    #[error("all robust weights are zero")]
    ZeroWeights,

    #[error("pose outside map: {0}")]
    PoseOutsideMap(String),

    #[error("{0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
