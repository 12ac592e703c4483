use std::path::PathBuf;

/// Errors produced by the pipeline stages.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("pixel ({x}, {y}) outside {width}x{height} image")]
    PixelOutOfBounds {
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("mesh has no vertices or faces")]
    EmptyMesh,
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("mesh is not normalized: bounding box {min:?}..{max:?} exceeds [-1.05, 1.05]^3")]
    NotNormalized { min: [f64; 3], max: [f64; 3] },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("nothing to extract")]
    NothingToExtract,
    #[error("scalar field has no zero crossing")]
    NoZeroCrossing,
    #[error("token {0} has no modality tag")]
    UntaggedToken(usize),
    #[error("checksum mismatch in {0}")]
    Checksum(String),
    #[error("malformed {format} data: {reason}")]
    Format { format: &'static str, reason: String },
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn format(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            format,
            reason: reason.into(),
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// Short machine-readable category, used by the CLI's one-line errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::PixelOutOfBounds { .. } => "pixel_out_of_bounds",
            Error::InvalidCamera(_) => "invalid_camera",
            Error::EmptyMesh => "empty_mesh",
            Error::InvalidMesh(_) => "invalid_mesh",
            Error::NotNormalized { .. } => "not_normalized",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::NothingToExtract => "nothing_to_extract",
            Error::NoZeroCrossing => "no_zero_crossing",
            Error::UntaggedToken(_) => "untagged_token",
            Error::Checksum(_) => "checksum",
            Error::Format { .. } => "format",
            Error::File { .. } | Error::Io(_) => "io",
            Error::Image(_) => "image",
            Error::Json(_) => "json",
        }
    }
}

/// Attaches the offending path to I/O errors.
pub trait PathContext<T> {
    fn at_path(self, path: &std::path::Path) -> Result<T>;
}

impl<T> PathContext<T> for std::result::Result<T, std::io::Error> {
    fn at_path(self, path: &std::path::Path) -> Result<T> {
        self.map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })
    }
}
