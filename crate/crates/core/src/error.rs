use std::path::PathBuf;

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad classification of an [`Error`], used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad parameters, infeasible configuration, data that fails validation.
    Validation,
    /// Unreadable files or malformed containers.
    Format,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions k={k}, h={h}, w={w}: all must be positive and k >= 2")]
    InvalidDims { k: usize, h: usize, w: usize },

    #[error("buffer length {found} does not match expected {expected}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("score {value} at flat index {index} is outside [0, 1]")]
    ScoreOutOfRange { index: usize, value: f32 },

    #[error("softmax scores at pixel ({row}, {col}) sum to {sum}, not 1")]
    SoftmaxValidation { row: usize, col: usize, sum: f64 },

    #[error("label {label} is out of range for {k} classes")]
    LabelOutOfRange { label: u16, k: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no valid (non-ignored) pixels")]
    ZeroValidPixels,

    #[error("calibration set is empty")]
    EmptyCalibrationSet,

    #[error(
        "alpha {alpha} is infeasible with n = {n} calibration examples: \
         minimum feasible alpha is {min_alpha}, or use at least n = {min_n} examples"
    )]
    InfeasibleAlpha {
        alpha: f64,
        n: usize,
        min_alpha: f64,
        min_n: usize,
    },

    #[error("reports cannot be aggregated: {0}")]
    ConfigMismatch(String),

    #[error("split of {n} entries with cal_fraction {cal_fraction} leaves an empty partition")]
    DegenerateSplit { n: usize, cal_fraction: f64 },

    #[error("manifest {path}, line {line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("not an NPY file (bad magic string)")]
    BadMagic,

    #[error("unsupported NPY version {major}.{minor} (only 1.0 is accepted)")]
    UnsupportedVersion { major: u8, minor: u8 },

    #[error("malformed NPY header: {0}")]
    MalformedHeader(String),

    #[error("unsupported NPY dtype descriptor {0:?}")]
    UnsupportedDescriptor(String),

    #[error("Fortran-ordered NPY arrays are not supported")]
    FortranOrderUnsupported,

    #[error("expected a {expected}-axis array, found shape {found:?}")]
    ShapeRankError { expected: usize, found: Vec<usize> },

    #[error("NPY payload holds {found} bytes, header implies {expected}")]
    DataLength { expected: usize, found: usize },

    #[error("image error: {0}")]
    Image(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            InvalidDims { .. }
            | LengthMismatch { .. }
            | DimensionMismatch { .. }
            | ScoreOutOfRange { .. }
            | SoftmaxValidation { .. }
            | LabelOutOfRange { .. }
            | InvalidParameter(_)
            | ZeroValidPixels
            | EmptyCalibrationSet
            | InfeasibleAlpha { .. }
            | ConfigMismatch(_)
            | DegenerateSplit { .. } => ErrorClass::Validation,
            Manifest { .. }
            | BadMagic
            | UnsupportedVersion { .. }
            | MalformedHeader(_)
            | UnsupportedDescriptor(_)
            | FortranOrderUnsupported
            | ShapeRankError { .. }
            | DataLength { .. }
            | Image(_)
            | Io { .. }
            | Json(_)
            | Csv(_) => ErrorClass::Format,
        }
    }

    /// Stable machine-readable identifier.
    pub fn code(&self) -> &'static str {
        use Error::*;
        match self {
            InvalidDims { .. } => "invalid_dims",
            LengthMismatch { .. } => "length_mismatch",
            DimensionMismatch { .. } => "dimension_mismatch",
            ScoreOutOfRange { .. } => "score_out_of_range",
            SoftmaxValidation { .. } => "softmax_validation",
            LabelOutOfRange { .. } => "label_out_of_range",
            InvalidParameter(_) => "invalid_parameter",
            ZeroValidPixels => "zero_valid_pixels",
            EmptyCalibrationSet => "empty_calibration_set",
            InfeasibleAlpha { .. } => "infeasible_alpha",
            ConfigMismatch(_) => "config_mismatch",
            DegenerateSplit { .. } => "degenerate_split",
            Manifest { .. } => "manifest",
            BadMagic => "bad_magic",
            UnsupportedVersion { .. } => "unsupported_version",
            MalformedHeader(_) => "malformed_header",
            UnsupportedDescriptor(_) => "unsupported_descriptor",
            FortranOrderUnsupported => "fortran_order_unsupported",
            ShapeRankError { .. } => "shape_rank",
            DataLength { .. } => "data_length",
            Image(_) => "image",
            Io { .. } => "io",
            Json(_) => "json",
            Csv(_) => "csv",
        }
    }
}
