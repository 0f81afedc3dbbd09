//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by geometry, encoding, loss and simulator operations.
#[derive(Debug, Error, PartialEq)]
pub enum Error {
    #[error("intrinsics matrix is not invertible (|det| = {det:e})")]
    NonInvertibleIntrinsics { det: f64 },

    #[error("depth must be positive, got {depth}")]
    NonPositiveDepth { depth: f64 },

    #[error("point is behind the camera (camera-frame z = {z})")]
    BehindCamera { z: f64 },

    #[error("invalid depth range [{d_min}, {d_max}]")]
    InvalidRange { d_min: f64, d_max: f64 },

    #[error("need at least {required} bins, got {got}")]
    TooFewBins { required: usize, got: usize },

    #[error("depth {depth} outside bin range [{d_min}, {d_max}]")]
    OutOfRange { depth: f64, d_min: f64, d_max: f64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("no valid pixels in loss mask")]
    NoValidPixels,

    #[error("top-k k={k} exceeds bin count {n_bins}")]
    KTooLarge { k: usize, n_bins: usize },

    #[error("all tokens are masked; decoder has nothing to attend to")]
    AllTokensMasked,

    #[error("sparse depth map has no valid cells")]
    EmptySparseMap,

    #[error("reference PE vector has near-zero norm ({norm:e})")]
    ZeroReferenceVector { norm: f64 },

    #[error("similarity region is empty: {which}")]
    EmptyRegion { which: String },

    #[error("{path}: {message}")]
    Config { path: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
