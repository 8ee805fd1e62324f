use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid stereo rig: {0}")]
    InvalidRig(String),
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("scene {index}: surface not contained in the camera frustum after {attempts} attempts (last: {detail})")]
    FrustumContainment {
        index: u64,
        attempts: usize,
        detail: String,
    },
    #[error("{path}: bad magic bytes {found:?}")]
    BadMagic { path: PathBuf, found: [u8; 4] },
    #[error("{path}: unsupported format version {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },
    #[error("{path}: truncated payload (expected {expected} bytes, found {found})")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("{path}: dimension mismatch: {detail}")]
    DimensionMismatch { path: PathBuf, detail: String },
    #[error("no valid pixels")]
    EmptyMask,
    #[error("every target step is padded")]
    AllPadded,
    #[error("empty ensemble buffer")]
    EmptyBuffer,
    #[error("training diverged at step {step}: non-finite loss")]
    Diverged { step: usize },
    #[error("frozen parameter drift: {0}")]
    FrozenDrift(String),
    #[error("checkpoint fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("non-finite action")]
    NonFiniteAction,
    #[error("unreachable target: {0}")]
    Unreachable(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    /// Errors that signal a broken invariant rather than malformed input.
    pub fn is_invariant_violation(&self) -> bool {
        matches!(self, Error::FrozenDrift(_) | Error::Diverged { .. } | Error::NonFiniteAction)
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
