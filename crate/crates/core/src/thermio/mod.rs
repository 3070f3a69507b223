//! Thermal frame ingestion, normalisation, rendering, augmentation and
//! synthetic phantoms.

pub mod augment;
pub mod frame;
pub mod manifest;
pub mod mask;
pub mod render;
pub mod synth;

use std::path::PathBuf;

use thiserror::Error;

pub use augment::{augment, AugmentConfig, SpatialTransform};
pub use frame::{normalize_frame, NormalizeStrategy, ThermalFrame};
pub use manifest::{load_manifest, write_manifest, ClassLabel, SampleRecord, Split};
pub use mask::{SegMask, NUM_CLASSES, REGION_NAMES};
pub use render::{colormap, render, RenderKind, RenderedImage};
pub use synth::{synth_generate, Phantom};

/// Smallest frame extent the encoder stack accepts.
pub const MIN_FRAME_SIZE: usize = 16;

#[derive(Debug, Error)]
pub enum ThermioError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path} at line {line}: {message}")]
    ParseError {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate sample id {0}")]
    DuplicateId(String),
    #[error("patient {0} appears in more than one split")]
    SplitLeak(String),
    #[error("invalid normalisation range: lo {lo} must be below hi {hi}")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("png encoding failed for {path}: {message}")]
    Png { path: PathBuf, message: String },
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> ThermioError {
    let path = path.into();
    move |source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            ThermioError::MissingFile(path)
        } else {
            ThermioError::Io { path, source }
        }
    }
}
