//! Metrics, dataset assembly, the representation grid and overlays.

mod data;
mod grid;
pub mod metrics;
pub mod overlay;
pub mod report;

use std::path::PathBuf;

use thiserror::Error;

use crate::cuts_encoder::EncoderError;
use crate::tensor::checkpoint::CheckpointError;
use crate::thermio::ThermioError;
use crate::unet_decoder::DecoderError;

pub use data::{
    encoder_images, evaluate, infer, labeled_samples, load_dataset, synth_dataset, DatasetSample, Inference,
    SynthSpec,
};
pub use grid::{cell_hash, run_grid, GridConfig, CACHE_ENV};
pub use metrics::{classification_metrics, segmentation_metrics, MetricsError, MetricsReport};
pub use overlay::{compare_overlay, render_overlay};
pub use report::{GridResult, GridRow, ReportError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] ThermioError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cache cell {0} is locked by another run")]
    Locked(PathBuf),
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let path = path.into();
    move |source| PipelineError::Io { path, source }
}
