//! Windowing, the training loop, and evaluation.

mod train;
mod windows;

pub use train::{evaluate, train, EpochRecord, EvalOutput, TrainConfig, TrainLog, TrainOutcome};
pub use windows::{keypoints_2d, label_sequence, make_dataset, make_windows, stack, Example};

use thiserror::Error;

use crate::geometry::GeometryError;
use crate::metrics::MetricsError;
use crate::nn::NnError;
use crate::occlusion::OcclusionError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("sequence has {len} frames, a window needs {needed}")]
    SequenceTooShort { len: usize, needed: usize },
    #[error("labeler `precomputed` needs occlusion labels stored with the sequence")]
    MissingLabels,
    #[error("non-finite gradient for {param} at epoch {epoch}, step {step}")]
    NonFiniteGradient {
        epoch: usize,
        step: usize,
        param: String,
    },
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Occlusion(#[from] OcclusionError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
