//! Host-side companion to `emoedge-core`: WAV IO, the tensor/model
//! container, TOML configuration, the streaming runtime and the `emoedge`
//! command line.

pub mod cli;
pub mod config;
pub mod container;
pub mod runtime;
pub mod wav;

use std::path::Path;

use emoedge_core::datapipe::DataError;
use emoedge_core::eval::MetricError;
use emoedge_core::frontend::FrontendError;
use emoedge_core::graph::{GraphError, ModelKind};
use emoedge_core::models::{self, ModelError};
use emoedge_core::quant::{self, QuantError};
use emoedge_core::{ModelGraph, Tensor};
use thiserror::Error;

pub use config::{Config, RuntimeOptions};
pub use container::{load_model, save_model, Container, ContainerError};
pub use runtime::{stream_pcm, stream_run, Prediction, RunConfig, StreamState, WindowEvent};
pub use wav::{read_wav, write_wav, WavError};

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("config: {0}")]
    Config(String),
    #[error("model and input do not match: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{0}")]
    Input(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.display().to_string(), source }
    }

    /// Stable machine-readable category.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Wav(_) => "wav",
            Error::Container(_) => "container",
            Error::Config(_) => "config",
            Error::Mismatch(_) => "model_input_mismatch",
            Error::Frontend(_) => "frontend",
            Error::Model(_) => "model",
            Error::Graph(_) => "graph",
            Error::Quant(_) => "quantization",
            Error::Data(_) => "data",
            Error::Metric(_) => "metric",
            Error::Input(_) => "input",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Number of calibration inputs used when none are supplied.
pub const DEFAULT_CALIBRATION_SAMPLES: usize = 32;

/// Folds batch norms, calibrates on `samples` and converts to INT8.
pub fn quantize_model(graph: &ModelGraph, samples: &[Tensor]) -> Result<ModelGraph> {
    let folded = quant::fold_batchnorms(graph)?;
    let batches: Vec<Vec<Tensor>> = samples.iter().map(|t| vec![t.clone()]).collect();
    let cal = quant::calibrate(&folded, &batches)?;
    Ok(quant::quantize_graph(&folded, &cal)?)
}

/// Seeded synthetic calibration inputs shaped for `graph`.
pub fn synthetic_calibration(graph: &ModelGraph, count: usize, seed: u64) -> Result<Vec<Tensor>> {
    Ok(models::synthetic_inputs(graph.kind, count, seed)?)
}

/// Builds a model with seeded random weights and fitted statistics.
pub fn build_model(kind: ModelKind, seed: u64) -> Result<ModelGraph> {
    let (kws, emo) = models::initialized_models(seed)?;
    match kind {
        ModelKind::Kws => Ok(kws),
        ModelKind::Emotion => Ok(emo),
        ModelKind::Custom => Err(Error::Config("only the keyword and emotion models can be built".into())),
    }
}
