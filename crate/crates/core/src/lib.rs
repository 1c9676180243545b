//! Core algorithms for an on-device speech emotion pipeline.
//!
//! Everything here is `no_std` + `alloc`: the fixed-point log-mel frontend,
//! a small float/INT8 tensor engine, the keyword-spotting and late-fusion
//! emotion model builders, the accelerator graph compiler, dataset
//! preparation helpers and the evaluation metrics. File formats, WAV IO and
//! the command line live in the `emoedge` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod compiler;
pub mod datapipe;
pub mod eval;
pub mod frontend;
pub mod graph;
pub mod models;
pub mod quant;
pub mod tensor;

pub use frontend::{Frontend, FrontendConfig, PcmBuffer, Spectrogram};
pub use graph::ModelGraph;
pub use tensor::{DType, QuantParams, Tensor};

/// Sample rate every component in the pipeline runs at.
pub const SAMPLE_RATE_HZ: u32 = 16_000;
