//! Builders and inference entry points for the keyword-spotting network
//! (residual depthwise-separable blocks with squeeze-and-excitation) and the
//! late-fusion emotion classifier that reuses its frozen embedding.

mod build;
mod init;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datapipe::synth::tonal_bursts;
use crate::frontend::{Frontend, FrontendConfig, FrontendError, Spectrogram};
use crate::graph::{run_float_observed, GraphError, ModelGraph, ModelKind};
use crate::quant::{run_quantized_observed, QuantError};
use crate::tensor::{dequantize_tensor, softmax, Tensor, TensorError};

pub use build::{build_emotion_model, build_kws_model, kws_labels};
pub use init::{fit_statistics, import_weights, init_weights};

pub const NUM_MEL: usize = 32;
pub const KWS_FRAMES: usize = 490;
pub const EMOTION_FRAMES: usize = 498;
pub const KWS_CLASSES: usize = 51;
pub const EMBEDDING_DIM: usize = 256;
pub const D_MODEL: usize = 128;
pub const SE_REDUCTION: usize = 16;
/// Name prefix of the keyword branch inside the emotion model.
pub const KWS_PREFIX: &str = "kws/";
/// Lower clamp of the dB input features.
pub const DB_FLOOR: f32 = -80.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid model configuration: {0}")]
    Config(String),
}

/// Five per-second distributions over the keyword classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KwsOutput {
    pub probs: Vec<Vec<f32>>,
    pub logits: Vec<Vec<f32>>,
}

impl KwsOutput {
    pub fn argmax(&self) -> Vec<usize> {
        self.probs.iter().map(|r| crate::tensor::argmax(r)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionOutput {
    pub probs: Vec<f32>,
    pub logits: Vec<f32>,
}

impl EmotionOutput {
    pub fn argmax(&self) -> usize {
        crate::tensor::argmax(&self.probs)
    }
}

/// Channel-major dB features of a spectrogram as a `[channels, frames]` tensor.
pub fn spectrogram_features(spec: &Spectrogram, log_scale_shift: u32) -> Result<Tensor, ModelError> {
    let values = spec.to_db_features(log_scale_shift, DB_FLOOR);
    Ok(Tensor::from_f32(vec![spec.num_channels(), spec.num_frames()], values)?)
}

fn expect_spec(spec: &Spectrogram, frames: usize) -> Result<(), ModelError> {
    if spec.num_channels() != NUM_MEL || spec.num_frames() != frames {
        return Err(ModelError::Shape(format!(
            "expected {NUM_MEL}×{frames} spectrogram, got {}×{}",
            spec.num_channels(),
            spec.num_frames()
        )));
    }
    Ok(())
}

/// Runs `graph` on one input, float or INT8 depending on the graph, and
/// returns the declared outputs plus the logits (dequantized when needed).
pub fn run_with_logits(graph: &ModelGraph, input: &Tensor) -> Result<(Vec<Tensor>, Tensor), ModelError> {
    let logits_id = graph.logits.ok_or_else(|| ModelError::Config("graph has no logits value".into()))?;
    let mut logits = None;
    let outputs = if graph.is_quantized() {
        run_quantized_observed(graph, core::slice::from_ref(input), &mut |o| {
            if o.value == logits_id {
                logits = Some(o.tensor.clone());
            }
        })?
    } else {
        run_float_observed(graph, core::slice::from_ref(input), &mut |o| {
            if o.value == logits_id {
                logits = Some(o.tensor.clone());
            }
        })?
    };
    let logits = logits.ok_or_else(|| ModelError::Config("logits were not produced".into()))?;
    let logits = if logits.dtype() == crate::tensor::DType::F32 { logits } else { dequantize_tensor(&logits)? };
    Ok((outputs, logits))
}

/// Keyword inference on a `[32, 490, 1]` (or `[32, 490]`) feature tensor.
/// Probabilities are the softmax of the (dequantized) logits.
pub fn infer_kws_features(model: &ModelGraph, features: &Tensor) -> Result<KwsOutput, ModelError> {
    let x = features.reshape(vec![NUM_MEL, KWS_FRAMES, 1]).map_err(|e| ModelError::Shape(format!("{e}")))?;
    let (_, logits) = run_with_logits(model, &x)?;
    let classes = *logits.shape().last().unwrap();
    let rows = logits.len() / classes;
    let logits = logits.reshape(vec![rows, classes])?;
    let probs = softmax(&logits)?;
    Ok(KwsOutput {
        probs: probs.as_f32()?.chunks(classes).map(|r| r.to_vec()).collect(),
        logits: logits.as_f32()?.chunks(classes).map(|r| r.to_vec()).collect(),
    })
}

pub fn infer_kws(model: &ModelGraph, spec: &Spectrogram) -> Result<KwsOutput, ModelError> {
    expect_spec(spec, KWS_FRAMES)?;
    infer_kws_features(model, &spectrogram_features(spec, FrontendConfig::default().log_scale_shift)?)
}

/// Emotion inference on `[32, 498]` dB features.
pub fn infer_emotion_features(model: &ModelGraph, features: &Tensor) -> Result<EmotionOutput, ModelError> {
    if features.shape() != [NUM_MEL, EMOTION_FRAMES] {
        return Err(ModelError::Shape(format!("expected [{NUM_MEL}, {EMOTION_FRAMES}], got {:?}", features.shape())));
    }
    let (_, logits) = run_with_logits(model, features)?;
    let probs = softmax(&logits)?;
    Ok(EmotionOutput { probs: probs.as_f32()?.to_vec(), logits: logits.as_f32()?.to_vec() })
}

pub fn infer_emotion(model: &ModelGraph, spec: &Spectrogram) -> Result<EmotionOutput, ModelError> {
    expect_spec(spec, EMOTION_FRAMES)?;
    infer_emotion_features(model, &spectrogram_features(spec, FrontendConfig::default().log_scale_shift)?)
}

/// Global average of the last pooled keyword feature map (256 values).
pub fn extract_kws_embedding(kws: &ModelGraph, spec: &Spectrogram) -> Result<Vec<f32>, ModelError> {
    expect_spec(spec, KWS_FRAMES)?;
    let x = spectrogram_features(spec, FrontendConfig::default().log_scale_shift)?.into_reshaped(vec![NUM_MEL, KWS_FRAMES, 1])?;
    let emb_id = kws
        .outputs
        .get(1)
        .copied()
        .filter(|&v| kws.values[v].shape == [EMBEDDING_DIM])
        .ok_or_else(|| ModelError::Config("graph has no embedding output".into()))?;
    let (outs, _) = run_with_logits(kws, &x)?;
    let idx = kws.outputs.iter().position(|&v| v == emb_id).unwrap();
    let emb = &outs[idx];
    let emb = if emb.dtype() == crate::tensor::DType::F32 { emb.clone() } else { dequantize_tensor(emb)? };
    Ok(emb.as_f32()?.to_vec())
}

/// Samples per 5 s window: exactly 498 frames at the default framing.
pub const WINDOW_SAMPLES: usize = 80_000;

/// dB feature tensors of synthetic tone-burst audio, shaped for `kind`
/// (`[32, 490, 1]` keyword, `[32, 498]` emotion).
pub fn synthetic_inputs(kind: ModelKind, count: usize, seed: u64) -> Result<Vec<Tensor>, ModelError> {
    let cfg = FrontendConfig::default();
    let shift = cfg.log_scale_shift;
    let fe = Frontend::new(cfg)?;
    (0..count as u64)
        .map(|i| {
            let pcm = tonal_bursts(WINDOW_SAMPLES, seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i));
            let spec = fe.compute_spectrogram(&pcm)?;
            let feats = spectrogram_features(&spec, shift)?;
            Ok(match kind {
                ModelKind::Kws => crate::tensor::slice(&feats, 1, 0, KWS_FRAMES)?.into_reshaped(vec![NUM_MEL, KWS_FRAMES, 1])?,
                _ => feats,
            })
        })
        .collect()
}

/// Number of synthetic samples used to fit normalisation statistics.
pub const FIT_SAMPLES: usize = 8;

/// Both models with seeded random weights and fitted statistics. The
/// emotion model's keyword branch is a copy of the returned keyword model.
pub fn initialized_models(seed: u64) -> Result<(ModelGraph, ModelGraph), ModelError> {
    let mut kws = build_kws_model(KWS_CLASSES, SE_REDUCTION)?;
    init_weights(&mut kws, seed)?;
    let kws_fit = synthetic_inputs(ModelKind::Kws, FIT_SAMPLES, seed ^ 0xf17)?;
    fit_statistics(&mut kws, &kws_fit.into_iter().map(|t| vec![t]).collect::<Vec<_>>(), None)?;

    let mut emo = build_emotion_model(D_MODEL)?;
    init_weights(&mut emo, seed)?;
    import_weights(&mut emo, &kws, KWS_PREFIX)?;
    let emo_fit = synthetic_inputs(ModelKind::Emotion, FIT_SAMPLES, seed ^ 0xf17)?;
    fit_statistics(&mut emo, &emo_fit.into_iter().map(|t| vec![t]).collect::<Vec<_>>(), Some(KWS_PREFIX))?;
    Ok((kws, emo))
}

/// How a reference input shape relates to the graph's layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeLayout {
    Exact,
    /// The reference lists the first two axes in the opposite order.
    SwappedLeading,
}

/// One row of a published layer table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReferenceRow {
    pub group: &'static str,
    pub input: &'static [usize],
    pub params: usize,
    pub layout: ShapeLayout,
}

const fn row(group: &'static str, input: &'static [usize], params: usize) -> ReferenceRow {
    ReferenceRow { group, input, params, layout: ShapeLayout::Exact }
}

const fn swapped(group: &'static str, input: &'static [usize], params: usize) -> ReferenceRow {
    ReferenceRow { group, input, params, layout: ShapeLayout::SwappedLeading }
}

pub const KWS_REFERENCE: &[ReferenceRow] = &[
    row("stem", &[32, 490, 1], 169),
    row("maxpool1", &[32, 490, 32], 0),
    row("res_se1", &[16, 245, 32], 10_404),
    row("maxpool2", &[16, 245, 64], 0),
    row("res_se2", &[8, 122, 64], 38_216),
    row("maxpool3", &[8, 122, 128], 0),
    row("res_se3", &[4, 61, 128], 146_064),
    row("maxpool4", &[4, 61, 256], 0),
    row("avgpool", &[2, 30, 256], 0),
    row("head", &[2, 5, 256], 26_163),
    row("reshape", &[1, 5, 51], 0),
];

pub const EMOTION_REFERENCE: &[ReferenceRow] = &[
    row("kw_clip", &[32, 498], 0),
    row("kw_embedding", &[32, 490, 1], 194_853),
    row("kw_dense1", &[256], 32_896),
    row("kw_dense2", &[128], 16_512),
    row("spec_transpose", &[32, 498], 0),
    row("specconv1", &[498, 32, 1], 2_368),
    swapped("specconv2", &[32, 249, 16], 10_304),
    swapped("specconv3", &[32, 125, 32], 41_088),
    swapped("specconv4", &[32, 63, 64], 139),
    row("token_proj", &[32, 32], 4_224),
    row("pos_enc", &[32, 128], 0),
    row("transformer1", &[32, 128], 99_584),
    row("transformer2", &[32, 128], 99_584),
    row("transformer3", &[32, 128], 99_584),
    row("transformer4", &[32, 128], 99_584),
    row("seq_pool", &[32, 128], 0),
    row("concat", &[128], 0),
    row("head_dense", &[256], 32_896),
    row("head_out", &[128], 645),
];

pub const EMOTION_TOTAL_PARAMS: usize = 734_261;
pub const KWS_EMBEDDING_PARAMS: usize = 194_853;

/// Builder output compared against a reference table row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconciliationRow {
    pub group: String,
    pub reference_input: Vec<usize>,
    pub actual_input: Vec<usize>,
    pub shape_matches: bool,
    pub reference_params: usize,
    pub actual_params: usize,
}

impl ReconciliationRow {
    pub fn delta(&self) -> i64 {
        self.actual_params as i64 - self.reference_params as i64
    }
}

/// Pairs every reference row with the graph's summary row of the same group.
/// Groups missing from the graph get an empty input shape and zero params.
pub fn reconcile(graph: &ModelGraph, reference: &[ReferenceRow]) -> Vec<ReconciliationRow> {
    let summary = graph.summary();
    reference
        .iter()
        .map(|r| {
            let actual = summary.iter().find(|s| s.group == r.group);
            let actual_input = actual.map(|s| s.input_shape.clone()).unwrap_or_default();
            let expected: Vec<usize> = match r.layout {
                ShapeLayout::Exact => r.input.to_vec(),
                ShapeLayout::SwappedLeading => {
                    let mut v = r.input.to_vec();
                    v.swap(0, 1);
                    v
                }
            };
            ReconciliationRow {
                group: r.group.into(),
                reference_input: r.input.to_vec(),
                shape_matches: actual_input == expected,
                actual_input,
                reference_params: r.params,
                actual_params: actual.map_or(0, |s| s.params),
            }
        })
        .collect()
}

/// Parameters excluding batch-norm moving statistics.
pub fn trainable_param_count(graph: &ModelGraph) -> usize {
    graph
        .nodes
        .iter()
        .map(|n| match n.op {
            crate::graph::Op::BatchNorm { .. } => n.params[..2].iter().map(|p| graph.weights[p].len()).sum(),
            _ => graph.node_param_count(n),
        })
        .sum()
}

/// Parameter count of the nodes whose name starts with `prefix`.
pub fn param_count_with_prefix(graph: &ModelGraph, prefix: &str) -> usize {
    graph.nodes.iter().filter(|n| n.name.starts_with(prefix)).map(|n| graph.node_param_count(n)).sum()
}
