//! Streaming inference: audio is framed hop by hop, frames accumulate into
//! non-overlapping 498-frame windows, and each full window is run through
//! the model and logged. The frontend keeps its noise state across windows.

use std::path::PathBuf;
use std::sync::mpsc;

use emoedge_core::frontend::StreamingFrontend;
use emoedge_core::graph::ModelKind;
use emoedge_core::models::{self, EmotionOutput, KwsOutput, EMOTION_FRAMES, KWS_FRAMES, NUM_MEL};
use emoedge_core::tensor::{self, Tensor};
use emoedge_core::{Frontend, FrontendConfig, ModelGraph, PcmBuffer, Spectrogram};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, RuntimeOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum Prediction {
    Emotion(EmotionOutput),
    Kws(KwsOutput),
}

/// One inference over a full window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEvent {
    pub window: usize,
    pub start_s: f64,
    pub end_s: f64,
    /// Top class; for the keyword model, one label per second.
    pub label: String,
    pub confidence: f32,
    pub prediction: Prediction,
}

impl WindowEvent {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event serialises")
    }
}

/// Checks that `model` can consume 32×498 windows from `frontend`.
pub fn check_compatible(model: &ModelGraph, frontend: &FrontendConfig) -> Result<()> {
    if frontend.num_channels != NUM_MEL {
        return Err(Error::Mismatch(format!("frontend produces {} channels, models take {NUM_MEL}", frontend.num_channels)));
    }
    let [input] = model.inputs[..] else {
        return Err(Error::Mismatch(format!("model has {} inputs, expected 1", model.inputs.len())));
    };
    let shape = &model.values[input].shape;
    let ok = match model.kind {
        ModelKind::Emotion => shape[..] == [NUM_MEL, EMOTION_FRAMES],
        ModelKind::Kws => shape[..] == [NUM_MEL, KWS_FRAMES, 1],
        ModelKind::Custom => false,
    };
    if !ok {
        return Err(Error::Mismatch(format!("{} model with input {shape:?} cannot take {NUM_MEL}×{EMOTION_FRAMES} windows", model.kind)));
    }
    if model.logits.is_none() {
        return Err(Error::Mismatch("model has no logits output".into()));
    }
    Ok(())
}

/// Runs one full window through the model.
pub fn infer_window(model: &ModelGraph, window: &Spectrogram, index: usize, frontend: &FrontendConfig, opts: &RuntimeOptions) -> Result<WindowEvent> {
    let values = window.to_db_features(frontend.log_scale_shift, opts.db_floor);
    let features = Tensor::from_f32(vec![NUM_MEL, EMOTION_FRAMES], values).map_err(models::ModelError::from)?;
    infer_features(model, &features, index, frontend)
}

/// Runs `[32, 498]` dB features of window `index` through the model.
pub fn infer_features(model: &ModelGraph, features: &Tensor, index: usize, frontend: &FrontendConfig) -> Result<WindowEvent> {
    let prediction = match model.kind {
        ModelKind::Kws => {
            let x = tensor::slice(features, 1, 0, KWS_FRAMES).map_err(models::ModelError::from)?;
            Prediction::Kws(models::infer_kws_features(model, &x)?)
        }
        _ => Prediction::Emotion(models::infer_emotion_features(model, features)?),
    };
    let name = |i: usize| model.labels.get(i).cloned().unwrap_or_else(|| i.to_string());
    let (label, confidence) = match &prediction {
        Prediction::Emotion(o) => (name(o.argmax()), o.probs[o.argmax()]),
        Prediction::Kws(o) => {
            let top = o.argmax();
            let conf = top.iter().zip(&o.probs).map(|(&k, p)| p[k]).fold(f32::INFINITY, f32::min);
            (top.into_iter().map(name).collect::<Vec<_>>().join(" "), conf)
        }
    };
    let hop = frontend.hop_len() as f64;
    let rate = frontend.sample_rate_hz as f64;
    let first = (index * EMOTION_FRAMES) as f64;
    Ok(WindowEvent {
        window: index,
        start_s: first * hop / rate,
        end_s: ((first + (EMOTION_FRAMES - 1) as f64) * hop + frontend.window_len() as f64) / rate,
        label,
        confidence,
        prediction,
    })
}

/// Frontend plus the column buffer of the current window.
#[derive(Debug, Clone)]
pub struct WindowAccumulator {
    frontend: StreamingFrontend,
    columns: Spectrogram,
}

impl WindowAccumulator {
    pub fn new(cfg: &FrontendConfig) -> Result<Self> {
        let fe = Frontend::new(cfg.clone())?;
        Ok(Self { frontend: fe.stream(), columns: Spectrogram::new(cfg.num_channels) })
    }

    /// Frames collected towards the next window (always < 498).
    pub fn accumulated(&self) -> usize {
        self.columns.num_frames()
    }

    /// Feeds samples; returns every window completed by them.
    pub fn push(&mut self, samples: &[i16]) -> Result<Vec<Spectrogram>> {
        let mut done = Vec::new();
        for frame in self.frontend.push(samples)? {
            self.columns.push_frame(&frame);
            if self.columns.num_frames() == EMOTION_FRAMES {
                let fresh = Spectrogram::new(self.columns.num_channels());
                done.push(std::mem::replace(&mut self.columns, fresh));
            }
        }
        Ok(done)
    }
}

/// Sequential streaming state: feed audio, collect window events.
#[derive(Debug, Clone)]
pub struct StreamState {
    acc: WindowAccumulator,
    model: ModelGraph,
    frontend: FrontendConfig,
    opts: RuntimeOptions,
    log: Vec<WindowEvent>,
}

impl StreamState {
    pub fn new(model: ModelGraph, frontend: FrontendConfig, opts: RuntimeOptions) -> Result<Self> {
        check_compatible(&model, &frontend)?;
        opts.validate()?;
        Ok(Self { acc: WindowAccumulator::new(&frontend)?, model, frontend, opts, log: Vec::new() })
    }

    pub fn accumulated(&self) -> usize {
        self.acc.accumulated()
    }

    pub fn push(&mut self, samples: &[i16]) -> Result<&[WindowEvent]> {
        let before = self.log.len();
        for w in self.acc.push(samples)? {
            let ev = infer_window(&self.model, &w, self.log.len(), &self.frontend, &self.opts)?;
            self.log.push(ev);
        }
        Ok(&self.log[before..])
    }

    pub fn log(&self) -> &[WindowEvent] {
        &self.log
    }

    pub fn into_log(self) -> Vec<WindowEvent> {
        self.log
    }
}

/// Streams `pcm` with framing on one thread and inference on another,
/// joined by a bounded queue. Events come back in window order.
pub fn stream_pcm(model: &ModelGraph, pcm: &PcmBuffer, frontend: &FrontendConfig, opts: &RuntimeOptions) -> Result<Vec<WindowEvent>> {
    check_compatible(model, frontend)?;
    opts.validate()?;
    let mut acc = WindowAccumulator::new(frontend)?;
    let (tx, rx) = mpsc::sync_channel::<Spectrogram>(opts.queue_depth);
    std::thread::scope(|s| {
        let producer = s.spawn(move || -> Result<()> {
            for chunk in pcm.samples.chunks(opts.chunk_samples) {
                for w in acc.push(chunk)? {
                    if tx.send(w).is_err() {
                        return Ok(());
                    }
                }
            }
            Ok(())
        });
        let mut events = Vec::new();
        let mut failure = None;
        for w in rx.iter() {
            match infer_window(model, &w, events.len(), frontend, opts) {
                Ok(ev) => events.push(ev),
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        drop(rx);
        let produced = producer.join().expect("framing thread panicked");
        match failure {
            Some(e) => Err(e),
            None => produced.map(|_| events),
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: PathBuf,
    pub input: PathBuf,
    /// JSON-lines event log; nothing is written when unset.
    pub output: Option<PathBuf>,
    pub frontend: FrontendConfig,
    /// Quantize a float model before streaming.
    pub quantize: bool,
    pub calibration_seed: u64,
    pub runtime: RuntimeOptions,
}

impl RunConfig {
    pub fn new(model: impl Into<PathBuf>, input: impl Into<PathBuf>) -> Self {
        Self {
            model: model.into(),
            input: input.into(),
            output: None,
            frontend: FrontendConfig::default(),
            quantize: false,
            calibration_seed: 0,
            runtime: RuntimeOptions::default(),
        }
    }
}

/// Loads the model and WAV named in `cfg`, streams, and writes the event log.
pub fn stream_run(cfg: &RunConfig) -> Result<Vec<WindowEvent>> {
    let mut model = crate::load_model(&cfg.model)?;
    if cfg.quantize && !model.is_quantized() {
        check_compatible(&model, &cfg.frontend)?;
        let cal = crate::synthetic_calibration(&model, crate::DEFAULT_CALIBRATION_SAMPLES, cfg.calibration_seed)?;
        model = crate::quantize_model(&model, &cal)?;
    }
    let pcm = crate::read_wav(&cfg.input)?;
    let events = stream_pcm(&model, &pcm, &cfg.frontend, &cfg.runtime)?;
    if let Some(out) = &cfg.output {
        let text: String = events.iter().map(|e| e.to_json_line() + "\n").collect();
        std::fs::write(out, text).map_err(|e| Error::io(out, e))?;
    }
    Ok(events)
}
