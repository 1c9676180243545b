use emoedge::runtime::{check_compatible, infer_window};
use emoedge::{stream_pcm, stream_run, Error, Prediction, RunConfig, RuntimeOptions, StreamState};
use emoedge_core::datapipe::synth::tonal_bursts;
use emoedge_core::{Frontend, FrontendConfig, ModelGraph, PcmBuffer, Spectrogram};
use proptest::prelude::*;
use std::sync::OnceLock;

fn models() -> &'static (ModelGraph, ModelGraph) {
    static M: OnceLock<(ModelGraph, ModelGraph)> = OnceLock::new();
    M.get_or_init(|| emoedge_core::models::initialized_models(21).unwrap())
}

fn seconds(s: f64, seed: u64) -> PcmBuffer {
    tonal_bursts((s * 16_000.0) as usize, seed)
}

fn opts() -> RuntimeOptions {
    RuntimeOptions::default()
}

#[test]
fn window_counts() {
    let (_, emo) = models();
    let fe = FrontendConfig::default();
    assert_eq!(stream_pcm(emo, &seconds(15.0, 1), &fe, &opts()).unwrap().len(), 3);
    assert_eq!(stream_pcm(emo, &seconds(4.0, 1), &fe, &opts()).unwrap().len(), 0);
    let ev = stream_pcm(emo, &seconds(30.0, 1), &fe, &opts()).unwrap();
    assert_eq!(ev.len(), 6);
    assert_eq!(ev.iter().map(|e| e.window).collect::<Vec<_>>(), [0, 1, 2, 3, 4, 5]);
    assert!((ev[1].start_s - 4.98).abs() < 1e-9);
    assert!((ev[0].end_s - 4.995).abs() < 1e-9);
}

/// Whole-file spectrogram cut into consecutive 498-frame windows.
fn batch_windows(pcm: &PcmBuffer) -> Vec<Spectrogram> {
    let spec = Frontend::new(FrontendConfig::default()).unwrap().compute_spectrogram(pcm).unwrap();
    let frames: Vec<Vec<u16>> = spec.frames().map(|f| f.to_vec()).collect();
    frames
        .chunks_exact(498)
        .map(|chunk| {
            let mut w = Spectrogram::new(32);
            chunk.iter().for_each(|f| w.push_frame(f));
            w
        })
        .collect()
}

#[test]
fn streaming_equals_batch_inference() {
    let pcm = seconds(16.0, 8);
    let fe = FrontendConfig::default();
    for model in [&models().0, &models().1] {
        let streamed = stream_pcm(model, &pcm, &fe, &opts()).unwrap();
        let batch: Vec<_> = batch_windows(&pcm).iter().enumerate().map(|(i, w)| infer_window(model, w, i, &fe, &opts()).unwrap()).collect();
        assert_eq!(streamed.len(), 3);
        assert_eq!(streamed, batch);

        let mut state = StreamState::new(model.clone(), fe.clone(), opts()).unwrap();
        for chunk in pcm.samples.chunks(777) {
            state.push(chunk).unwrap();
        }
        assert_eq!(state.log(), streamed.as_slice());
        assert_eq!(stream_pcm(model, &pcm, &fe, &opts()).unwrap(), streamed);
    }
    match &stream_pcm(&models().0, &pcm, &fe, &opts()).unwrap()[0].prediction {
        Prediction::Kws(k) => assert_eq!(k.probs.len(), 5),
        p => panic!("unexpected {p:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn emission_count_is_frames_over_498(samples in 0usize..260_000, chunk in 1usize..5000, depth in 1usize..4) {
        let pcm = tonal_bursts(samples, samples as u64);
        let fe = FrontendConfig::default();
        let frames = if samples < 400 { 0 } else { (samples - 400) / 160 + 1 };
        let o = RuntimeOptions { chunk_samples: chunk, queue_depth: depth, ..opts() };
        let ev = stream_pcm(&models().1, &pcm, &fe, &o).unwrap();
        prop_assert_eq!(ev.len(), frames / 498);
    }
}

#[test]
fn incompatible_models_are_rejected() {
    let fe = FrontendConfig::default();
    let mut wrong = models().1.clone();
    let input = wrong.inputs[0];
    wrong.values[input].shape = vec![32, 400];
    assert!(matches!(check_compatible(&wrong, &fe), Err(Error::Mismatch(_))));
    let e = stream_pcm(&wrong, &seconds(6.0, 1), &fe, &opts()).unwrap_err();
    assert_eq!(e.category(), "model_input_mismatch");

    let narrow = FrontendConfig { num_channels: 40, ..fe };
    assert!(matches!(StreamState::new(models().1.clone(), narrow, opts()), Err(Error::Mismatch(_))));
}

#[test]
fn run_writes_an_event_log() {
    let dir = tempfile::tempdir().unwrap();
    let (model, wav, log) = (dir.path().join("emo.emt"), dir.path().join("in.wav"), dir.path().join("events.jsonl"));
    emoedge::save_model(&models().1, &model).unwrap();
    emoedge::write_wav(&wav, &seconds(11.0, 5)).unwrap();
    let mut cfg = RunConfig::new(&model, &wav);
    cfg.output = Some(log.clone());
    let events = stream_run(&cfg).unwrap();
    assert_eq!(events.len(), 2);
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&log).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1]["window"], 1);
    assert_eq!(lines[0]["prediction"]["model"], "emotion");
    assert_eq!(stream_run(&cfg).unwrap(), events);
}
