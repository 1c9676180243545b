use emoedge_core::graph::run_float_observed;
use emoedge_core::models::{self, *};
use emoedge_core::{ModelGraph, Tensor};

fn dense(i: usize, o: usize) -> usize {
    i * o + o
}

fn conv(kh: usize, kw: usize, i: usize, o: usize) -> usize {
    kh * kw * i * o + o
}

/// Strided 2×1 convolution then a 3×3 convolution, both with bias.
fn spec_conv(i: usize, f: usize) -> usize {
    conv(2, 1, i, f) + conv(3, 3, f, f)
}

/// Single-head attention with four d×d projections, two layer norms and a
/// constant-width two-layer feed-forward.
fn transformer(d: usize) -> usize {
    4 * dense(d, d) + 2 * 2 * d + 2 * dense(d, d)
}

#[test]
fn layer_counts_from_first_principles() {
    assert_eq!(spec_conv(1, 16), 2_368);
    assert_eq!(spec_conv(16, 32), 10_304);
    assert_eq!(spec_conv(32, 64), 41_088);
    assert_eq!(spec_conv(64, 1), 139);
    assert_eq!(transformer(D_MODEL), 99_584);

    let non_kws = dense(256, 128) + dense(128, 128) + [(1, 16), (16, 32), (32, 64), (64, 1)].iter().map(|&(i, f)| spec_conv(i, f)).sum::<usize>()
        + dense(32, 128)
        + 4 * transformer(128)
        + dense(256, 128)
        + dense(128, 5);
    assert_eq!(non_kws, 539_408);
    assert_eq!(non_kws + KWS_EMBEDDING_PARAMS, EMOTION_TOTAL_PARAMS);
}

#[test]
fn builders_match_reference_tables() {
    let emo = build_emotion_model(D_MODEL).unwrap();
    for r in reconcile(&emo, EMOTION_REFERENCE) {
        assert!(r.shape_matches && r.delta() == 0, "{r:?}");
    }
    assert_eq!(emo.param_count(), 734_261);
    assert_eq!(emo.param_count() - param_count_with_prefix(&emo, KWS_PREFIX), 539_408);
    let summary = emo.summary();
    let params = |g: &str| summary.iter().find(|s| s.group == g).unwrap().params;
    for i in 1..=4 {
        assert_eq!(params(&format!("transformer{i}")), 99_584);
    }
    assert_eq!(["specconv1", "specconv2", "specconv3", "specconv4"].map(params), [2_368, 10_304, 41_088, 139]);

    let kws = build_kws_model(KWS_CLASSES, SE_REDUCTION).unwrap();
    for r in reconcile(&kws, KWS_REFERENCE) {
        assert!(r.shape_matches && r.delta() == 0, "{r:?}");
    }
    assert_eq!(kws.values[kws.logits.unwrap()].shape, [1, 5, 51]);
}

fn embedding_of(emo: &ModelGraph, x: &Tensor) -> Vec<f32> {
    let id = emo.nodes[emo.node_by_name("kws/embedding").unwrap()].output;
    let mut out = Vec::new();
    run_float_observed(emo, std::slice::from_ref(x), &mut |o| {
        if o.value == id {
            out = o.tensor.as_f32().unwrap().to_vec();
        }
    })
    .unwrap();
    out
}

#[test]
fn keyword_branch_is_frozen_and_clips_leading_frames() {
    let (_, emo) = initialized_models(11).unwrap();
    let x = synthetic_inputs(emoedge_core::graph::ModelKind::Emotion, 1, 5).unwrap().remove(0);
    let kws_weights: Vec<_> = emo.weights.iter().filter(|(k, _)| k.starts_with(KWS_PREFIX)).map(|(k, v)| (k.clone(), v.clone())).collect();

    let before = embedding_of(&emo, &x);
    models::infer_emotion_features(&emo, &x).unwrap();
    for (k, v) in &kws_weights {
        assert_eq!(&emo.weights[k], v);
    }

    // new head weights leave the embedding alone
    let (_, other) = initialized_models(12).unwrap();
    let mut mixed = emo.clone();
    for (k, v) in &other.weights {
        if !k.starts_with(KWS_PREFIX) {
            mixed.weights.insert(k.clone(), v.clone());
        }
    }
    assert_eq!(embedding_of(&mixed, &x), before);
    assert_ne!(models::infer_emotion_features(&mixed, &x).unwrap(), models::infer_emotion_features(&emo, &x).unwrap());

    // frames 490..497 never reach the keyword branch
    let mut v = x.as_f32().unwrap().to_vec();
    for ch in 0..NUM_MEL {
        for t in KWS_FRAMES..EMOTION_FRAMES {
            v[ch * EMOTION_FRAMES + t] = -80.0 + ((ch * 7 + t) % 13) as f32 * 9.0;
        }
    }
    let y = Tensor::from_f32(vec![NUM_MEL, EMOTION_FRAMES], v).unwrap();
    assert_eq!(embedding_of(&emo, &y), before);
}
