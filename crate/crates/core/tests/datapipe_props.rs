use std::collections::{BTreeMap, BTreeSet};

use emoedge_core::datapipe::synth::tonal_bursts;
use emoedge_core::datapipe::*;
use emoedge_core::{Frontend, FrontendConfig, PcmBuffer};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TAGS: [&str; 7] = ["happy", "excited", "neutral", "sad", "angry", "none", "frustrated"];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn segment_count_formula(tenths in 0usize..1200) {
        // whole tenths of a second keep the sample count exact
        let len = tenths * 1600;
        let pcm = PcmBuffer::from_samples(vec![0; len]);
        let segs = segment_audio(&pcm, 5.0, 1.0).unwrap();
        let secs = tenths as f64 / 10.0;
        let want = if secs < 5.0 { 0 } else { ((secs - 5.0) / 4.0).floor() as usize + 1 };
        prop_assert_eq!(segs.len(), want);
        prop_assert_eq!(segment_count(len, 5.0, 1.0), want);
        prop_assert!(segs.iter().all(|s| s.len() == 80_000));
    }

    #[test]
    fn soft_labels_sum_to_one_and_ignore_order(votes in prop::collection::vec(0usize..7, 1..12), seed in any::<u64>()) {
        prop_assume!(votes.iter().any(|&v| v < 6));
        let map = ClassMap::default();
        let rec = AnnotationRecord { clip_id: "c".into(), votes: votes.iter().map(|&v| TAGS[v].to_string()).collect() };
        let a = make_soft_label(&rec, &map).unwrap();
        let sum: f32 = a.0.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-6);

        let mut shuffled = rec.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(shuffled.votes.as_mut_slice(), &mut rng);
        prop_assert_eq!(make_soft_label(&shuffled, &map).unwrap(), a);
    }

    #[test]
    fn snr_mixing_hits_target(seed in any::<u64>(), snr in -5.0f64..20.0) {
        let s: Vec<f64> = tonal_bursts(8000, seed).samples.iter().map(|&v| v as f64).collect();
        let n: Vec<f64> = tonal_bursts(8000, seed ^ 77).samples.iter().map(|&v| v as f64 * 0.3 + 1.0).collect();
        let mixed = mix_at_snr(&s, &n, snr).unwrap();
        let ps: f64 = s.iter().map(|v| v * v).sum();
        let pn: f64 = mixed.iter().zip(&s).map(|(m, v)| (m - v) * (m - v)).sum();
        prop_assert!((10.0 * (ps / pn).log10() - snr).abs() <= 0.1);
    }

    #[test]
    fn augmentation_is_seed_reproducible(seed in any::<u64>()) {
        let pcm = tonal_bursts(16_000, 9);
        let banks = AugmentBanks { noise: vec![tonal_bursts(20_000, 4)], rir: vec![vec![1.0, 0.0, 0.3, 0.1]] };
        let cfg = AugmentConfig::kws();
        let a = augment_waveform(&pcm, &cfg, &banks, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = augment_waveform(&pcm, &cfg, &banks, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn disabled_augmentation_is_identity() {
    let pcm = tonal_bursts(16_000, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (out, log) = augment_waveform(&pcm, &AugmentConfig::default(), &AugmentBanks::default(), &mut rng).unwrap();
    assert_eq!(out, pcm);
    assert!(log.applied.is_empty());

    let spec = Frontend::new(FrontendConfig::default()).unwrap().compute_spectrogram(&pcm).unwrap();
    let off = SpecAugmentConfig { time_prob: 0.0, freq_prob: 0.0, ..SpecAugmentConfig::kws() };
    assert_eq!(spec_augment(&spec, &off, &mut rng), spec);
}

#[test]
fn curation_thresholds() {
    let table = |pairs: &[(&str, u64)]| pairs.iter().map(|&(w, n)| (w.to_string(), n)).collect::<BTreeMap<_, _>>();
    let mut freq = BTreeMap::new();
    freq.insert("happy".to_string(), table(&[("great", 1_500), ("the", 90_000), ("yeah", 15_000), ("rare", 1_999)]));
    freq.insert("sad".to_string(), table(&[("great", 600), ("sorry", 2_000), ("okay", 30_000)]));
    let stop: BTreeSet<String> = ["the".to_string()].into();
    let c = curate_keywords(&freq, &stop, None, &CurationConfig::default()).unwrap();
    let words: Vec<(&str, u64, Option<u64>)> = c.keywords.iter().map(|k| (k.word.as_str(), k.count, k.downsample_to)).collect();
    // counts are pooled across emotions before thresholding
    assert_eq!(words, [("great", 2_100, None), ("okay", 30_000, Some(20_000)), ("sorry", 2_000, None), ("yeah", 15_000, None)]);
    assert_eq!(c.classes.len(), c.keywords.len() + 2);
    assert_eq!(&c.classes[c.classes.len() - 2..], [UNKNOWN_CLASS, NEGATIVE_CLASS]);
}
