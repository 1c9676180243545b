use emoedge_core::frontend::{frame_count, log_compress, noise_reduce, NoiseState};
use emoedge_core::{Frontend, FrontendConfig, PcmBuffer};
use proptest::prelude::*;

fn bessel_i0(x: f64) -> f64 {
    // power series; converges quickly for the β used here
    let (mut sum, mut term, mut k) = (1.0, 1.0, 1.0);
    while term > 1e-17 * sum {
        term *= (x / (2.0 * k)) * (x / (2.0 * k));
        sum += term;
        k += 1.0;
    }
    sum
}

fn kaiser(len: usize, beta: f64) -> Vec<f64> {
    let m = (len - 1) as f64;
    (0..len)
        .map(|n| {
            let r = 2.0 * n as f64 / m - 1.0;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / bessel_i0(beta)
        })
        .collect()
}

/// `|Σ w[n]x[n]e^{-2πikn/N}|²` by direct summation.
fn naive_power(frame: &[i16], window: &[f64], n_fft: usize) -> Vec<f64> {
    (0..=n_fft / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for (n, (&x, &w)) in frame.iter().zip(window).enumerate() {
                let ang = -2.0 * std::f64::consts::PI * (k * n % n_fft) as f64 / n_fft as f64;
                re += x as f64 * w * ang.cos();
                im += x as f64 * w * ang.sin();
            }
            re * re + im * im
        })
        .collect()
}

#[test]
fn power_spectrum_matches_direct_dft() {
    let fe = Frontend::new(FrontendConfig::default()).unwrap();
    let window = kaiser(400, 6.0);
    let mut rng = 0x1234_5678_u64;
    let mut next = || {
        rng ^= rng << 13;
        rng ^= rng >> 7;
        rng ^= rng << 17;
        rng
    };
    for _ in 0..50 {
        let frame: Vec<i16> = (0..400).map(|_| next() as i16).collect();
        let got = fe.power_spectrum(&frame).unwrap();
        let want = naive_power(&frame, &window, 512);
        let peak = want.iter().cloned().fold(0.0, f64::max);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-6 * w.max(1e-3 * peak), "{g} vs {w}");
        }
    }
}

#[test]
fn five_seconds_is_498_frames() {
    let fe = Frontend::new(FrontendConfig::default()).unwrap();
    let spec = fe.compute_spectrogram(&PcmBuffer::from_samples(vec![100; 80_000])).unwrap();
    assert_eq!((spec.num_channels(), spec.num_frames()), (32, 498));
}

#[test]
fn doubling_amplitude_adds_89_counts() {
    let cfg = FrontendConfig::default().without_gain_stages();
    let fe = Frontend::new(cfg).unwrap();
    let x: Vec<i16> = (0..4000).map(|i| ((i as f64 * 0.0713).sin() * 3000.0 + (i as f64 * 0.31).sin() * 1500.0) as i16).collect();
    let x2: Vec<i16> = x.iter().map(|&v| v * 2).collect();
    let a = fe.compute_spectrogram(&PcmBuffer::from_samples(x)).unwrap();
    let b = fe.compute_spectrogram(&PcmBuffer::from_samples(x2)).unwrap();
    for (fa, fb) in a.frames().zip(b.frames()) {
        for (&va, &vb) in fa.iter().zip(fb) {
            // channels with tiny energy sit in the log's flat region
            if va > 400 {
                assert!((vb as i32 - va as i32 - 89).abs() <= 1, "{va} -> {vb}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frame_count_formula(n in 400usize..200_000) {
        prop_assert_eq!(frame_count(n, 400, 160), (n - 400) / 160 + 1);
    }

    #[test]
    fn streaming_is_bit_identical(seed in any::<u64>(), len in 400usize..6000, chunk in 1usize..900) {
        let pcm = emoedge_core::datapipe::synth::tonal_bursts(len, seed);
        let fe = Frontend::new(FrontendConfig { pcan_enabled: true, ..FrontendConfig::default() }).unwrap();
        let whole = fe.compute_spectrogram(&pcm).unwrap();
        let mut s = fe.stream();
        let mut frames = Vec::new();
        for c in pcm.samples.chunks(chunk) {
            frames.extend(s.push(c).unwrap());
        }
        prop_assert_eq!(frames.len(), whole.num_frames());
        for (a, b) in frames.iter().zip(whole.frames()) {
            prop_assert_eq!(a.as_slice(), b);
        }
    }

    #[test]
    fn noise_reduction_bounds(energies in prop::collection::vec(any::<u32>(), 32), steps in 1usize..6) {
        let cfg = FrontendConfig::default();
        let mut state = NoiseState::new(32);
        for _ in 0..steps {
            let mut e = energies.clone();
            noise_reduce(&mut e, &mut state, &cfg).unwrap();
            for (&out, &inp) in e.iter().zip(&energies) {
                prop_assert!(out <= inp);
                // the floor coefficient is held in Q14
                prop_assert!(out as f64 >= cfg.min_signal_remaining * inp as f64 - inp as f64 / 16384.0 - 1.0);
            }
        }
    }

    #[test]
    fn log_is_monotone_and_close(x in 2u32..u32::MAX) {
        let y = log_compress(x, 6) as f64;
        prop_assert!((y - (64.0 * (x as f64).ln()).round()).abs() <= 1.0);
        prop_assert!(log_compress(x, 6) >= log_compress(x - 1, 6));
    }
}
