//! Deterministic synthetic audio for tests, calibration and demos.

use alloc::vec;
use core::f64::consts::PI;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::frontend::PcmBuffer;

/// Tone bursts of random pitch, level and length separated by short pauses,
/// over a faint noise floor. Same seed, same samples.
pub fn tonal_bursts(num_samples: usize, seed: u64) -> PcmBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0f64; num_samples];
    let mut pos = 0usize;
    while pos < num_samples {
        let len = rng.gen_range(800..6400usize).min(num_samples - pos);
        if rng.gen_bool(0.75) {
            let tones = rng.gen_range(1..=3);
            let level = 10f64.powf(rng.gen_range(-2.5..-0.6)) * 32767.0;
            for _ in 0..tones {
                let f = rng.gen_range(120.0..4000.0);
                let phase = rng.gen_range(0.0..2.0 * PI);
                let amp = level / tones as f64;
                for i in 0..len {
                    let env = libm::sin(PI * i as f64 / len as f64);
                    out[pos + i] += amp * env * libm::sin(2.0 * PI * f * i as f64 / 16_000.0 + phase);
                }
            }
        }
        pos += len;
    }
    let floor = Normal::new(0.0, rng.gen_range(5.0..60.0)).unwrap();
    let samples = out
        .into_iter()
        .map(|v| libm::round(v + floor.sample(&mut rng)).clamp(i16::MIN as f64, i16::MAX as f64) as i16)
        .collect();
    PcmBuffer::from_samples(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let a = tonal_bursts(16_000, 7);
        assert_eq!(a, tonal_bursts(16_000, 7));
        assert_ne!(a, tonal_bursts(16_000, 8));
        assert_eq!(a.len(), 16_000);
        assert!(a.samples.iter().any(|&s| s.unsigned_abs() > 100));
    }
}
