use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{FrontendConfig, FrontendError, NOISE_COEFF_BITS};

/// Per-channel running noise estimate with `smoothing_bits` fractional bits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseState {
    pub estimates: Vec<u32>,
}

impl NoiseState {
    pub fn new(num_channels: usize) -> Self {
        Self { estimates: alloc::vec![0; num_channels] }
    }

    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    /// Estimate of channel `c` in energy units (fraction dropped).
    pub fn estimate(&self, c: usize, smoothing_bits: u32) -> u32 {
        self.estimates[c] >> smoothing_bits
    }

    pub fn reset(&mut self) {
        self.estimates.iter_mut().for_each(|e| *e = 0);
    }
}

fn coeff_q(x: f64) -> u64 {
    (x * (1u64 << NOISE_COEFF_BITS) as f64) as u64
}

/// Spectral subtraction against a first-order smoothed noise floor.
///
/// Even channels smooth with `even_smoothing`, odd ones with `odd_smoothing`;
/// the output never drops below `min_signal_remaining` of the input.
pub fn noise_reduce(
    energies: &mut [u32],
    state: &mut NoiseState,
    cfg: &FrontendConfig,
) -> Result<(), FrontendError> {
    if state.estimates.len() != energies.len() {
        return Err(FrontendError::State { got: state.estimates.len(), expected: energies.len() });
    }
    let one = 1u64 << NOISE_COEFF_BITS;
    let round = one >> 1;
    let even = coeff_q(cfg.even_smoothing);
    let odd = coeff_q(cfg.odd_smoothing);
    let min_signal = coeff_q(cfg.min_signal_remaining);
    let bits = cfg.smoothing_bits;
    for (c, (e, est)) in energies.iter_mut().zip(state.estimates.iter_mut()).enumerate() {
        let smoothing = if c % 2 == 0 { even } else { odd };
        let scaled = (*e as u64) << bits;
        let updated = (scaled * smoothing + *est as u64 * (one - smoothing) + round) >> NOISE_COEFF_BITS;
        *est = updated.min(u32::MAX as u64) as u32;
        let subtracted = (scaled - updated.min(scaled)) >> bits;
        let floor = (*e as u64 * min_signal + round) >> NOISE_COEFF_BITS;
        *e = subtracted.max(floor) as u32;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    /// Scalar reference: the smoothing recursion written out for one channel.
    fn reference_step(e: u32, est_q10: u32, smoothing: f64) -> (u32, u32) {
        let s = (smoothing * 16384.0) as u64;
        let scaled = (e as u64) << 10;
        let est = (scaled * s + est_q10 as u64 * (16384 - s) + 8192) / 16384;
        let sub = scaled.saturating_sub(est) / 1024;
        let floor = (e as u64 * 819 + 8192) / 16384;
        (sub.max(floor) as u32, est as u32)
    }

    #[test]
    fn single_update_even_channel() {
        let cfg = FrontendConfig::default();
        let mut e = vec![1000u32, 0];
        let mut st = NoiseState::new(2);
        noise_reduce(&mut e, &mut st, &cfg).unwrap();
        assert_eq!(e[0], 975);
        assert_eq!(st.estimate(0, 10), 24);
        // estimate in real units rounds to 25
        assert_eq!(libm::round(st.estimates[0] as f64 / 1024.0), 25.0);
        let (out, est) = reference_step(1000, 0, 0.025);
        assert_eq!((out, est), (e[0], st.estimates[0]));
    }

    #[test]
    fn zero_input_decays_estimates() {
        let cfg = FrontendConfig::default();
        let mut st = NoiseState { estimates: vec![50_000; 4] };
        let mut last = st.estimates.clone();
        for _ in 0..50 {
            let mut e = vec![0u32; 4];
            noise_reduce(&mut e, &mut st, &cfg).unwrap();
            assert!(e.iter().all(|&x| x == 0));
            assert!(st.estimates.iter().zip(&last).all(|(a, b)| a <= b));
            last = st.estimates.clone();
        }
        assert!(st.estimates[0] < 50_000 && st.estimates[1] < st.estimates[0]);
    }

    #[test]
    fn stationary_input_converges_to_floor() {
        let cfg = FrontendConfig::default();
        let mut st = NoiseState::new(2);
        let (mut r_est0, mut r_est1) = (0u32, 0u32);
        let mut out = vec![0u32; 2];
        for _ in 0..2000 {
            out = vec![1000, 1000];
            noise_reduce(&mut out, &mut st, &cfg).unwrap();
            let (o0, e0) = reference_step(1000, r_est0, 0.025);
            let (o1, e1) = reference_step(1000, r_est1, 0.06);
            r_est0 = e0;
            r_est1 = e1;
            assert_eq!(out, vec![o0, o1]);
        }
        assert_eq!(out, vec![50, 50]);
    }

    #[test]
    fn mismatched_state_is_an_error() {
        let cfg = FrontendConfig::default();
        let mut st = NoiseState::new(3);
        assert_eq!(
            noise_reduce(&mut [1, 2], &mut st, &cfg),
            Err(FrontendError::State { got: 3, expected: 2 })
        );
    }
}
