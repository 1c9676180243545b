use alloc::vec::Vec;

use super::FrontendConfig;

/// Fractional bits of the quantised triangle weights.
pub const FILTER_WEIGHT_BITS: u32 = 12;

pub fn hz_to_mel(hz: f64) -> f64 {
    1127.0 * libm::log(1.0 + hz / 700.0)
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (libm::exp(mel / 1127.0) - 1.0)
}

#[derive(Debug, Clone)]
struct Channel {
    start_bin: usize,
    weights: Vec<f64>,
    weights_q: Vec<u32>,
}

/// Triangular filters with centres equally spaced on the mel scale.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    channels: Vec<Channel>,
    /// Edge frequencies: `num_channels + 2` points from `lower_hz` to `upper_hz`.
    edges_hz: Vec<f64>,
    bin_hz: f64,
}

impl MelFilterbank {
    pub fn new(cfg: &FrontendConfig) -> Self {
        let n = cfg.num_channels;
        let lo = hz_to_mel(cfg.lower_hz);
        let hi = hz_to_mel(cfg.upper_hz);
        let step = (hi - lo) / (n + 1) as f64;
        let edges_hz: Vec<f64> = (0..n + 2).map(|i| mel_to_hz(lo + step * i as f64)).collect();
        let bin_hz = cfg.sample_rate_hz as f64 / cfg.fft_size as f64;
        let num_bins = cfg.fft_size / 2 + 1;
        let scale = (1u32 << FILTER_WEIGHT_BITS) as f64;
        let channels = (0..n)
            .map(|c| {
                let (left, centre, right) = (edges_hz[c], edges_hz[c + 1], edges_hz[c + 2]);
                let mut start_bin = None;
                let mut weights = Vec::new();
                for k in 0..num_bins {
                    let f = k as f64 * bin_hz;
                    let w = if f > left && f <= centre {
                        (f - left) / (centre - left)
                    } else if f > centre && f < right {
                        (right - f) / (right - centre)
                    } else {
                        0.0
                    };
                    if w > 0.0 {
                        start_bin.get_or_insert(k);
                        weights.push(w);
                    } else if start_bin.is_some() {
                        break;
                    }
                }
                let weights_q = weights.iter().map(|w| libm::round(w * scale) as u32).collect();
                Channel { start_bin: start_bin.unwrap_or(0), weights, weights_q }
            })
            .collect();
        Self { channels, edges_hz, bin_hz }
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Centre frequency of channel `c` in Hz.
    pub fn centre_hz(&self, c: usize) -> f64 {
        self.edges_hz[c + 1]
    }

    /// FFT bin closest to the centre of channel `c`.
    pub fn centre_bin(&self, c: usize) -> usize {
        libm::round(self.centre_hz(c) / self.bin_hz) as usize
    }

    pub fn edges_hz(&self) -> &[f64] {
        &self.edges_hz
    }

    /// Real-valued weight of bin `k` in channel `c`.
    pub fn weight(&self, c: usize, k: usize) -> f64 {
        let ch = &self.channels[c];
        if k < ch.start_bin {
            return 0.0;
        }
        ch.weights.get(k - ch.start_bin).copied().unwrap_or(0.0)
    }

    /// Sum of the quantised weights of channel `c`, in Q12.
    pub fn weight_sum_q(&self, c: usize) -> u64 {
        self.channels[c].weights_q.iter().map(|&w| w as u64).sum()
    }

    /// Weighted sums `(Σ w_q·P) >> (12 + energy_shift)`, rounded and saturated to u32.
    pub fn apply(&self, power: &[u64], energy_shift: u32) -> Vec<u32> {
        let shift = FILTER_WEIGHT_BITS + energy_shift;
        let round = 1u128 << (shift - 1);
        self.channels
            .iter()
            .map(|ch| {
                let acc: u128 = ch
                    .weights_q
                    .iter()
                    .zip(&power[ch.start_bin..])
                    .map(|(&w, &p)| w as u128 * p as u128)
                    .sum();
                let e = (acc + round) >> shift;
                e.min(u32::MAX as u128) as u32
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn bank() -> MelFilterbank {
        MelFilterbank::new(&FrontendConfig::default())
    }

    #[test]
    fn mel_round_trip() {
        for hz in [0.0, 80.0, 1000.0, 7600.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn edges_span_configured_band() {
        let b = bank();
        assert_eq!(b.num_channels(), 32);
        assert!((b.edges_hz()[0] - 80.0).abs() < 1e-9);
        assert!((b.edges_hz()[33] - 7600.0).abs() < 1e-6);
        let mels: Vec<f64> = b.edges_hz().iter().map(|&f| hz_to_mel(f)).collect();
        let step = mels[1] - mels[0];
        for w in mels.windows(2) {
            assert!((w[1] - w[0] - step).abs() < 1e-9);
        }
    }

    #[test]
    fn every_channel_has_support() {
        let b = bank();
        for c in 0..32 {
            assert!(b.weight_sum_q(c) > 0, "channel {c} empty");
        }
    }

    #[test]
    fn zero_spectrum_zero_energy() {
        assert!(bank().apply(&vec![0; 257], 12).iter().all(|&e| e == 0));
    }

    #[test]
    fn impulse_at_centre_peaks_in_own_channel() {
        let b = bank();
        for c in 0..32 {
            let mut p = vec![0u64; 257];
            p[b.centre_bin(c)] = 1 << 40;
            let e = b.apply(&p, 12);
            let best = (0..32).max_by_key(|&i| (e[i], core::cmp::Reverse(i))).unwrap();
            assert_eq!(best, c, "channel {c}: {e:?}");
        }
    }

    #[test]
    fn white_spectrum_gives_weight_sums() {
        // Independent weight sums straight from the triangle definition.
        let cfg = FrontendConfig::default();
        let lo = 1127.0 * libm::log(1.0 + 80.0 / 700.0);
        let hi = 1127.0 * libm::log(1.0 + 7600.0 / 700.0);
        let edge = |i: usize| 700.0 * (libm::exp((lo + (hi - lo) * i as f64 / 33.0) / 1127.0) - 1.0);
        let b = bank();
        // With P = 2^24 and shift 12 the output is the Q12 weight sum.
        let e = b.apply(&vec![1u64 << 24; 257], 12);
        for c in 0..cfg.num_channels {
            let (l, m, r) = (edge(c), edge(c + 1), edge(c + 2));
            let mut sum = 0.0;
            let mut bins = 0;
            for k in 0..257 {
                let f = k as f64 * 31.25;
                let w = if f > l && f <= m {
                    (f - l) / (m - l)
                } else if f > m && f < r {
                    (r - f) / (r - m)
                } else {
                    0.0
                };
                if w > 0.0 {
                    bins += 1;
                }
                sum += w;
            }
            let expected = sum * 4096.0;
            let tol = 0.5 * bins as f64 + 1.0;
            assert!((e[c] as f64 - expected).abs() <= tol, "channel {c}: {} vs {expected}", e[c]);
            assert_eq!(e[c] as u64, b.weight_sum_q(c));
        }
    }
}
