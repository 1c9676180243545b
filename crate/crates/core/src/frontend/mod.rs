//! Fixed-point log-mel frontend.
//!
//! The pipeline per 10 ms hop is: 25 ms window, Kaiser (or Hann) taper,
//! 512-point FFT, power spectrum, 32-channel triangular mel filterbank,
//! noise-estimate subtraction, optional per-channel gain and integer log
//! compression. All per-frame arithmetic after the window tables are built
//! is integer, so batch and streaming paths produce identical output.

mod fft;
mod filterbank;
mod log;
mod noise;
mod pcan;
mod streaming;
mod window;

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fft::{fft_f64, FixedFft};
pub use filterbank::MelFilterbank;
pub use log::{log_compress, LOG_LUT};
pub use noise::{noise_reduce, NoiseState};
pub use pcan::pcan_gain;
pub use streaming::StreamingFrontend;
pub use window::{window_f64, WindowKind};

use crate::SAMPLE_RATE_HZ;

/// Fractional bits of the window table applied to INT16 samples.
pub const WINDOW_BITS: u32 = 14;
/// Fractional bits of the noise-reduction smoothing coefficients.
pub const NOISE_COEFF_BITS: u32 = 14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrontendError {
    #[error("signal has {got} samples, need at least {need}")]
    SignalTooShort { got: usize, need: usize },
    #[error("invalid frontend config: {0}")]
    Config(&'static str),
    #[error("noise state has {got} channels, expected {expected}")]
    State { got: usize, expected: usize },
    #[error("sample rate {0} Hz is not supported (16000 Hz only)")]
    SampleRate(u32),
}

/// INT16 mono PCM at 16 kHz.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PcmBuffer {
    pub samples: Vec<i16>,
    pub sample_rate_hz: u32,
}

impl PcmBuffer {
    pub fn new(samples: Vec<i16>, sample_rate_hz: u32) -> Result<Self, FrontendError> {
        if sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(FrontendError::SampleRate(sample_rate_hz));
        }
        Ok(Self { samples, sample_rate_hz })
    }

    /// Wraps samples assumed to be at 16 kHz.
    pub fn from_samples(samples: Vec<i16>) -> Self {
        Self { samples, sample_rate_hz: SAMPLE_RATE_HZ }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendConfig {
    pub sample_rate_hz: u32,
    pub window_ms: u32,
    pub hop_ms: u32,
    pub num_channels: usize,
    pub lower_hz: f64,
    pub upper_hz: f64,
    pub noise_reduction_enabled: bool,
    pub smoothing_bits: u32,
    pub even_smoothing: f64,
    pub odd_smoothing: f64,
    pub min_signal_remaining: f64,
    pub pcan_enabled: bool,
    pub pcan_strength: f64,
    pub pcan_offset: f64,
    pub log_scale_shift: u32,
    pub window_kind: WindowKind,
    pub fft_size: usize,
    /// Right shift applied to filterbank sums to fit channel energies in u32.
    pub energy_shift: u32,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: SAMPLE_RATE_HZ,
            window_ms: 25,
            hop_ms: 10,
            num_channels: 32,
            lower_hz: 80.0,
            upper_hz: 7600.0,
            noise_reduction_enabled: true,
            smoothing_bits: 10,
            even_smoothing: 0.025,
            odd_smoothing: 0.06,
            min_signal_remaining: 0.05,
            pcan_enabled: false,
            pcan_strength: 0.95,
            pcan_offset: 80.0,
            log_scale_shift: 6,
            window_kind: WindowKind::Kaiser { beta: 6.0 },
            fft_size: 512,
            energy_shift: 12,
        }
    }
}

impl FrontendConfig {
    pub fn window_len(&self) -> usize {
        (self.window_ms * self.sample_rate_hz / 1000) as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.hop_ms * self.sample_rate_hz / 1000) as usize
    }

    /// Same pipeline with noise reduction and PCAN switched off.
    pub fn without_gain_stages(mut self) -> Self {
        self.noise_reduction_enabled = false;
        self.pcan_enabled = false;
        self
    }

    pub fn validate(&self) -> Result<(), FrontendError> {
        if self.sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(FrontendError::SampleRate(self.sample_rate_hz));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(FrontendError::Config("fft_size must be a power of two"));
        }
        if self.window_len() == 0 || self.window_len() > self.fft_size {
            return Err(FrontendError::Config("window length must be in 1..=fft_size"));
        }
        if self.hop_len() == 0 {
            return Err(FrontendError::Config("hop must be at least one sample"));
        }
        if self.num_channels == 0 {
            return Err(FrontendError::Config("num_channels must be >= 1"));
        }
        if !(self.lower_hz >= 0.0 && self.lower_hz < self.upper_hz)
            || self.upper_hz > self.sample_rate_hz as f64 / 2.0
        {
            return Err(FrontendError::Config("need 0 <= lower_hz < upper_hz <= sample_rate/2"));
        }
        if !(self.min_signal_remaining > 0.0 && self.min_signal_remaining < 1.0) {
            return Err(FrontendError::Config("min_signal_remaining must be in (0, 1)"));
        }
        for s in [self.even_smoothing, self.odd_smoothing] {
            if !(0.0..=1.0).contains(&s) {
                return Err(FrontendError::Config("smoothing coefficients must be in [0, 1]"));
            }
        }
        if self.smoothing_bits > 16 {
            return Err(FrontendError::Config("smoothing_bits must be <= 16"));
        }
        if self.log_scale_shift > 10 {
            return Err(FrontendError::Config("log_scale_shift must be <= 10"));
        }
        if self.pcan_strength < 0.0 || self.pcan_offset <= 0.0 {
            return Err(FrontendError::Config("pcan_strength >= 0 and pcan_offset > 0 required"));
        }
        if let WindowKind::Kaiser { beta } = self.window_kind {
            if !(beta >= 0.0) {
                return Err(FrontendError::Config("Kaiser beta must be non-negative"));
            }
        }
        Ok(())
    }
}

/// Log-mel matrix, stored frame-major (`frames × channels`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Spectrogram {
    num_channels: usize,
    data: Vec<u16>,
    pub frame_duration_ms: u32,
}

impl Spectrogram {
    pub fn new(num_channels: usize) -> Self {
        Self { num_channels, data: Vec::new(), frame_duration_ms: 10 }
    }

    /// Builds from a channel-major `[channels × frames]` buffer.
    pub fn from_channel_major(num_channels: usize, values: &[u16]) -> Option<Self> {
        if num_channels == 0 || values.len() % num_channels != 0 {
            return None;
        }
        let frames = values.len() / num_channels;
        let mut data = Vec::with_capacity(values.len());
        for f in 0..frames {
            for c in 0..num_channels {
                data.push(values[c * frames + f]);
            }
        }
        Some(Self { num_channels, data, frame_duration_ms: 10 })
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn num_frames(&self) -> usize {
        self.data.len() / self.num_channels
    }

    pub fn push_frame(&mut self, frame: &[u16]) {
        assert_eq!(frame.len(), self.num_channels, "frame width");
        self.data.extend_from_slice(frame);
    }

    pub fn frame(&self, index: usize) -> &[u16] {
        &self.data[index * self.num_channels..(index + 1) * self.num_channels]
    }

    pub fn get(&self, channel: usize, frame: usize) -> u16 {
        self.data[frame * self.num_channels + channel]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[u16]> {
        self.data.chunks_exact(self.num_channels)
    }

    /// Copy of frames `start..start + len`.
    pub fn slice_frames(&self, start: usize, len: usize) -> Spectrogram {
        let c = self.num_channels;
        Spectrogram {
            num_channels: c,
            data: self.data[start * c..(start + len) * c].to_vec(),
            frame_duration_ms: self.frame_duration_ms,
        }
    }

    pub fn clear(&mut self) {
        self.data.clear();
    }

    /// Values as a `[channels × frames]` row-major buffer.
    pub fn to_channel_major(&self) -> Vec<u16> {
        let frames = self.num_frames();
        let mut out = alloc::vec![0u16; self.data.len()];
        for (f, frame) in self.frames().enumerate() {
            for (c, &v) in frame.iter().enumerate() {
                out[c * frames + f] = v;
            }
        }
        out
    }

    /// Mutable access to a single cell, used by masking augmentations.
    pub fn set(&mut self, channel: usize, frame: usize, value: u16) {
        self.data[frame * self.num_channels + channel] = value;
    }

    /// Converts log counts to decibels relative to a full-scale u32 energy,
    /// floored at `db_floor`. Output is channel-major `[channels × frames]`.
    pub fn to_db_features(&self, log_scale_shift: u32, db_floor: f32) -> Vec<f32> {
        let counts_per_neper = (1u32 << log_scale_shift) as f64;
        let db_per_neper = 10.0 / core::f64::consts::LN_10;
        let full_scale_db = 10.0 * libm::log10(u32::MAX as f64);
        self.to_channel_major()
            .into_iter()
            .map(|v| {
                let db = v as f64 / counts_per_neper * db_per_neper - full_scale_db;
                let db = db as f32;
                if db < db_floor {
                    db_floor
                } else {
                    db
                }
            })
            .collect()
    }
}

/// Number of full frames that fit in `num_samples`.
pub fn frame_count(num_samples: usize, window_len: usize, hop_len: usize) -> usize {
    if num_samples < window_len {
        0
    } else {
        (num_samples - window_len) / hop_len + 1
    }
}

/// Splits a buffer into overlapping analysis frames (frame `i` starts at `i·hop`).
pub fn frame_signal<'a>(
    pcm: &'a PcmBuffer,
    cfg: &FrontendConfig,
) -> Result<Vec<&'a [i16]>, FrontendError> {
    cfg.validate()?;
    let win = cfg.window_len();
    let hop = cfg.hop_len();
    if pcm.samples.len() < win {
        return Err(FrontendError::SignalTooShort { got: pcm.samples.len(), need: win });
    }
    Ok((0..frame_count(pcm.samples.len(), win, hop))
        .map(|i| &pcm.samples[i * hop..i * hop + win])
        .collect())
}

/// Precomputed tables for one configuration. Immutable and shareable.
#[derive(Debug, Clone)]
pub struct Frontend {
    cfg: FrontendConfig,
    window: Vec<f64>,
    window_q: Vec<i32>,
    fft: FixedFft,
    filterbank: MelFilterbank,
}

impl Frontend {
    pub fn new(cfg: FrontendConfig) -> Result<Self, FrontendError> {
        cfg.validate()?;
        let window = window_f64(cfg.window_kind, cfg.window_len());
        let scale = (1u32 << WINDOW_BITS) as f64;
        let window_q = window.iter().map(|w| libm::round(w * scale) as i32).collect();
        let fft = FixedFft::new(cfg.fft_size);
        let filterbank = MelFilterbank::new(&cfg);
        Ok(Self { cfg, window, window_q, fft, filterbank })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Floating-point power spectrum `|DFT(w·x)|²`, `fft_size/2 + 1` bins.
    pub fn power_spectrum(&self, frame: &[i16]) -> Result<Vec<f64>, FrontendError> {
        self.check_frame(frame)?;
        let n = self.cfg.fft_size;
        let mut re = alloc::vec![0.0f64; n];
        let mut im = alloc::vec![0.0f64; n];
        for (i, (&s, &w)) in frame.iter().zip(&self.window).enumerate() {
            re[i] = s as f64 * w;
        }
        fft_f64(&mut re, &mut im);
        Ok((0..=n / 2).map(|k| re[k] * re[k] + im[k] * im[k]).collect())
    }

    /// Integer power spectrum on the Q14-windowed frame.
    pub fn power_spectrum_fixed(&self, frame: &[i16]) -> Result<Vec<u64>, FrontendError> {
        self.check_frame(frame)?;
        let n = self.cfg.fft_size;
        let mut re = alloc::vec![0i64; n];
        let mut im = alloc::vec![0i64; n];
        let half = 1i64 << (WINDOW_BITS - 1);
        for (i, (&s, &w)) in frame.iter().zip(&self.window_q).enumerate() {
            re[i] = (s as i64 * w as i64 + half) >> WINDOW_BITS;
        }
        self.fft.forward(&mut re, &mut im);
        Ok((0..=n / 2).map(|k| (re[k] * re[k] + im[k] * im[k]) as u64).collect())
    }

    pub fn mel_filterbank(&self, power: &[u64]) -> Vec<u32> {
        self.filterbank.apply(power, self.cfg.energy_shift)
    }

    /// Runs one frame through every stage, updating `noise`.
    pub fn process_frame(
        &self,
        frame: &[i16],
        noise: &mut NoiseState,
    ) -> Result<Vec<u16>, FrontendError> {
        let power = self.power_spectrum_fixed(frame)?;
        let mut energies = self.mel_filterbank(&power);
        if self.cfg.noise_reduction_enabled {
            noise_reduce(&mut energies, noise, &self.cfg)?;
        }
        if self.cfg.pcan_enabled {
            pcan_gain(&mut energies, noise, &self.cfg)?;
        }
        Ok(energies
            .into_iter()
            .map(|e| log_compress(e, self.cfg.log_scale_shift))
            .collect())
    }

    pub fn new_noise_state(&self) -> NoiseState {
        NoiseState::new(self.cfg.num_channels)
    }

    /// Whole-buffer spectrogram; the noise estimate threads through frames in order.
    pub fn compute_spectrogram(&self, pcm: &PcmBuffer) -> Result<Spectrogram, FrontendError> {
        if pcm.sample_rate_hz != self.cfg.sample_rate_hz {
            return Err(FrontendError::SampleRate(pcm.sample_rate_hz));
        }
        let frames = frame_signal(pcm, &self.cfg)?;
        let mut noise = self.new_noise_state();
        let mut spec = Spectrogram::new(self.cfg.num_channels);
        for frame in frames {
            let values = self.process_frame(frame, &mut noise)?;
            spec.push_frame(&values);
        }
        Ok(spec)
    }

    pub fn stream(&self) -> StreamingFrontend {
        StreamingFrontend::new(self.clone())
    }

    fn check_frame(&self, frame: &[i16]) -> Result<(), FrontendError> {
        if frame.len() != self.cfg.window_len() {
            return Err(FrontendError::SignalTooShort {
                got: frame.len(),
                need: self.cfg.window_len(),
            });
        }
        Ok(())
    }
}

/// Convenience wrapper building a [`Frontend`] for one call.
pub fn compute_spectrogram(
    pcm: &PcmBuffer,
    cfg: &FrontendConfig,
) -> Result<Spectrogram, FrontendError> {
    Frontend::new(cfg.clone())?.compute_spectrogram(pcm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sine(freq: f64, amp: f64, n: usize) -> Vec<i16> {
        (0..n)
            .map(|i| {
                let t = i as f64 / 16000.0;
                libm::round(amp * libm::sin(2.0 * core::f64::consts::PI * freq * t)) as i16
            })
            .collect()
    }

    #[test]
    fn frame_counts() {
        let cfg = FrontendConfig::default();
        for (n, frames) in [(80_000usize, 498usize), (400, 1), (16_000, 98)] {
            let pcm = PcmBuffer::from_samples(vec![0; n]);
            assert_eq!(frame_signal(&pcm, &cfg).unwrap().len(), frames, "n = {n}");
        }
        // enumerate start offsets for the 1 s case
        let starts: Vec<usize> = (0..16_000).step_by(160).filter(|s| s + 400 <= 16_000).collect();
        assert_eq!(starts.len(), 98);
    }

    #[test]
    fn frames_start_at_hop_multiples() {
        let cfg = FrontendConfig::default();
        let pcm = PcmBuffer::from_samples((0..2000).map(|i| i as i16).collect());
        let frames = frame_signal(&pcm, &cfg).unwrap();
        for (i, f) in frames.iter().enumerate() {
            assert_eq!(f[0], (i * 160) as i16);
            assert_eq!(f.len(), 400);
        }
    }

    #[test]
    fn short_signal_rejected() {
        let cfg = FrontendConfig::default();
        let pcm = PcmBuffer::from_samples(vec![0; 399]);
        assert_eq!(
            frame_signal(&pcm, &cfg).unwrap_err(),
            FrontendError::SignalTooShort { got: 399, need: 400 }
        );
        assert!(PcmBuffer::new(vec![0; 10], 8000).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = FrontendConfig::default();
        cfg.fft_size = 500;
        assert!(matches!(Frontend::new(cfg), Err(FrontendError::Config(_))));
        let mut cfg = FrontendConfig::default();
        cfg.fft_size = 256;
        assert!(Frontend::new(cfg).is_err());
        let mut cfg = FrontendConfig::default();
        cfg.upper_hz = 9000.0;
        assert!(Frontend::new(cfg).is_err());
        let mut cfg = FrontendConfig::default();
        cfg.min_signal_remaining = 1.0;
        assert!(Frontend::new(cfg).is_err());
    }

    #[test]
    fn zero_frame_zero_spectrum() {
        let fe = Frontend::new(FrontendConfig::default()).unwrap();
        let p = fe.power_spectrum(&[0; 400]).unwrap();
        assert_eq!(p.len(), 257);
        assert!(p.iter().all(|&x| x == 0.0));
        assert!(fe.power_spectrum_fixed(&[0; 400]).unwrap().iter().all(|&x| x == 0));
    }

    #[test]
    fn sine_peaks_at_bin_32() {
        let fe = Frontend::new(FrontendConfig::default()).unwrap();
        let frame = sine(1000.0, 32767.0, 400);
        let p = fe.power_spectrum(&frame).unwrap();
        let argmax = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        assert_eq!(argmax, 32);
        let pf = fe.power_spectrum_fixed(&frame).unwrap();
        let argmax = (0..pf.len()).max_by_key(|&k| pf[k]).unwrap();
        assert_eq!(argmax, 32);
    }

    #[test]
    fn dc_with_rectangular_window() {
        let mut cfg = FrontendConfig::default();
        cfg.window_kind = WindowKind::Kaiser { beta: 0.0 };
        cfg.fft_size = 512;
        // a 512-sample window makes the rectangular DC frame exactly periodic
        cfg.window_ms = 32;
        let fe = Frontend::new(cfg).unwrap();
        let p = fe.power_spectrum(&[1000; 512]).unwrap();
        assert!(p[0] > 0.0);
        let leak: f64 = p[1..].iter().sum();
        assert!(leak < 1e-12 * p[0], "leak = {leak}");
        let pf = fe.power_spectrum_fixed(&[1000; 512]).unwrap();
        assert_eq!(pf[0], 512_000u64 * 512_000);
        assert!(pf[1..].iter().all(|&x| x == 0));
    }

    #[test]
    fn silence_gives_zero_spectrogram() {
        let fe = Frontend::new(FrontendConfig::default()).unwrap();
        let spec = fe.compute_spectrogram(&PcmBuffer::from_samples(vec![0; 80_000])).unwrap();
        assert_eq!((spec.num_channels(), spec.num_frames()), (32, 498));
        assert!(spec.to_channel_major().iter().all(|&v| v == 0));
    }

    #[test]
    fn channel_major_round_trip() {
        let mut spec = Spectrogram::new(3);
        spec.push_frame(&[1, 2, 3]);
        spec.push_frame(&[4, 5, 6]);
        let cm = spec.to_channel_major();
        assert_eq!(cm, vec![1, 4, 2, 5, 3, 6]);
        assert_eq!(Spectrogram::from_channel_major(3, &cm).unwrap(), spec);
        assert_eq!(spec.get(2, 1), 6);
    }

    #[test]
    fn db_features_are_floored() {
        let mut spec = Spectrogram::new(2);
        spec.push_frame(&[0, 1419]);
        let db = spec.to_db_features(6, -80.0);
        assert_eq!(db[0], -80.0);
        assert!(db[1].abs() < 0.1, "{}", db[1]);
    }
}
